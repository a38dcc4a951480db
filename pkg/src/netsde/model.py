"""Model specification for networked diffusions.

A model couples a drift family with a diagonal diffusion family on a
directed graph.  Coordinate i of the drift is

    b_i(x) = own_term(x_i) + sum over parents j of i of edge_term(x_i, x_j),

and the diffusion is diagonal, sigma_i(x_i).  Two drift families are
provided: Linear (mean reversion plus linear network effects) and
RadialDictionary (network effects modulated by radial basis functions of
the state norm).  In augmented form the Linear family replaces per-edge
coefficients by a dense set of pair weights w_ij, one per ordered pair,
so that the graph itself becomes an unknown.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import DirectedGraph, complete_graph


class ModelError(ValueError):
    """Base class for model specification and evaluation errors."""


class LayoutMismatchError(ModelError):
    pass


class NonFiniteStateError(ModelError):
    pass


class NegativeAlphaError(ModelError):
    pass


# ---------------------------------------------------------------------------
# families


@dataclass(frozen=True)
class LinearDrift:
    """b_i(x) = -mu_i x_i + sum_j beta_ij x_j, optionally plus an intercept."""

    with_intercepts: bool = False


@dataclass(frozen=True)
class RadialDictionaryDrift:
    """Network effects expanded over radial basis functions of |x|.

    b_i(x) = -beta0_i x_i
             + sum_l sum_j beta_l_ij x_j (offsets[l] + |x|)^(-(exponents[l] + 1))

    offsets must be positive; exponents strictly increasing within [-1, 1].
    """

    offsets: tuple[float, ...]
    exponents: tuple[float, ...]

    def __post_init__(self):
        if len(self.offsets) != len(self.exponents):
            raise ModelError("offsets and exponents must have equal length")
        if len(self.offsets) == 0:
            raise ModelError("dictionary needs at least one level")
        if any(a <= 0 for a in self.offsets):
            raise ModelError("offsets must be positive")
        q = self.exponents
        if any(not -1.0 <= x <= 1.0 for x in q):
            raise ModelError("exponents must lie in [-1, 1]")
        if any(q[k] >= q[k + 1] for k in range(len(q) - 1)):
            raise ModelError("exponents must be strictly increasing")

    @property
    def n_levels(self) -> int:
        return len(self.offsets)


@dataclass(frozen=True)
class ConstantDiagonal:
    """sigma_i(x) = alpha_i."""


@dataclass(frozen=True)
class TanhClipped:
    """sigma_i(x) = alpha_i * clip * tanh(sqrt(1 + x_i^2) / clip).

    Bounded, strictly positive, and close to alpha_i * sqrt(1 + x_i^2) for
    states small relative to the clip level.
    """

    clip: float = 100.0

    def __post_init__(self):
        if self.clip <= 0:
            raise ModelError("clip level must be positive")


@dataclass(frozen=True)
class NsdeSpec:
    """Dimension, drift family and diffusion family of a networked diffusion."""

    d: int
    drift: LinearDrift | RadialDictionaryDrift
    diffusion: ConstantDiagonal | TanhClipped

    def __post_init__(self):
        if self.d < 1:
            raise ModelError(f"dimension must be positive, got {self.d}")


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class ParamVector:
    """Parameter blocks: diffusion scales alpha, drift block beta, pair weights w.

    beta stacks the momentum coefficients (one per node), intercepts when
    enabled, and per-edge network coefficients.  w is only present in
    augmented form and holds one weight per ordered node pair.
    """

    alpha: np.ndarray
    beta: np.ndarray
    w: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float))
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))
        if self.w is not None:
            object.__setattr__(self, "w", np.asarray(self.w, dtype=float))
        if np.any(self.alpha < 0):
            raise NegativeAlphaError("diffusion scales must be non-negative")

    def flat(self) -> np.ndarray:
        parts = [self.alpha, self.beta]
        if self.w is not None:
            parts.append(self.w)
        return np.concatenate(parts)


def pair_index(i: int, j: int, d: int) -> int:
    """Slot of ordered pair (i, j), i != j, in the canonical row-major order."""
    if i == j:
        raise LayoutMismatchError("pair weights exclude the diagonal")
    return i * (d - 1) + (j if j < i else j - 1)


@dataclass(frozen=True)
class ParamLayout:
    """Flat indexing of a model's parameter vector.

    Flat order is [alpha | momentum | intercepts? | network], where the
    network block holds per-edge coefficients (one group per dictionary
    level for the radial family) or, in augmented form, one weight per
    ordered node pair.
    """

    d: int
    edges: tuple[tuple[int, int], ...]
    augmented: bool
    with_intercepts: bool
    n_levels: int  # 0 for the linear family
    pi_alpha: int
    pi_beta: int
    pi_total: int
    coord_names: tuple[str, ...] = field(repr=False)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def pi_w(self) -> int:
        return self.d * (self.d - 1) if self.augmented else 0

    @property
    def K_ratio(self) -> float:
        """Parameter count relative to graph size d + |E|."""
        return self.pi_total / (self.d + len(self.edges))

    def epsilon_ratio(self, n: int, delta: float) -> float:
        """Graph size d + |E| relative to the observation horizon n * delta."""
        return (self.d + len(self.edges)) / (n * delta)

    # --- slot maps ---

    def alpha_slot(self, i: int) -> int:
        return i

    def momentum_slot(self, i: int) -> int:
        return self.pi_alpha + i

    def intercept_slot(self, i: int) -> int:
        if not self.with_intercepts:
            raise LayoutMismatchError("layout has no intercepts")
        return self.pi_alpha + self.d + i

    def edge_slot(self, i: int, j: int, level: int = 0) -> int:
        """Flat slot of the network coefficient on edge (i, j)."""
        if self.augmented:
            return self.pi_alpha + self.pi_beta + pair_index(i, j, self.d)
        base = self.pi_alpha + self.d + (self.d if self.with_intercepts else 0)
        try:
            rank = self.edges.index((i, j))
        except ValueError:
            raise LayoutMismatchError(f"({i}, {j}) is not an edge") from None
        if not 0 <= level < max(self.n_levels, 1):
            raise LayoutMismatchError(f"level {level} out of range")
        return base + level * len(self.edges) + rank

    @property
    def alpha_indices(self) -> np.ndarray:
        return np.arange(self.pi_alpha)

    @property
    def momentum_indices(self) -> np.ndarray:
        return self.pi_alpha + np.arange(self.d)

    @property
    def intercept_indices(self) -> np.ndarray:
        if not self.with_intercepts:
            return np.arange(0)
        return self.pi_alpha + self.d + np.arange(self.d)

    @property
    def network_indices(self) -> np.ndarray:
        """Flat indices of per-edge coefficients (empty in augmented form)."""
        if self.augmented:
            return np.arange(0)
        base = self.pi_alpha + self.d + (self.d if self.with_intercepts else 0)
        return base + np.arange(max(self.n_levels, 1) * len(self.edges))

    @property
    def w_indices(self) -> np.ndarray:
        if not self.augmented:
            return np.arange(0)
        return self.pi_alpha + self.pi_beta + np.arange(self.pi_w)

    # --- conversions ---

    def flatten(self, theta: ParamVector) -> np.ndarray:
        flat = theta.flat()
        if flat.shape[0] != self.pi_total:
            raise LayoutMismatchError(
                f"parameter vector has {flat.shape[0]} entries, layout expects {self.pi_total}")
        if (theta.w is None) == self.augmented:
            raise LayoutMismatchError("pair-weight block does not match layout")
        return flat

    def unflatten(self, flat: np.ndarray) -> ParamVector:
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.pi_total,):
            raise LayoutMismatchError(
                f"flat vector has shape {flat.shape}, layout expects ({self.pi_total},)")
        alpha = flat[:self.pi_alpha]
        beta = flat[self.pi_alpha:self.pi_alpha + self.pi_beta]
        w = flat[self.pi_alpha + self.pi_beta:] if self.augmented else None
        return ParamVector(alpha=alpha, beta=beta, w=w)

    def pack(self, alpha, momentum, network=None, intercepts=None, w=None) -> ParamVector:
        """Assemble a ParamVector from named blocks."""
        alpha = np.asarray(alpha, dtype=float)
        momentum = np.asarray(momentum, dtype=float)
        parts = [momentum]
        if self.with_intercepts:
            if intercepts is None:
                intercepts = np.zeros(self.d)
            parts.append(np.asarray(intercepts, dtype=float))
        elif intercepts is not None:
            raise LayoutMismatchError("layout has no intercepts")
        if self.augmented:
            if network is not None:
                raise LayoutMismatchError("augmented layout takes w, not network")
            w_arr = np.zeros(self.pi_w) if w is None else np.asarray(w, dtype=float)
            beta = np.concatenate(parts)
            theta = ParamVector(alpha=alpha, beta=beta, w=w_arr)
        else:
            if w is not None:
                raise LayoutMismatchError("layout has no pair-weight block")
            n_net = max(self.n_levels, 1) * len(self.edges)
            net = np.zeros(n_net) if network is None else np.asarray(network, dtype=float)
            parts.append(net)
            theta = ParamVector(alpha=alpha, beta=np.concatenate(parts), w=None)
        self.flatten(theta)  # length check
        return theta

    def momentum(self, theta: ParamVector) -> np.ndarray:
        return theta.beta[:self.d]

    def intercepts(self, theta: ParamVector) -> np.ndarray:
        if not self.with_intercepts:
            return np.zeros(self.d)
        return theta.beta[self.d:2 * self.d]

    def network(self, theta: ParamVector) -> np.ndarray:
        if self.augmented:
            return theta.w
        off = self.d + (self.d if self.with_intercepts else 0)
        return theta.beta[off:]


def parameter_layout(spec: NsdeSpec, g: DirectedGraph, augmented: bool = False) -> ParamLayout:
    """Build the flat parameter layout for a model on a given graph.

    In augmented form the per-edge coefficients are replaced by d*(d-1)
    ordered-pair weights; only the linear family supports this.
    """
    if g.d != spec.d:
        raise LayoutMismatchError(f"graph has {g.d} nodes, model has {spec.d}")
    d = spec.d
    linear = isinstance(spec.drift, LinearDrift)
    if augmented and not linear:
        raise LayoutMismatchError("pair-weight form requires the linear drift family")
    with_intercepts = linear and spec.drift.with_intercepts
    n_levels = 0 if linear else spec.drift.n_levels
    pi_alpha = d
    names = [f"alpha_{i}" for i in range(d)]
    names += [f"mu_{i}" for i in range(d)]
    if with_intercepts:
        names += [f"intercept_{i}" for i in range(d)]
    pi_beta = d + (d if with_intercepts else 0)
    if augmented:
        names += [f"w_{i}_{j}" for i in range(d) for j in range(d) if j != i]
        pi_total = pi_alpha + pi_beta + d * (d - 1)
    else:
        if linear:
            names += [f"beta_{i}_{j}" for i, j in g.edges]
            pi_beta += len(g.edges)
        else:
            for lev in range(n_levels):
                names += [f"beta{lev}_{i}_{j}" for i, j in g.edges]
            pi_beta += n_levels * len(g.edges)
        pi_total = pi_alpha + pi_beta
    return ParamLayout(d=d, edges=g.edges, augmented=augmented,
                       with_intercepts=with_intercepts, n_levels=n_levels,
                       pi_alpha=pi_alpha, pi_beta=pi_beta, pi_total=pi_total,
                       coord_names=tuple(names))


# ---------------------------------------------------------------------------
# evaluation


def _check_state(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (d,):
        raise LayoutMismatchError(f"state has shape {x.shape}, expected ({d},)")
    if not np.all(np.isfinite(x)):
        raise NonFiniteStateError("state contains non-finite entries")
    return x


def drift_eval(spec: NsdeSpec, g: DirectedGraph, theta: ParamVector, x) -> np.ndarray:
    """Evaluate the drift vector b(x) at a single state.

    Accumulates own terms and per-edge terms directly; batch evaluation for
    paths goes through path_drift_fn.
    """
    layout = parameter_layout(spec, g, augmented=theta.w is not None)
    x = _check_state(x, spec.d)
    mu = layout.momentum(theta)
    out = -mu * x
    if layout.with_intercepts:
        out = out + layout.intercepts(theta)
    if isinstance(spec.drift, LinearDrift):
        if layout.augmented:
            for i in range(spec.d):
                for j in range(spec.d):
                    if j != i:
                        out[i] += theta.w[pair_index(i, j, spec.d)] * x[j]
        else:
            net = layout.network(theta)
            for rank, (i, j) in enumerate(g.edges):
                out[i] += net[rank] * x[j]
    else:
        net = layout.network(theta)
        nrm = float(np.linalg.norm(x))
        for lev in range(spec.drift.n_levels):
            scale = (spec.drift.offsets[lev] + nrm) ** (-(spec.drift.exponents[lev] + 1.0))
            for rank, (i, j) in enumerate(g.edges):
                out[i] += net[lev * len(g.edges) + rank] * x[j] * scale
    return out


def diffusion_shape(spec: NsdeSpec, x: np.ndarray) -> np.ndarray:
    """State factor s(x) of the diffusion, so that sigma_i = alpha_i * s(x_i).

    Operates elementwise on arrays of shape (..., d).
    """
    if isinstance(spec.diffusion, ConstantDiagonal):
        return np.ones_like(np.asarray(x, dtype=float))
    c = spec.diffusion.clip
    x = np.asarray(x, dtype=float)
    return c * np.tanh(np.sqrt(1.0 + x * x) / c)


def diffusion_eval(spec: NsdeSpec, alpha, x) -> np.ndarray:
    """Evaluate the diagonal diffusion sigma(x) at a single state."""
    alpha = np.asarray(alpha, dtype=float)
    x = _check_state(x, spec.d)
    if alpha.shape != (spec.d,):
        raise LayoutMismatchError(
            f"alpha has shape {alpha.shape}, expected ({spec.d},)")
    if np.any(alpha < 0):
        raise NegativeAlphaError("diffusion scales must be non-negative")
    return alpha * diffusion_shape(spec, x)


def linear_drift_matrix(spec: NsdeSpec, g: DirectedGraph, theta: ParamVector):
    """(M, b0) with b(x) = M x + b0 for the linear family."""
    if not isinstance(spec.drift, LinearDrift):
        raise ModelError("drift matrix only exists for the linear family")
    layout = parameter_layout(spec, g, augmented=theta.w is not None)
    m = -np.diag(layout.momentum(theta))
    if layout.augmented:
        for i in range(spec.d):
            for j in range(spec.d):
                if j != i:
                    m[i, j] += theta.w[pair_index(i, j, spec.d)]
    else:
        net = layout.network(theta)
        for rank, (i, j) in enumerate(g.edges):
            m[i, j] += net[rank]
    b0 = layout.intercepts(theta) if layout.with_intercepts else np.zeros(spec.d)
    return m, b0


def path_drift_fn(spec: NsdeSpec, g: DirectedGraph, theta: ParamVector):
    """Return a callable evaluating the drift on arrays of shape (..., d)."""
    if isinstance(spec.drift, LinearDrift):
        m, b0 = linear_drift_matrix(spec, g, theta)
        mt = m.T.copy()

        def drift(x):
            return x @ mt + b0

        return drift

    layout = parameter_layout(spec, g, augmented=False)
    net = layout.network(theta)
    mu = layout.momentum(theta)
    n_e = len(g.edges)
    weights = []
    for lev in range(spec.drift.n_levels):
        wmat = np.zeros((spec.d, spec.d))
        for rank, (i, j) in enumerate(g.edges):
            wmat[i, j] = net[lev * n_e + rank]
        weights.append(wmat.T.copy())
    offsets = np.asarray(spec.drift.offsets, dtype=float)
    exponents = np.asarray(spec.drift.exponents, dtype=float)

    def drift(x):
        nrm = np.linalg.norm(x, axis=-1, keepdims=True)
        out = -mu * x
        for lev in range(len(weights)):
            scale = (offsets[lev] + nrm) ** (-(exponents[lev] + 1.0))
            out = out + (x @ weights[lev]) * scale
        return out

    return drift


def path_diffusion_fn(spec: NsdeSpec, theta: ParamVector):
    """Return a callable evaluating sigma on arrays of shape (..., d)."""
    alpha = theta.alpha

    def diffusion(x):
        return alpha * diffusion_shape(spec, x)

    return diffusion


# ---------------------------------------------------------------------------
# box bounds


DEFAULT_SIGNED_BOUND = 1e3
DEFAULT_ALPHA_BOUND = 1e3


def default_bounds(layout: ParamLayout, signed_bound: float = DEFAULT_SIGNED_BOUND,
                   alpha_bound: float = DEFAULT_ALPHA_BOUND):
    """(lo, hi) box arrays: [0, alpha_bound] for alpha, symmetric elsewhere."""
    lo = np.full(layout.pi_total, -signed_bound)
    hi = np.full(layout.pi_total, signed_bound)
    lo[:layout.pi_alpha] = 0.0
    hi[:layout.pi_alpha] = alpha_bound
    return lo, hi


# ---------------------------------------------------------------------------
# config round trip


def spec_to_config(spec: NsdeSpec) -> dict:
    if isinstance(spec.drift, LinearDrift):
        drift = {"family": "linear", "with_intercepts": spec.drift.with_intercepts}
    else:
        drift = {"family": "radial_dictionary",
                 "offsets": list(spec.drift.offsets),
                 "exponents": list(spec.drift.exponents)}
    if isinstance(spec.diffusion, ConstantDiagonal):
        diffusion = {"family": "constant_diagonal"}
    else:
        diffusion = {"family": "tanh_clipped", "clip": spec.diffusion.clip}
    return {"d": spec.d, "drift": drift, "diffusion": diffusion}


def spec_from_config(cfg: dict) -> NsdeSpec:
    drift_cfg = cfg["drift"]
    fam = drift_cfg["family"]
    if fam == "linear":
        drift = LinearDrift(with_intercepts=bool(drift_cfg.get("with_intercepts", False)))
    elif fam == "radial_dictionary":
        drift = RadialDictionaryDrift(offsets=tuple(drift_cfg["offsets"]),
                                      exponents=tuple(drift_cfg["exponents"]))
    else:
        raise ModelError(f"unknown drift family {fam!r}")
    diff_cfg = cfg["diffusion"]
    fam = diff_cfg["family"]
    if fam == "constant_diagonal":
        diffusion = ConstantDiagonal()
    elif fam == "tanh_clipped":
        diffusion = TanhClipped(clip=float(diff_cfg.get("clip", 100.0)))
    else:
        raise ModelError(f"unknown diffusion family {fam!r}")
    return NsdeSpec(d=int(cfg["d"]), drift=drift, diffusion=diffusion)


def params_to_config(theta: ParamVector) -> dict:
    cfg = {"alpha": theta.alpha.tolist(), "beta": theta.beta.tolist()}
    if theta.w is not None:
        cfg["w"] = theta.w.tolist()
    return cfg


def params_from_config(cfg: dict, layout: ParamLayout | None = None) -> ParamVector:
    theta = ParamVector(alpha=np.asarray(cfg["alpha"], dtype=float),
                        beta=np.asarray(cfg["beta"], dtype=float),
                        w=np.asarray(cfg["w"], dtype=float) if "w" in cfg else None)
    if layout is not None:
        layout.flatten(theta)  # validates block sizes
    return theta
