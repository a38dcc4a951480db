"""Quasi-likelihood estimation from discretely observed paths.

The Euler local-Gaussian contrast for a diagonal diffusion is

    sum_i sum_j [ (dX_ij - delta * b_j(X_{i-1}))^2 / (2 delta sigma_j(X_{i-1})^2)
                  + log(sigma_j(X_{i-1})^2) / 2 ],

minimized either jointly or in two stages: the diffusion scales first
(pure-increment contrast), then the drift coefficients with the scales
frozen.  Both drift families are linear in their drift parameters, which
gives closed-form per-node generalized least squares for the linear
family, analytic gradients for the iterative fits, and an analytic
observed-information matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize

from .graph import DirectedGraph, complete_graph
from .model import (LinearDrift, NsdeSpec, ParamLayout, ParamVector,
                    default_bounds, diffusion_shape, parameter_layout,
                    path_drift_fn)
from .simulate import SamplePath


class EstimationError(RuntimeError):
    pass


class DegenerateDiffusionError(EstimationError):
    pass


class SingularGramError(EstimationError):
    def __init__(self, message: str, node: int, cond: float):
        super().__init__(message)
        self.node = node
        self.cond = cond


class BoundsViolationError(ValueError):
    pass


class InsufficientDataError(EstimationError):
    pass


_COND_LIMIT = 1e14
_ALPHA_FLOOR = 1e-8


# ---------------------------------------------------------------------------
# contrasts


def _increments(path: SamplePath):
    if path.n < 1:
        raise InsufficientDataError("need at least two rows to form increments")
    x0 = path.data[:-1]
    dx = np.diff(path.data, axis=0)
    return x0, dx


def quasi_loglik(path: SamplePath, spec: NsdeSpec, g: DirectedGraph,
                 theta: ParamVector) -> float:
    """Euler contrast value; lower is better."""
    x0, dx = _increments(path)
    drift = path_drift_fn(spec, g, theta)(x0)
    sig = theta.alpha * diffusion_shape(spec, x0)
    if np.any(sig <= 0):
        raise DegenerateDiffusionError("diffusion must be strictly positive")
    r = dx - path.delta * drift
    var = sig * sig
    return float(np.sum(r * r / (2.0 * path.delta * var)) +
                 0.5 * np.sum(np.log(var)))


def diffusion_contrast(path: SamplePath, spec: NsdeSpec, alpha) -> float:
    """Stage-one contrast: increments against a pure-diffusion model."""
    x0, dx = _increments(path)
    alpha = np.asarray(alpha, dtype=float)
    sig = alpha * diffusion_shape(spec, x0)
    if np.any(sig <= 0):
        raise DegenerateDiffusionError("diffusion must be strictly positive")
    var = sig * sig
    return float(np.sum(dx * dx / (path.delta * var)) + np.sum(np.log(var)))


def drift_contrast(path: SamplePath, spec: NsdeSpec, g: DirectedGraph,
                   theta: ParamVector) -> float:
    """Stage-two contrast: weighted squared drift residuals with sigma frozen."""
    x0, dx = _increments(path)
    drift = path_drift_fn(spec, g, theta)(x0)
    sig = theta.alpha * diffusion_shape(spec, x0)
    if np.any(sig <= 0):
        raise DegenerateDiffusionError("diffusion must be strictly positive")
    r = dx - path.delta * drift
    return float(np.sum(r * r / (path.delta * sig * sig)))


def sigma_path(path: SamplePath, spec: NsdeSpec, alpha) -> np.ndarray:
    """sigma evaluated at the left endpoint of every increment, shape (n, d)."""
    alpha = np.asarray(alpha, dtype=float)
    return alpha * diffusion_shape(spec, path.data[:-1])


def fit_diffusion_scale(path: SamplePath, spec: NsdeSpec,
                        lo: float = 0.0, hi: float = 1e3) -> np.ndarray:
    """Exact minimizer of the stage-one contrast for multiplicative diffusions.

    With sigma_j = alpha_j * s(x_j), the contrast is minimized coordinate-wise
    at alpha_j^2 = mean_i dX_ij^2 / (delta * s_ij^2); the result is clipped to
    [lo, hi].
    """
    x0, dx = _increments(path)
    s = diffusion_shape(spec, x0)
    alpha = np.sqrt(np.mean(dx * dx / (s * s), axis=0) / path.delta)
    return np.clip(alpha, lo, hi)


# ---------------------------------------------------------------------------
# per-node designs (drift is linear in its parameters for both families)


def node_designs(spec: NsdeSpec, g: DirectedGraph, layout: ParamLayout,
                 x0_rows: np.ndarray):
    """Per-node regressor matrices: b_j(x) = R_j @ theta_flat[slots_j].

    Returns a list of (R_j, slots_j) with R_j of shape (n, q_j).
    """
    d = layout.d
    n = x0_rows.shape[0]
    designs = []
    if isinstance(spec.drift, LinearDrift):
        for j in range(d):
            cols = [-x0_rows[:, j]]
            slots = [layout.momentum_slot(j)]
            if layout.with_intercepts:
                cols.append(np.ones(n))
                slots.append(layout.intercept_slot(j))
            if layout.augmented:
                partners = [k for k in range(d) if k != j]
            else:
                partners = list(g.parents(j))
            for k in partners:
                cols.append(x0_rows[:, k])
                slots.append(layout.edge_slot(j, k))
            designs.append((np.column_stack(cols), np.asarray(slots, dtype=int)))
        return designs
    nrm = np.linalg.norm(x0_rows, axis=1)
    scales = [(off + nrm) ** (-(q + 1.0))
              for off, q in zip(spec.drift.offsets, spec.drift.exponents)]
    for j in range(d):
        cols = [-x0_rows[:, j]]
        slots = [layout.momentum_slot(j)]
        for lev in range(spec.drift.n_levels):
            for k in g.parents(j):
                cols.append(x0_rows[:, k] * scales[lev])
                slots.append(layout.edge_slot(j, k, level=lev))
        designs.append((np.column_stack(cols), np.asarray(slots, dtype=int)))
    return designs


# ---------------------------------------------------------------------------
# closed-form per-node generalized least squares (linear drift)


@dataclass
class LinearClosedFormFit:
    """Per-node regression output of the closed-form drift estimator.

    Node j regresses its increments on the states of {j} + parents(j)
    (columns in ascending node order, intercept column last when enabled).
    The own-column coefficient is the negated momentum, -mu_j.
    """

    delta: float
    columns: list[list[int]]
    coef: list[np.ndarray]
    gram: list[np.ndarray]
    cond: np.ndarray
    jittered: list[bool]
    intercepts: bool

    def to_params(self, layout: ParamLayout, alpha) -> ParamVector:
        """Map the per-node coefficients into a flat parameter vector."""
        flat = np.zeros(layout.pi_total)
        flat[:layout.pi_alpha] = np.asarray(alpha, dtype=float)
        for j, cols in enumerate(self.columns):
            coefs = self.coef[j]
            for pos, k in enumerate(cols):
                if k == j:
                    flat[layout.momentum_slot(j)] = -coefs[pos]
                else:
                    flat[layout.edge_slot(j, k)] = coefs[pos]
            if self.intercepts:
                flat[layout.intercept_slot(j)] = coefs[-1]
        return layout.unflatten(flat)


def fit_linear_closed_form(path: SamplePath, g: DirectedGraph,
                           sigma_hat, intercepts: bool = False) -> LinearClosedFormFit:
    """Per-node weighted least squares for the linear drift family.

    For node j with regressor block R (states of j and its parents, plus a
    constant column when intercepts is set), solves

        coef_j = (1/delta) * mean(R R' / sigma_hat_j^2)^{-1}
                           * mean(dX_j R / sigma_hat_j^2).

    Args:
        sigma_hat: per-increment diffusion values, shape (n, d); scalars or
            length-d vectors are broadcast.

    Raises:
        SingularGramError: when a node's weighted Gram matrix is numerically
            singular (condition number above 1e14).
    """
    x0, dx = _increments(path)
    n, d = x0.shape
    if g.d != d:
        raise ValueError(f"graph has {g.d} nodes, path has {d} coordinates")
    sig = np.broadcast_to(np.asarray(sigma_hat, dtype=float), (n, d))
    if np.any(sig <= 0):
        raise DegenerateDiffusionError("sigma_hat must be strictly positive")
    inv_var = 1.0 / (sig * sig)

    columns: list[list[int]] = []
    coefs: list[np.ndarray] = []
    grams: list[np.ndarray] = []
    conds = np.empty(d)
    jittered: list[bool] = []
    for j in range(d):
        cols = sorted(set(g.parents(j)) | {j})
        reg = x0[:, cols]
        if intercepts:
            reg = np.column_stack([reg, np.ones(n)])
        wgt = inv_var[:, j]
        gram = (reg * wgt[:, None]).T @ reg / n
        rhs = reg.T @ (wgt * dx[:, j]) / (n * path.delta)
        cond = float(np.linalg.cond(gram))
        conds[j] = cond
        if not np.isfinite(cond) or cond > _COND_LIMIT:
            raise SingularGramError(
                f"weighted Gram matrix for node {j} is singular "
                f"(condition number {cond:.3g})", node=j, cond=cond)
        did_jitter = False
        try:
            c, low = cho_factor(gram)
        except np.linalg.LinAlgError:
            # near-PSD breakdown from rounding; stabilize and flag
            gram = gram + np.eye(gram.shape[0]) * (1e-10 * np.trace(gram) / gram.shape[0])
            did_jitter = True
            try:
                c, low = cho_factor(gram)
            except np.linalg.LinAlgError:
                raise SingularGramError(
                    f"weighted Gram matrix for node {j} is not positive definite",
                    node=j, cond=cond) from None
        coef = cho_solve((c, low), rhs)
        columns.append(cols)
        coefs.append(coef)
        grams.append(gram)
        jittered.append(did_jitter)
    return LinearClosedFormFit(delta=path.delta, columns=columns, coef=coefs,
                               gram=grams, cond=conds, jittered=jittered,
                               intercepts=intercepts)


# ---------------------------------------------------------------------------
# gradient and observed information


def _residual_parts(path: SamplePath, spec: NsdeSpec, g: DirectedGraph,
                    layout: ParamLayout, flat: np.ndarray):
    x0, dx = _increments(path)
    theta = layout.unflatten(flat)
    alpha = theta.alpha
    if np.any(alpha <= 0):
        raise DegenerateDiffusionError("diffusion scales must be strictly positive")
    s = diffusion_shape(spec, x0)
    inv_var = 1.0 / (alpha * alpha * s * s)
    drift = path_drift_fn(spec, g, theta)(x0)
    r = dx - path.delta * drift
    return x0, r, inv_var, alpha


def quasi_grad(path: SamplePath, spec: NsdeSpec, g: DirectedGraph,
               layout: ParamLayout, flat: np.ndarray,
               designs=None) -> np.ndarray:
    """Analytic gradient of quasi_loglik with respect to the flat vector."""
    x0, r, inv_var, alpha = _residual_parts(path, spec, g, layout, flat)
    n = x0.shape[0]
    if designs is None:
        designs = node_designs(spec, g, layout, x0)
    grad = np.zeros(layout.pi_total)
    quad = np.sum(r * r * inv_var, axis=0)  # per node
    grad[:layout.pi_alpha] = -quad / (path.delta * alpha) + n / alpha
    for j, (reg, slots) in enumerate(designs):
        grad[slots] += -(reg.T @ (r[:, j] * inv_var[:, j]))
    return grad


def model_hessian(path: SamplePath, spec: NsdeSpec, g: DirectedGraph,
                  theta: ParamVector, augmented: bool | None = None) -> np.ndarray:
    """Analytic Hessian of quasi_loglik at theta.

    The contrast separates across nodes, so the Hessian is block diagonal
    with one (1 + q_j) block per node covering its diffusion scale and
    drift parameters.
    """
    if augmented is None:
        augmented = theta.w is not None
    layout = parameter_layout(spec, g, augmented=augmented)
    flat = layout.flatten(theta)
    x0, r, inv_var, alpha = _residual_parts(path, spec, g, layout, flat)
    n = x0.shape[0]
    designs = node_designs(spec, g, layout, x0)
    hess = np.zeros((layout.pi_total, layout.pi_total))
    quad = np.sum(r * r * inv_var, axis=0)
    for j, (reg, slots) in enumerate(designs):
        a = layout.alpha_slot(j)
        hess[a, a] = 3.0 * quad[j] / (path.delta * alpha[j] ** 2) - n / alpha[j] ** 2
        cross = (2.0 / alpha[j]) * (reg.T @ (r[:, j] * inv_var[:, j]))
        hess[a, slots] = cross
        hess[slots, a] = cross
        block = path.delta * ((reg * inv_var[:, j][:, None]).T @ reg)
        hess[np.ix_(slots, slots)] += block
    return hess


def numerical_hessian(fn, x: np.ndarray, rel_step: float = 1e-5) -> np.ndarray:
    """Central-difference Hessian with per-coordinate steps rel_step * (1 + |x_k|)."""
    x = np.asarray(x, dtype=float)
    p = x.size
    steps = rel_step * (1.0 + np.abs(x))
    hess = np.empty((p, p))
    f0 = fn(x)
    for k in range(p):
        ek = np.zeros(p)
        ek[k] = steps[k]
        hess[k, k] = (fn(x + ek) - 2.0 * f0 + fn(x - ek)) / steps[k] ** 2
        for m in range(k + 1, p):
            em = np.zeros(p)
            em[m] = steps[m]
            val = (fn(x + ek + em) - fn(x + ek - em)
                   - fn(x - ek + em) + fn(x - ek - em)) / (4.0 * steps[k] * steps[m])
            hess[k, m] = val
            hess[m, k] = val
    return hess


# ---------------------------------------------------------------------------
# rate normalization


def rate_diagonal(layout: ParamLayout, n: int, delta: float) -> np.ndarray:
    """Diagonal of the rate matrix: n^{-1/2} on diffusion scales and
    (n*delta)^{-1/2} on all drift slots."""
    rate = np.full(layout.pi_total, 1.0 / np.sqrt(n * delta))
    rate[:layout.pi_alpha] = 1.0 / np.sqrt(n)
    return rate


def scaled_information(fit: "FitResult", n: int | None = None,
                       delta: float | None = None) -> np.ndarray:
    """Rate-normalized information: diag(rate) @ H @ diag(rate)."""
    n = fit.n if n is None else n
    delta = fit.delta if delta is None else delta
    rate = rate_diagonal(fit.layout, n, delta)
    return rate[:, None] * fit.info_matrix * rate[None, :]


# ---------------------------------------------------------------------------
# fit driver


@dataclass
class FitResult:
    """Estimate plus diagnostics from a quasi-likelihood fit."""

    theta_hat: ParamVector
    contrast_value: float
    info_matrix: np.ndarray
    rate_diag: np.ndarray
    scaled_info: np.ndarray
    converged: bool
    iterations: int
    layout: ParamLayout
    n: int
    delta: float
    message: str = ""
    gram_cond: np.ndarray | None = field(default=None, repr=False)

    def standard_errors(self) -> np.ndarray | None:
        """sqrt diag of rate @ scaled_info^{-1} @ rate, or None if singular."""
        try:
            inv = np.linalg.inv(self.scaled_info)
        except np.linalg.LinAlgError:
            return None
        cov = self.rate_diag[:, None] * inv * self.rate_diag[None, :]
        diag = np.diag(cov).copy()
        diag[diag < 0] = np.nan
        return np.sqrt(diag)


def _projected_grad(grad, x, lo, hi):
    g = grad.copy()
    at_lo = np.isclose(x, lo) & (g > 0)
    at_hi = np.isclose(x, hi) & (g < 0)
    g[at_lo] = 0.0
    g[at_hi] = 0.0
    return g


def fit_qmle(path: SamplePath, spec: NsdeSpec, g: DirectedGraph,
             mode: str = "adaptive", init: ParamVector | None = None,
             augmented: bool = False, bounds=None, restarts: int = 5,
             max_iter: int = 500, grad_tol: float = 1e-8,
             freeze_alpha=None, seed: int = 0,
             hessian: str = "analytic") -> FitResult:
    """Quasi-likelihood fit by box-constrained quasi-Newton descent.

    Args:
        mode: "joint" minimizes the contrast over all parameters at once;
            "adaptive" first solves the stage-one diffusion contrast exactly,
            then minimizes the drift contrast with the scales frozen.
        init: starting point (defaults to unit scales and zero drift).
        augmented: use ordered-pair weights instead of per-edge coefficients.
        bounds: (lo, hi) arrays over the flat vector; defaults to the model box.
        restarts: number of descent starts (the extra starts are seeded
            perturbations of init, clipped to the box).
        freeze_alpha: fix the diffusion scales at the given values by
            collapsing their box.
        grad_tol: convergence is certified when the projected gradient
            sup-norm is below grad_tol * (1 + |contrast|).
        hessian: "analytic" (exact, both families) or "numerical"
            (central differences).

    The result is returned even when convergence is not certified; check
    FitResult.converged.
    """
    layout = parameter_layout(spec, g, augmented=augmented)
    if bounds is None:
        lo, hi = default_bounds(layout)
    else:
        lo = np.asarray(bounds[0], dtype=float).copy()
        hi = np.asarray(bounds[1], dtype=float).copy()
    # keep the likelihood away from the degenerate sigma = 0 boundary
    a_sl = slice(0, layout.pi_alpha)
    lo[a_sl] = np.maximum(lo[a_sl], _ALPHA_FLOOR)

    if init is None:
        flat0 = np.zeros(layout.pi_total)
        flat0[a_sl] = 1.0
    else:
        flat0 = layout.flatten(init).copy()
    if freeze_alpha is not None:
        fa = np.clip(np.asarray(freeze_alpha, dtype=float), _ALPHA_FLOOR, None)
        flat0[a_sl] = fa
        lo[a_sl] = fa
        hi[a_sl] = fa
    flat0 = np.clip(flat0, lo, hi)
    if init is not None and freeze_alpha is None:
        raw = layout.flatten(init)
        if np.any(raw < lo - 1e-12) or np.any(raw > hi + 1e-12):
            raise BoundsViolationError("init lies outside the box bounds")

    x0_rows = path.data[:-1]
    designs = node_designs(spec, g, layout, x0_rows)

    def objective(flat):
        return quasi_loglik(path, spec, g, layout.unflatten(flat))

    def gradient(flat):
        return quasi_grad(path, spec, g, layout, flat, designs=designs)

    rng = np.random.default_rng(seed)
    iterations = 0

    if mode == "adaptive" and freeze_alpha is None:
        alpha_hat = fit_diffusion_scale(path, spec, lo=float(lo[0]), hi=float(hi[0]))
        alpha_hat = np.clip(alpha_hat, lo[a_sl], hi[a_sl])
        flat0[a_sl] = alpha_hat
        lo = lo.copy()
        hi = hi.copy()
        lo[a_sl] = alpha_hat
        hi[a_sl] = alpha_hat
    elif mode not in ("joint", "adaptive"):
        raise ValueError(f"unknown mode {mode!r}")

    scipy_bounds = list(zip(lo, hi))
    best = None
    for start in range(max(1, restarts)):
        if start == 0:
            x_start = flat0
        else:
            spread = 0.5 * (1.0 + np.abs(flat0))
            x_start = np.clip(flat0 + spread * rng.standard_normal(flat0.shape), lo, hi)
        res = minimize(objective, x_start, jac=gradient, method="L-BFGS-B",
                       bounds=scipy_bounds,
                       options={"maxiter": max_iter, "ftol": 2.3e-16,
                                "gtol": 1e-12, "maxfun": 20 * max_iter * (1 + layout.pi_total)})
        iterations += int(res.nit)
        if best is None or res.fun < best.fun:
            best = res

    flat_hat = np.clip(best.x, lo, hi)
    contrast = float(best.fun)
    pg = _projected_grad(gradient(flat_hat), flat_hat, lo, hi)
    converged = bool(np.max(np.abs(pg)) < grad_tol * (1.0 + abs(contrast)))
    theta_hat = layout.unflatten(flat_hat)

    if hessian == "numerical":
        info = numerical_hessian(objective, flat_hat)
    else:
        info = model_hessian(path, spec, g, theta_hat, augmented=augmented)
    rate = rate_diagonal(layout, path.n, path.delta)
    scaled = rate[:, None] * info * rate[None, :]
    return FitResult(theta_hat=theta_hat, contrast_value=contrast,
                     info_matrix=info, rate_diag=rate, scaled_info=scaled,
                     converged=converged, iterations=iterations, layout=layout,
                     n=path.n, delta=path.delta,
                     message=str(best.message))


def fit_adaptive_closed_form(path: SamplePath, spec: NsdeSpec, g: DirectedGraph,
                             augmented: bool = False,
                             intercepts: bool | None = None) -> FitResult:
    """Two-stage fit with both stages in closed form (linear drift only).

    Stage one solves the diffusion contrast exactly; stage two runs the
    per-node generalized least squares with those scales.  This is the fast
    pilot used by the sparse-selection pipeline on dense (complete-graph or
    pair-weight) layouts.
    """
    if not isinstance(spec.drift, LinearDrift):
        raise EstimationError("closed-form fit requires the linear drift family")
    layout = parameter_layout(spec, g, augmented=augmented)
    if intercepts is None:
        intercepts = layout.with_intercepts
    alpha_hat = fit_diffusion_scale(path, spec)
    alpha_hat = np.clip(alpha_hat, _ALPHA_FLOOR, None)
    sig = sigma_path(path, spec, alpha_hat)
    # pair-weight form regresses every node on all other coordinates
    g_reg = complete_graph(spec.d) if augmented else g
    base = fit_linear_closed_form(path, g_reg, sig, intercepts=intercepts)
    theta_hat = base.to_params(layout, alpha_hat)
    contrast = quasi_loglik(path, spec, g, theta_hat)
    info = model_hessian(path, spec, g, theta_hat, augmented=augmented)
    rate = rate_diagonal(layout, path.n, path.delta)
    scaled = rate[:, None] * info * rate[None, :]
    return FitResult(theta_hat=theta_hat, contrast_value=contrast,
                     info_matrix=info, rate_diag=rate, scaled_info=scaled,
                     converged=True, iterations=0, layout=layout,
                     n=path.n, delta=path.delta, gram_cond=base.cond)


# ---------------------------------------------------------------------------
# export


def fit_result_to_dict(fit: FitResult) -> dict:
    se = fit.standard_errors()
    flat = fit.layout.flatten(fit.theta_hat)
    return {
        "names": list(fit.layout.coord_names),
        "values": flat.tolist(),
        "standard_errors": None if se is None else
            [None if not np.isfinite(v) else float(v) for v in se],
        "contrast": fit.contrast_value,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "n": fit.n,
        "delta": fit.delta,
    }


def fit_result_to_json(fit: FitResult) -> str:
    import json

    return json.dumps(fit_result_to_dict(fit), indent=2)
