"""Euler-Maruyama simulation of networked diffusions.

Paths are recorded on the observation grid t_k = k * delta while the
integrator takes `substeps` internal steps of size h = delta / substeps per
observation interval.  Noise comes from a counter-based generator (Philox)
keyed by the seed, consumed in (step, coordinate) order, so a path is a
pure function of (seed, step, coordinate) and replications with distinct
seeds are independent and individually reproducible.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .graph import DirectedGraph
from .model import NsdeSpec, ParamVector, path_drift_fn, path_diffusion_fn

EXPLOSION_GUARD = 1e8


class SimulationError(RuntimeError):
    pass


class ExplosionError(SimulationError):
    """State left the guard box or became non-finite."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class InvalidSubstepsError(ValueError):
    pass


@dataclass(frozen=True)
class SamplePath:
    """Equispaced observations of a d-dimensional path.

    Attributes:
        delta: observation spacing.
        data: array of shape (rows, d); row k is the state at t = k * delta.
        seed: integer noise provenance, or None when unknown (e.g. loaded
            from disk or driven by externally supplied increments).
    """

    delta: float
    data: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "data", np.asarray(self.data, dtype=float))
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise ValueError("path data must be a 2-D array with at least one row")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("path data contains non-finite entries")

    @property
    def n(self) -> int:
        """Number of increments (rows - 1)."""
        return self.data.shape[0] - 1

    @property
    def d(self) -> int:
        return self.data.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.data.shape[0]) * self.delta


def derive_seeds(base_seed: int, count: int) -> list[int]:
    """Independent per-replication seeds derived from a base seed."""
    children = np.random.SeedSequence(base_seed).spawn(count)
    out = []
    for child in children:
        k0, k1 = child.generate_state(2, dtype=np.uint64)
        out.append(int(k0) | (int(k1) << 64))
    return out


def _check_args(spec, g, x0, n, substeps, burn_in_steps):
    if g.d != spec.d:
        raise ValueError(f"graph has {g.d} nodes, model has {spec.d}")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (spec.d,):
        raise ValueError(f"x0 has shape {x0.shape}, expected ({spec.d},)")
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 contains non-finite entries")
    if n < 0:
        raise ValueError(f"n must be non-negative, got {n}")
    if substeps < 1:
        raise InvalidSubstepsError(f"substeps must be >= 1, got {substeps}")
    if burn_in_steps < 0:
        raise ValueError(f"burn_in_steps must be non-negative, got {burn_in_steps}")
    return x0


def _guard(x, step: int):
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > EXPLOSION_GUARD:
        raise ExplosionError(
            f"state left the guard box (sup norm > {EXPLOSION_GUARD:g}) at substep {step}",
            step=step)


def simulate_path(spec: NsdeSpec, g: DirectedGraph, theta: ParamVector, x0,
                  delta: float, n: int, substeps: int = 10, seed: int = 0,
                  burn_in_steps: int = 0, dW: np.ndarray | None = None) -> SamplePath:
    """Simulate one path and record n + 1 states on the observation grid.

    Args:
        x0: initial state (state at the start of burn-in when burn-in is used).
        delta: observation spacing; internal step is delta / substeps.
        n: number of recorded increments.
        burn_in_steps: observation intervals evolved and discarded before
            row 0 is recorded.
        dW: optional pre-computed Brownian increments of shape
            ((burn_in_steps + n) * substeps, d); overrides the seeded noise
            stream (useful for coupling experiments and noise-free checks).

    Raises:
        ExplosionError: if the state leaves the guard box or becomes
            non-finite at any internal step.
    """
    x0 = _check_args(spec, g, x0, n, substeps, burn_in_steps)
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    drift = path_drift_fn(spec, g, theta)
    diffusion = path_diffusion_fn(spec, theta)
    h = delta / substeps
    sqrt_h = np.sqrt(h)
    total_sub = (burn_in_steps + n) * substeps
    if dW is not None:
        dW = np.asarray(dW, dtype=float)
        if dW.shape != (total_sub, spec.d):
            raise ValueError(
                f"dW has shape {dW.shape}, expected ({total_sub}, {spec.d})")
        gen = None
    else:
        gen = np.random.Generator(np.random.Philox(key=seed))

    x = x0.copy()
    rows = np.empty((n + 1, spec.d))
    step = 0

    def advance(intervals: int, record_from: int | None):
        nonlocal x, step
        for k in range(intervals):
            if dW is not None:
                incr = dW[step:step + substeps]
            else:
                incr = sqrt_h * gen.standard_normal((substeps, spec.d))
            for s in range(substeps):
                x = x + drift(x) * h + diffusion(x) * incr[s]
                step += 1
                _guard(x, step)
            if record_from is not None:
                rows[record_from + k + 1] = x

    advance(burn_in_steps, record_from=None)
    rows[0] = x
    advance(n, record_from=0)
    return SamplePath(delta=delta, data=rows,
                      seed=None if dW is not None else int(seed))


def simulate_ensemble(spec: NsdeSpec, g: DirectedGraph, theta: ParamVector, x0,
                      delta: float, n: int, seeds, substeps: int = 10,
                      burn_in_steps: int = 0) -> list[SamplePath]:
    """Simulate one path per seed with a shared, vectorized step loop.

    Each replication consumes its own noise stream exactly as
    simulate_path(seed=...) would, so ensemble members agree with
    individually simulated paths up to floating-point reduction order.
    """
    seeds = [int(s) for s in seeds]
    x0 = _check_args(spec, g, x0, n, substeps, burn_in_steps)
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    n_rep = len(seeds)
    if n_rep == 0:
        return []
    drift = path_drift_fn(spec, g, theta)
    diffusion = path_diffusion_fn(spec, theta)
    h = delta / substeps
    sqrt_h = np.sqrt(h)
    gens = [np.random.Generator(np.random.Philox(key=s)) for s in seeds]

    # chunk the noise generation to bound memory at ~16 MB per buffer
    chunk = max(1, int(2_000_000 // max(1, n_rep * substeps * spec.d)))

    x = np.tile(x0, (n_rep, 1))
    rows = np.empty((n + 1, n_rep, spec.d))
    step = 0

    def advance(intervals: int, record_from: int | None):
        nonlocal x, step
        done = 0
        while done < intervals:
            m = min(chunk, intervals - done)
            noise = np.stack([gen.standard_normal((m * substeps, spec.d))
                              for gen in gens])
            for k in range(m):
                for s in range(substeps):
                    incr = noise[:, k * substeps + s, :]
                    x = x + drift(x) * h + diffusion(x) * (sqrt_h * incr)
                    step += 1
                    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > EXPLOSION_GUARD:
                        bad = np.where(~np.all(
                            np.isfinite(x) & (np.abs(x) <= EXPLOSION_GUARD),
                            axis=1))[0]
                        r = int(bad[0]) if bad.size else 0
                        raise ExplosionError(
                            f"replication {r} (seed {seeds[r]}) left the guard box "
                            f"at substep {step}", step=step)
                if record_from is not None:
                    rows[record_from + done + k + 1] = x
            done += m

    advance(burn_in_steps, record_from=None)
    rows[0] = x
    advance(n, record_from=0)
    return [SamplePath(delta=delta, data=rows[:, r, :].copy(), seed=seeds[r])
            for r in range(n_rep)]


# ---------------------------------------------------------------------------
# CSV serialization


def to_csv(path: SamplePath) -> str:
    """Header 't,x0,...,x{d-1}', one row per observation; floats via repr."""
    buf = io.StringIO()
    buf.write("t," + ",".join(f"x{j}" for j in range(path.d)) + "\n")
    for k in range(path.data.shape[0]):
        t = k * path.delta
        buf.write(repr(float(t)) + "," +
                  ",".join(repr(float(v)) for v in path.data[k]) + "\n")
    return buf.getvalue()


def write_csv(path: SamplePath, file_path: str) -> None:
    with open(file_path, "w") as fh:
        fh.write(to_csv(path))


def from_csv(text: str) -> SamplePath:
    """Parse the format written by to_csv; spacing must be uniform."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty path file")
    header = lines[0].split(",")
    if header[0] != "t":
        raise ValueError(f"expected first column 't', got {header[0]!r}")
    d = len(header) - 1
    times = []
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != d + 1:
            raise ValueError(f"row has {len(parts)} fields, expected {d + 1}")
        times.append(float(parts[0]))
        rows.append([float(v) for v in parts[1:]])
    times = np.asarray(times)
    data = np.asarray(rows)
    if len(times) < 2:
        return SamplePath(delta=1.0, data=data, seed=None)
    diffs = np.diff(times)
    delta = float(diffs[0])
    if delta <= 0 or np.any(np.abs(diffs - delta) > 1e-9 * max(abs(delta), 1.0)):
        raise ValueError("observation times are not uniformly spaced")
    return SamplePath(delta=delta, data=data, seed=None)


def read_csv(file_path: str) -> SamplePath:
    with open(file_path) as fh:
        return from_csv(fh.read())
