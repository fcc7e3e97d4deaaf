"""Population dynamics for the Stieltjes-transform fixed point of the PWITL.

The law of the random Stieltjes function ``s`` solves

    s  =d  -(z - Σ_j y_j / (s_j y_j - 1))^{-1}                 (dependent)
    s  =d  -(z + Σ_j y~_j + Σ_j y_j² s_j)^{-1}                  (independent)

with ``{y_j}``, ``{y~_j}`` independent Poisson processes of intensity
``m`` and ``s_j`` i.i.d. copies of ``s``. The second form is the limit for
``A - D~`` with a diagonal drawn independently of ``A``.

A population holds ``n_pop`` samples of the random *function* ``s``
evaluated on a grid: every element shares its point process and its
parent indices across all grid points. The update kernel walks one grid
column at a time in a fixed order, so a column's values never depend on
which other columns are computed alongside it.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from numba import njit

from .point_processes import (
    C1Report,
    LevyMeasure,
    Truncation,
    default_truncation,
    sample_point_process_batch,
    verify_c1,
)
from .stieltjes import StieltjesEstimate, ZGrid
from .streams import as_generator

log = logging.getLogger(__name__)

DENOMINATOR_FLOOR = 1e-14
VARIANTS = ("dependent", "independent")


class C1Error(ValueError):
    def __init__(self, report: C1Report):
        super().__init__(
            "measure fails Condition C1 "
            f"(∫ min(1,|x|) dm = {report.sum_condition.integral_value}); {report.notes}"
        )
        self.report = report


class HerglotzViolation(ArithmeticError):
    pass


@dataclass(frozen=True)
class RdeConfig:
    n_pop: int = 100_000
    iterations: int = 200
    burn_in: int = 100
    damping: float = 0.0
    delta: Optional[float] = None
    max_points: Optional[int] = None
    variant: str = "dependent"
    tail_drift: bool = True
    track_contraction: bool = True
    tol: float = 1e-3

    def __post_init__(self):
        if self.n_pop < 1:
            raise ValueError("n_pop must be >= 1")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")

    def truncation(self, m: LevyMeasure) -> Truncation:
        base = default_truncation(m)
        delta = base.delta if self.delta is None else self.delta
        return Truncation(delta, self.max_points)

    def to_dict(self):
        return asdict(self)


@dataclass
class Population:
    """``values[g, i]``: element ``i`` of the population evaluated at ``grid.points[g]``."""

    grid: ZGrid
    values: np.ndarray

    @property
    def n_pop(self) -> int:
        return self.values.shape[1]

    def herglotz_ok(self) -> bool:
        return _herglotz_ok(self.values, self.grid.points)


def init_population(grid: ZGrid, n_pop: int, shift: float = 0.0) -> Population:
    """Every element equal to ``-1/(z + shift)``, the transform of a point mass at ``-shift``."""
    values = np.empty((len(grid), n_pop), dtype=complex)
    values[:] = (-1.0 / (grid.points + shift))[:, None]
    return Population(grid, values)


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _neg_inv(w):
    """``-1/w`` rounded exactly as numpy's complex division (Smith's method)."""
    wr, wi = w.real, w.imag
    if abs(wr) >= abs(wi):
        rat = wi / wr
        scl = 1.0 / (wr + wi * rat)
        return complex(-scl, rat * scl)
    rat = wr / wi
    scl = 1.0 / (wi + wr * rat)
    return complex(-rat * scl, scl)


@njit(cache=True)
def _sweep(pop, z, y, offsets, idx, shift, independent, out):
    n_grid, n_pop = out.shape
    floored = 0
    for g in range(n_grid):
        zg = z[g]
        for i in range(n_pop):
            acc = 0j
            for t in range(offsets[i], offsets[i + 1]):
                s = pop[g, idx[t]]
                yt = y[t]
                if independent:
                    acc -= yt * yt * s
                else:
                    den = s * yt - 1.0
                    if abs(den) < DENOMINATOR_FLOOR:
                        den = DENOMINATOR_FLOOR + 0j
                        floored += 1
                    acc += yt / den
            out[g, i] = _neg_inv(zg + shift[i] - acc)
    return floored


@njit(cache=True)
def _mix(old, new, keep_old):
    n_grid, n_pop = new.shape
    for g in range(n_grid):
        for i in range(n_pop):
            if keep_old[i]:
                new[g, i] = old[g, i]


@njit(cache=True)
def _accumulate(values, ref, sums, sq):
    n_grid, n_pop = values.shape
    for g in range(n_grid):
        acc = 0j
        acc2 = 0.0
        for i in range(n_pop):
            d = values[g, i] - ref[g]
            acc += d
            acc2 += d.real * d.real + d.imag * d.imag
        sums[g] += acc
        sq[g] += acc2


@njit(cache=True)
def _column_distance(a, b):
    n_grid, n_pop = a.shape
    out = np.empty(n_grid)
    for g in range(n_grid):
        acc = 0.0
        for i in range(n_pop):
            acc += abs(a[g, i] - b[g, i])
        out[g] = acc / n_pop
    return out


@njit(cache=True)
def _herglotz_ok(values, z):
    n_grid, n_pop = values.shape
    for g in range(n_grid):
        bound = (1.0 + 1e-12) / z[g].imag
        for i in range(n_pop):
            v = values[g, i]
            if not (v.imag > 0.0) or abs(v) > bound:
                return False
    return True


@dataclass
class _Draws:
    y: np.ndarray
    offsets: np.ndarray
    idx: np.ndarray
    shift: np.ndarray
    keep_old: Optional[np.ndarray]


def _draw(m, cfg: RdeConfig, trunc: Truncation, n_pop: int, gen) -> _Draws:
    y, counts = sample_point_process_batch(m, trunc, n_pop, gen)
    offsets = np.zeros(n_pop + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    idx = gen.integers(0, n_pop, size=len(y))
    drift = m.mean_below(trunc.delta) if (cfg.tail_drift and trunc.delta > 0) else 0.0
    shift = np.full(n_pop, drift)
    if cfg.variant == "independent":
        y2, counts2 = sample_point_process_batch(m, trunc, n_pop, gen)
        owner = np.repeat(np.arange(n_pop), counts2)
        shift += np.bincount(owner, weights=y2, minlength=n_pop)
    keep_old = gen.random(n_pop) < cfg.damping if cfg.damping > 0 else None
    return _Draws(y, offsets, idx, shift, keep_old)


def _apply(pop_values, z, draws: _Draws, independent: bool):
    out = np.empty_like(pop_values)
    floored = _sweep(pop_values, z, draws.y, draws.offsets, draws.idx, draws.shift, independent, out)
    if floored:
        log.warning("denominator floor hit %d times", floored)
    if draws.keep_old is not None:
        _mix(pop_values, out, draws.keep_old)
    if not _herglotz_ok(out, z):
        raise HerglotzViolation("population left {Im s > 0, |s| <= 1/Im z}")
    return out, floored


def iterate_rde(pop: Population, m: LevyMeasure, cfg: RdeConfig, rng) -> Population:
    """One synchronous population-dynamics sweep."""
    gen = as_generator(rng)
    trunc = cfg.truncation(m)
    draws = _draw(m, cfg, trunc, pop.n_pop, gen)
    z = np.ascontiguousarray(pop.grid.points)
    return Population(pop.grid, _apply(pop.values, z, draws, cfg.variant == "independent")[0])


def population_distance(a: Population, b: Population, box=None) -> float:
    """Mean over elements of the sup over ``box`` grid points of ``|a_i(z) - b_i(z)|``.

    ``box`` selects grid points (indices or a boolean mask); all points by
    default. Elements are coupled by index.
    """
    if a.values.shape != b.values.shape:
        raise ValueError("populations differ in size")
    rows = slice(None) if box is None else np.asarray(box)
    diff = np.abs(a.values[rows] - b.values[rows])
    return float(diff.max(axis=0).mean())


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------


@dataclass
class RdeDiagnostics:
    """Per-iteration mean coupled distance, one column per grid point."""

    coupled_distance: Optional[np.ndarray] = None
    converged: Optional[bool] = None
    converged_at: Optional[int] = None
    floored: int = 0
    tail_drift: float = 0.0
    tail_abs_bias: float = 0.0

    @property
    def trace(self) -> Optional[np.ndarray]:
        """Max over the grid of the per-point coupled distance, per iteration."""
        return None if self.coupled_distance is None else self.coupled_distance.max(axis=1)


def solve_rde(m: LevyMeasure, grid: ZGrid, cfg: RdeConfig = RdeConfig(), rng=0) -> StieltjesEstimate:
    """Estimate ``E s(z)`` on ``grid`` by population dynamics.

    The estimate averages the populations of all post-burn-in sweeps. The
    reported standard error is ``sqrt(pooled variance / n_pop)``, which
    treats successive sweeps as fully correlated.

    When ``cfg.track_contraction`` is set, a shadow population started from
    ``-1/(z+1)`` is driven by the same point processes and parent indices;
    the coupled distance between the two is the convergence trace, and the
    run counts as converged once its grid maximum drops below ``cfg.tol``.
    """
    report = verify_c1(m)
    if not report.holds:
        raise C1Error(report)
    gen = as_generator(rng)
    trunc = cfg.truncation(m)
    z = np.ascontiguousarray(grid.points)
    independent = cfg.variant == "independent"
    pop = init_population(grid, cfg.n_pop).values
    shadow = init_population(grid, cfg.n_pop, shift=1.0).values if cfg.track_contraction else None
    distances = []
    ref = None
    sums = np.zeros(len(z), dtype=complex)
    sq = np.zeros(len(z))
    kept = floored = 0
    for it in range(cfg.iterations):
        draws = _draw(m, cfg, trunc, cfg.n_pop, gen)
        pop, k = _apply(pop, z, draws, independent)
        floored += k
        if shadow is not None:
            shadow, k = _apply(shadow, z, draws, independent)
            floored += k
            distances.append(_column_distance(pop, shadow))
        if it >= cfg.burn_in:
            if ref is None:
                ref = pop[:, 0].copy()
            _accumulate(pop, ref, sums, sq)
            kept += 1
    total = kept * cfg.n_pop
    centred = sums / total
    mean = ref + centred
    var = np.maximum(sq / total - np.abs(centred) ** 2, 0.0)
    stderr = np.sqrt(var / cfg.n_pop)

    diag = RdeDiagnostics(
        floored=floored,
        tail_drift=m.mean_below(trunc.delta) if (cfg.tail_drift and trunc.delta > 0) else 0.0,
        tail_abs_bias=m.abs_mean_below(trunc.delta) if trunc.delta > 0 else 0.0,
    )
    if shadow is not None:
        diag.coupled_distance = np.array(distances)
        below = np.flatnonzero(diag.trace < cfg.tol)
        diag.converged = bool(len(below))
        diag.converged_at = int(below[0]) + 1 if len(below) else None
        if not diag.converged:
            log.warning("population dynamics did not converge: final coupled distance %.3e", diag.trace[-1])
    est = StieltjesEstimate(
        grid, mean, stderr, cfg.iterations,
        metadata={"measure": m.to_dict(), "config": cfg.to_dict(), "diagnostics": diag, "population": pop},
    )
    return est


def coupled_contraction(m: LevyMeasure, grid: ZGrid, n_pop: int, iterations: int, rng,
                        init_shift: float = 1.0, box=None, cfg: Optional[RdeConfig] = None) -> np.ndarray:
    """Drive populations from ``-1/z`` and ``-1/(z + init_shift)`` with shared randomness.

    Returns ``population_distance`` on ``box`` before the first sweep and
    after each of the ``iterations`` sweeps.
    """
    cfg = cfg or RdeConfig(n_pop=n_pop, iterations=iterations + 1, burn_in=0)
    gen = as_generator(rng)
    trunc = cfg.truncation(m)
    z = np.ascontiguousarray(grid.points)
    a = init_population(grid, n_pop)
    b = init_population(grid, n_pop, shift=init_shift)
    trace = [population_distance(a, b, box)]
    for _ in range(iterations):
        draws = _draw(m, cfg, trunc, n_pop, gen)
        a = Population(grid, _apply(a.values, z, draws, cfg.variant == "independent")[0])
        b = Population(grid, _apply(b.values, z, draws, cfg.variant == "independent")[0])
        trace.append(population_distance(a, b, box))
    trace = np.array(trace)
    ratios = trace[1:] / np.where(trace[:-1] > 0, trace[:-1], np.inf)
    worst = float(ratios[trace[:-1] > 1e-300].max(initial=0.0))
    if worst > 0.9:
        log.warning("coupled contraction ratio %.3f exceeds 0.9 on some sweep", worst)
    return trace


# ---------------------------------------------------------------------------
# free convolution of the semicircle and the standard Gaussian
# ---------------------------------------------------------------------------


class FixedPointError(RuntimeError):
    pass


def solve_free_convolution(grid: ZGrid, tol: float = 1e-12, nodes: int = 64, damping: float = 0.5,
                           max_iter: int = 10_000) -> StieltjesEstimate:
    """Stieltjes transform of SC ⊞ N(0,1) via ``s = ∫ dG(x) / (x - z - s)``.

    Damped fixed-point iteration from ``s = -1/z`` with ``nodes``-point
    Gauss–Hermite quadrature. A point stops once ``|F(s) - s| < tol``; the
    damped step is then below ``tol`` as well.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    xk, wk = np.polynomial.hermite.hermgauss(nodes)
    x = np.sqrt(2.0) * xk
    w = wk / np.sqrt(np.pi)
    z = np.asarray(grid.points)
    s = -1.0 / z
    iterations = np.zeros(len(z), dtype=np.int64)
    active = np.ones(len(z), dtype=bool)
    for it in range(1, max_iter + 1):
        idx = np.flatnonzero(active)
        sa = s[idx]
        image = (w[None, :] / (x[None, :] - (z[idx] + sa)[:, None])).sum(axis=1)
        residual = np.abs(image - sa)
        iterations[idx] = it
        done = residual < tol
        active[idx[done]] = False
        moving = idx[~done]
        s[moving] = (1 - damping) * sa[~done] + damping * image[~done]
        if not active.any():
            break
    else:
        raise FixedPointError(f"free-convolution iteration did not settle in {max_iter} steps")
    if np.any(s.imag < 0):
        raise FixedPointError("fixed point left the Herglotz branch Im s >= 0")
    residual = np.abs((w[None, :] / (x[None, :] - (z + s)[:, None])).sum(axis=1) - s)
    return StieltjesEstimate(grid, s, 0.0, iterations,
                             metadata={"residual": residual, "tol": tol, "nodes": nodes})
