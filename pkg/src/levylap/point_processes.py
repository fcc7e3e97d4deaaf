"""Lévy measures, Poisson point processes and infinitely divisible laws.

Four intensity measures are supported:

``AlphaStable(alpha, theta)``
    density ``alpha |x|^(-1-alpha) (theta 1{x>0} + (1-theta) 1{x<0})``,
    infinite total mass.
``PointMass(lam)``
    ``lam * delta_1`` (sparse Erdős–Rényi graphs).
``ScaledGaussian(lam)``
    ``lam * N(0, 1/lam)`` (sparse Gaussian matrices).
``FiniteDiscrete(atoms)``
    finitely many weighted atoms away from zero.

Serialized form is a flat mapping, e.g. ``{"kind": "alpha_stable",
"alpha": 0.5, "theta": 1.0}``, ``{"kind": "point_mass", "lam": 2}``,
``{"kind": "scaled_gaussian", "lam": 4}`` or ``{"kind": "finite_discrete",
"atoms": [[1.0, 0.5], [-2.0, 0.25]]}`` (location, mass pairs).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy import integrate, special

from .streams import as_generator

DEFAULT_DELTA = 1e-3


class QuadratureError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class NotSummableError(ValueError):
    """Raised when a measure is used where Σ|y_j| must be almost surely finite."""


# ---------------------------------------------------------------------------
# measures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AlphaStable:
    alpha: float
    theta: float = 0.5

    kind = "alpha_stable"

    def __post_init__(self):
        if not 0.0 < self.alpha < 2.0:
            raise ValueError(f"alpha must lie in (0, 2), got {self.alpha}")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")

    def total_mass(self) -> float:
        return math.inf

    def tail_mass(self, t):
        """m({|x| >= t}) = t^(-alpha)."""
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(t > 0, t ** -self.alpha, np.inf)[()]

    def abs_mean_below(self, delta: float) -> float:
        if delta <= 0:
            return 0.0
        if self.alpha >= 1:
            return math.inf
        return self.alpha / (1 - self.alpha) * delta ** (1 - self.alpha)

    def mean_below(self, delta: float) -> float:
        return (2 * self.theta - 1) * self.abs_mean_below(delta)

    def to_dict(self):
        return {"kind": self.kind, "alpha": self.alpha, "theta": self.theta}


@dataclass(frozen=True)
class PointMass:
    lam: float

    kind = "point_mass"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")

    def total_mass(self) -> float:
        return float(self.lam)

    def tail_mass(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t <= 1.0, float(self.lam), 0.0)[()]

    def abs_mean_below(self, delta: float) -> float:
        return float(self.lam) if delta > 1.0 else 0.0

    mean_below = abs_mean_below

    def draw_atoms(self, size, gen):
        return np.ones(size)

    def to_dict(self):
        return {"kind": self.kind, "lam": self.lam}


@dataclass(frozen=True)
class ScaledGaussian:
    lam: float

    kind = "scaled_gaussian"

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lam must be > 0, got {self.lam}")

    def total_mass(self) -> float:
        return float(self.lam)

    def tail_mass(self, t):
        t = np.asarray(t, dtype=float)
        return (self.lam * special.erfc(np.maximum(t, 0.0) * math.sqrt(self.lam / 2)))[()]

    def abs_mean_below(self, delta: float) -> float:
        sigma = 1.0 / math.sqrt(self.lam)
        return self.lam * sigma * math.sqrt(2 / math.pi) * -math.expm1(-(delta**2) * self.lam / 2)

    def mean_below(self, delta: float) -> float:
        return 0.0

    def draw_atoms(self, size, gen):
        return gen.standard_normal(size) / math.sqrt(self.lam)

    def to_dict(self):
        return {"kind": self.kind, "lam": self.lam}


@dataclass(frozen=True)
class FiniteDiscrete:
    atoms: tuple

    kind = "finite_discrete"

    def __post_init__(self):
        atoms = tuple((float(loc), float(mass)) for loc, mass in self.atoms)
        for loc, mass in atoms:
            if loc == 0.0 or not mass > 0.0:
                raise ValueError("atoms need a nonzero location and a positive mass")
        object.__setattr__(self, "atoms", atoms)

    @property
    def locations(self):
        return np.array([a[0] for a in self.atoms])

    @property
    def masses(self):
        return np.array([a[1] for a in self.atoms])

    def total_mass(self) -> float:
        return float(sum(mass for _, mass in self.atoms))

    def tail_mass(self, t):
        t = np.asarray(t, dtype=float)
        loc, mass = np.abs(self.locations), self.masses
        return (mass[None, :] * (loc[None, :] >= t.reshape(-1, 1))).sum(axis=1).reshape(t.shape)[()]

    def abs_mean_below(self, delta: float) -> float:
        return float(sum(m * abs(x) for x, m in self.atoms if abs(x) < delta))

    def mean_below(self, delta: float) -> float:
        return float(sum(m * x for x, m in self.atoms if abs(x) < delta))

    def draw_atoms(self, size, gen):
        if not self.atoms:
            return np.zeros(size)
        p = self.masses / self.masses.sum()
        return self.locations[gen.choice(len(p), size=size, p=p)]

    def to_dict(self):
        return {"kind": self.kind, "atoms": [list(a) for a in self.atoms]}


LevyMeasure = Union[AlphaStable, PointMass, ScaledGaussian, FiniteDiscrete]

_KINDS = {cls.kind: cls for cls in (AlphaStable, PointMass, ScaledGaussian, FiniteDiscrete)}


def measure_from_dict(doc) -> LevyMeasure:
    doc = dict(doc)
    kind = doc.pop("kind", None)
    if kind not in _KINDS:
        raise ValueError(f"unknown measure kind {kind!r}; expected one of {sorted(_KINDS)}")
    if kind == "finite_discrete":
        return FiniteDiscrete(tuple(tuple(a) for a in doc["atoms"]))
    try:
        return _KINDS[kind](**{k: float(v) for k, v in doc.items()})
    except TypeError as exc:
        raise ValueError(f"bad parameters for {kind}: {exc}") from None


def is_infinite(m: LevyMeasure) -> bool:
    return math.isinf(m.total_mass())


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Truncation:
    """Keep points with ``|y| >= delta``, at most ``max_points`` of them."""

    delta: float = 0.0
    max_points: Optional[int] = None

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if self.max_points is not None and self.max_points < 0:
            raise ValueError("max_points must be >= 0")


def default_truncation(m: LevyMeasure) -> Truncation:
    return Truncation(DEFAULT_DELTA if is_infinite(m) else 0.0)


@dataclass(frozen=True)
class PointProcessSample:
    weights: np.ndarray
    delta: float
    max_points: Optional[int]
    truncated_tail_mass_estimate: float

    def __len__(self):
        return len(self.weights)


def _check_sampling(m, trunc, require_summable):
    if require_summable and isinstance(m, AlphaStable) and m.alpha >= 1:
        raise NotSummableError(
            f"alpha={m.alpha} >= 1: the point process is not absolutely summable, "
            "so Laplacian diagonal weights are undefined"
        )
    if is_infinite(m) and not trunc.delta > 0:
        raise ValueError("an infinite-mass measure needs a positive cutoff delta")


def _sort_key(w, order):
    # decreasing |w|, positive before negative, then draw order
    return np.lexsort((order, w < 0, -np.abs(w)))


def sample_point_process(
    m: LevyMeasure,
    trunc: Optional[Truncation] = None,
    rng=None,
    require_summable: bool = False,
) -> PointProcessSample:
    """Draw one realization of the Poisson process with intensity ``m``.

    Alpha-stable points come from ``eps_k * Gamma_k^(-1/alpha)`` with
    ``Gamma_k`` the arrival times of a unit-rate Poisson process, stopped at
    the first ``Gamma_k^(-1/alpha) < delta``; they are sorted by
    construction. Finite measures draw ``N ~ Poisson(m(R))`` i.i.d. atoms.
    """
    trunc = trunc or default_truncation(m)
    _check_sampling(m, trunc, require_summable)
    gen = as_generator(rng if rng is not None else 0)

    if isinstance(m, AlphaStable):
        horizon = trunc.delta ** -m.alpha
        chunk = max(16, int(horizon + 5 * math.sqrt(horizon)) + 1)
        arrivals = []
        last = 0.0
        while True:
            g = last + np.cumsum(gen.standard_exponential(chunk))
            arrivals.append(g[g <= horizon])
            if g[-1] > horizon:
                break
            last = g[-1]
        gammas = np.concatenate(arrivals)
        signs = np.where(gen.random(len(gammas)) < m.theta, 1.0, -1.0)
        w = signs * gammas ** (-1.0 / m.alpha)
    else:
        count = gen.poisson(m.total_mass())
        w = m.draw_atoms(count, gen)
        w = w[np.abs(w) >= trunc.delta] if trunc.delta > 0 else w

    w = w[_sort_key(w, np.arange(len(w)))]
    tail = m.abs_mean_below(trunc.delta) if trunc.delta > 0 else 0.0
    if trunc.max_points is not None and len(w) > trunc.max_points:
        tail += float(np.abs(w[trunc.max_points:]).sum())
        w = w[: trunc.max_points]
    w.setflags(write=False)
    return PointProcessSample(w, trunc.delta, trunc.max_points, tail)


def sample_point_process_batch(m: LevyMeasure, trunc: Truncation, size: int, gen, sort=False):
    """Draw ``size`` independent realizations at once.

    Returns ``(values, counts)``: the points of process ``i`` are
    ``values[offsets[i]:offsets[i+1]]`` with ``offsets = [0, cumsum(counts)]``.
    Alpha-stable processes use the equivalent representation of ``N ~
    Poisson(delta^-alpha)`` i.i.d. uniform arrival times on ``(0,
    delta^-alpha]``. Within-process order is arbitrary unless ``sort`` or a
    ``max_points`` cap is in effect, in which case it is decreasing ``|y|``.
    """
    _check_sampling(m, trunc, False)
    if isinstance(m, AlphaStable):
        horizon = trunc.delta ** -m.alpha
        counts = gen.poisson(horizon, size=size)
        total = int(counts.sum())
        gammas = horizon * (1.0 - gen.random(total))
        signs = np.where(gen.random(total) < m.theta, 1.0, -1.0)
        values = signs * gammas ** (-1.0 / m.alpha)
    else:
        counts = gen.poisson(m.total_mass(), size=size)
        values = m.draw_atoms(int(counts.sum()), gen)
        if trunc.delta > 0:
            keep = np.abs(values) >= trunc.delta
            if not keep.all():
                owner = np.repeat(np.arange(size), counts)
                values = values[keep]
                counts = np.bincount(owner[keep], minlength=size)

    cap = trunc.max_points
    if sort or (cap is not None and counts.size and counts.max() > cap):
        owner = np.repeat(np.arange(size), counts)
        order = np.lexsort((np.arange(len(values)), values < 0, -np.abs(values), owner))
        values = values[order]
        if cap is not None and counts.size and counts.max() > cap:
            starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
            rank = np.arange(len(values)) - starts[owner]
            values = values[rank < cap]
            counts = np.minimum(counts, cap)
    return values, counts.astype(np.int64)


def sum_weights(sample: PointProcessSample, u: Callable = None) -> float:
    """Σ_i u(y_i); ``u`` must be vectorized with ``u(0) = 0``. Identity by default."""
    w = sample.weights
    if u is None:
        return float(w.sum())
    return float(np.sum(u(w))) if len(w) else 0.0


# ---------------------------------------------------------------------------
# infinitely divisible characteristic functions
# ---------------------------------------------------------------------------


def _levy_exponent_discrete(locs, masses, t):
    x = locs[None, :]
    tt = t[:, None]
    terms = np.exp(1j * tt * x) - 1 - 1j * tt * x / (1 + x**2)
    return (masses[None, :] * terms).sum(axis=1)


def _levy_exponent_gaussian(lam, t, tol=1e-10, max_nodes=512):
    sigma = 1.0 / math.sqrt(lam)
    nodes = 64
    previous = None
    while True:
        xk, wk = np.polynomial.hermite.hermgauss(nodes)
        x = math.sqrt(2.0) * sigma * xk[None, :]
        tt = t[:, None]
        f = np.exp(1j * tt * x) - 1 - 1j * tt * x / (1 + x**2)
        value = lam * (f * wk[None, :]).sum(axis=1) / math.sqrt(math.pi)
        if previous is not None:
            residual = float(np.max(np.abs(value - previous)))
            if residual < tol:
                return value
            if nodes >= max_nodes:
                raise QuadratureError("Gauss-Hermite quadrature did not converge", residual)
        previous = value
        nodes *= 2


def _stable_half_line_closed(alpha, t):
    """∫_0^∞ (e^{itx} - 1 - itx/(1+x²)) α x^{-1-α} dx for α < 1."""
    jump = -special.gamma(1 - alpha) * np.abs(t) ** alpha * np.exp(-1j * np.pi * alpha * np.sign(t) / 2)
    compensator = alpha * np.pi / (2 * np.cos(np.pi * alpha / 2))
    return jump - 1j * t * compensator


def _stable_half_line_quad(alpha, t):
    """Same integral by quadrature; valid for every α in (0, 2)."""
    density = lambda x: alpha * x ** (-1 - alpha)  # noqa: E731
    out = np.empty(len(t), dtype=complex)
    for i, ti in enumerate(t):
        if ti == 0:
            out[i] = 0.0
            continue
        re0, e1 = integrate.quad(lambda x: (np.cos(ti * x) - 1) * density(x), 0, 1, limit=200)
        im0, e2 = integrate.quad(lambda x: (np.sin(ti * x) - ti * x / (1 + x * x)) * density(x), 0, 1, limit=200)
        # [1, ∞): oscillatory parts by QAWF, the rest in closed form or plain quadrature
        re1, e3 = integrate.quad(density, 1, np.inf, weight="cos", wvar=abs(ti))
        im1, e4 = integrate.quad(density, 1, np.inf, weight="sin", wvar=abs(ti))
        comp, e5 = integrate.quad(lambda x: x / (1 + x * x) * density(x), 1, np.inf)
        err = e1 + e2 + e3 + e4 + abs(ti) * e5
        if not np.isfinite(err) or err > 1e-6:
            raise QuadratureError("alpha-stable characteristic exponent quadrature failed", err)
        out[i] = (re0 + re1 - 1.0) + 1j * (im0 + np.sign(ti) * im1 - ti * comp)
    return out


def natural_drift(m: LevyMeasure) -> float:
    """``b = ∫ x/(1+x²) dm``: the drift under which uncentred row sums converge.

    Whenever ``∫ min(1,|x|) dm < ∞`` the compensator can be folded into
    the drift, giving the characteristic function ``exp(∫ (e^{itx} - 1) dm)``.
    """
    if isinstance(m, AlphaStable):
        if m.alpha >= 1:
            raise NotSummableError(f"alpha={m.alpha} >= 1: ∫ x/(1+x²) dm needs centring")
        return (2 * m.theta - 1) * m.alpha * math.pi / (2 * math.cos(math.pi * m.alpha / 2))
    if isinstance(m, PointMass):
        return m.lam / 2
    if isinstance(m, ScaledGaussian):
        return 0.0
    if isinstance(m, FiniteDiscrete):
        return float(sum(mass * x / (1 + x * x) for x, mass in m.atoms))
    raise TypeError(f"unsupported measure {m!r}")


def levy_exponent(m: LevyMeasure, t, method: str = "auto"):
    """∫ (e^{itx} - 1 - itx/(1+x²)) dm(x), vectorized over ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if isinstance(m, PointMass):
        return _levy_exponent_discrete(np.array([1.0]), np.array([float(m.lam)]), t)
    if isinstance(m, FiniteDiscrete):
        if not m.atoms:
            return np.zeros(len(t), dtype=complex)
        return _levy_exponent_discrete(m.locations, m.masses, t)
    if isinstance(m, ScaledGaussian):
        return _levy_exponent_gaussian(m.lam, t)
    if isinstance(m, AlphaStable):
        if method == "quad" or (method == "auto" and m.alpha >= 1):
            half = _stable_half_line_quad(m.alpha, t)
        else:
            half = _stable_half_line_closed(m.alpha, t)
        # the negative half-line contributes the conjugate
        return m.theta * half + (1 - m.theta) * np.conj(half)
    raise TypeError(f"unsupported measure {m!r}")


def id_characteristic_function(m: LevyMeasure, b: float, t, method: str = "auto"):
    """E exp(itY) for Y infinitely divisible with characteristics (0, b, m)."""
    scalar = np.ndim(t) == 0
    tt = np.atleast_1d(np.asarray(t, dtype=float))
    value = np.exp(1j * tt * b + levy_exponent(m, tt, method=method))
    return complex(value[0]) if scalar else value


# ---------------------------------------------------------------------------
# Condition C1
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SumCondition:
    holds: bool
    integral_value: float


@dataclass(frozen=True)
class DecayCondition:
    epsilon: float
    C: float
    holds: bool


@dataclass(frozen=True)
class C1Report:
    sum_condition: SumCondition
    decay: DecayCondition
    notes: str = ""

    @property
    def holds(self) -> bool:
        return self.sum_condition.holds and self.decay.holds

    def to_dict(self):
        return {
            "holds": self.holds,
            "sum_condition": {"holds": self.sum_condition.holds, "integral_value": self.sum_condition.integral_value},
            "decay": {"epsilon": self.decay.epsilon, "C": self.decay.C, "holds": self.decay.holds},
            "notes": self.notes,
        }


def min_one_abs_integral(m: LevyMeasure) -> float:
    """∫ min(1, |x|) dm(x) in closed form."""
    if isinstance(m, AlphaStable):
        return 1.0 / (1.0 - m.alpha) if m.alpha < 1 else math.inf
    if isinstance(m, PointMass):
        return float(m.lam)
    if isinstance(m, ScaledGaussian):
        sigma = 1.0 / math.sqrt(m.lam)
        below = sigma * math.sqrt(2 / math.pi) * -math.expm1(-m.lam / 2)
        return m.lam * (below + math.erfc(math.sqrt(m.lam / 2)))
    if isinstance(m, FiniteDiscrete):
        return float(sum(mass * min(1.0, abs(x)) for x, mass in m.atoms))
    raise TypeError(f"unsupported measure {m!r}")


def verify_c1(m: LevyMeasure) -> C1Report:
    """Check summability and polynomial tail decay of the intensity measure.

    The decay pair ``(epsilon, C)`` certifies ``m(|x| >= t) <= C t^-epsilon``
    for every ``t > 1/4``.
    """
    integral = min_one_abs_integral(m)
    summable = math.isfinite(integral)
    notes = []
    if isinstance(m, AlphaStable):
        eps, C = m.alpha, 1.0
        if not summable:
            notes.append(
                f"alpha={m.alpha} >= 1: ∫ min(1,|x|) dm diverges, the point process is not "
                "summable and the Laplacian diagonal has no limit; only alpha in (0,1) is supported"
            )
    elif isinstance(m, PointMass):
        eps, C = 1.0, float(m.lam) if m.lam > 0 else 1.0
    elif isinstance(m, ScaledGaussian):
        # λ erfc(t√(λ/2)) t <= λ t exp(-λt²/2) <= √λ e^{-1/2}; Gaussian tails admit every ε
        eps, C = 1.0, math.sqrt(m.lam) * math.exp(-0.5)
        notes.append("Gaussian tails: any epsilon > 0 is admissible")
    else:
        eps = 1.0
        locs = np.abs(m.locations)
        C = max((float(m.tail_mass(a)) * a for a in locs), default=0.0) or 1.0
    return C1Report(SumCondition(summable, integral), DecayCondition(eps, C, True), "; ".join(notes))
