"""Spectral measures: Stieltjes evaluation and inversion, distances, moments, row-sum fits."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .point_processes import LevyMeasure, PointMass, id_characteristic_function
from .stieltjes import StieltjesEstimate, fmt

MASS_TOL = 1e-12
MIN_ROW_SUM_SAMPLES = 1000


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class MeasureEstimate:
    """A probability measure given by weighted atoms or by a histogram.

    Exactly one of ``locations`` (atoms, sorted increasing) or ``edges``
    (histogram, strictly increasing) is set; ``weights`` holds the atom or
    bin masses.
    """

    weights: np.ndarray
    locations: Optional[np.ndarray] = None
    edges: Optional[np.ndarray] = None
    total_mass: float = 1.0

    def __post_init__(self):
        if (self.locations is None) == (self.edges is None):
            raise ValueError("give either atom locations or histogram edges")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(float(np.sum(self.weights)) - self.total_mass) > MASS_TOL or abs(self.total_mass - 1) > MASS_TOL:
            raise ValueError("weights must sum to one")
        if self.edges is not None:
            if len(self.edges) != len(self.weights) + 1 or np.any(np.diff(self.edges) <= 0):
                raise ValueError("histogram edges must be strictly increasing, one more than the bins")

    @classmethod
    def from_atoms(cls, locations, weights, total_mass: float = 1.0):
        locations = np.asarray(locations, dtype=float)
        weights = np.asarray(weights, dtype=float)
        order = np.argsort(locations, kind="stable")
        locations, weights = locations[order], weights[order]
        keep = weights > 0
        return cls(weights[keep], locations=locations[keep], total_mass=total_mass)

    @classmethod
    def from_samples(cls, values, bins: Optional[int] = None):
        """Uniform measure on ``values``; exact atoms, or a histogram if ``bins`` is given."""
        values = np.asarray(values, dtype=float).ravel()
        if bins is None:
            loc, counts = np.unique(values, return_counts=True)
            return cls.from_atoms(loc, counts / len(values))
        edges = np.linspace(values.min() - 0.5, values.max() + 0.5, bins + 1)
        counts, _ = np.histogram(values, bins=edges)
        return cls(counts / counts.sum(), edges=edges)

    @property
    def is_atomic(self) -> bool:
        return self.locations is not None

    def support_points(self) -> np.ndarray:
        return self.locations if self.is_atomic else 0.5 * (self.edges[1:] + self.edges[:-1])

    def cdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.is_atomic:
            cum = np.concatenate(([0.0], np.cumsum(self.weights)))
            return cum[np.searchsorted(self.locations, x, side="right")]
        cum = np.concatenate(([0.0], np.cumsum(self.weights)))
        return np.interp(x, self.edges, cum, left=0.0, right=1.0)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        if self.is_atomic:
            writer.writerow(("location", "weight"))
            writer.writerows((fmt(x), fmt(w)) for x, w in zip(self.locations, self.weights))
        else:
            writer.writerow(("bin_left", "bin_right", "count"))
            writer.writerows((fmt(a), fmt(b), fmt(w)) for a, b, w in zip(self.edges[:-1], self.edges[1:], self.weights))
        return buf.getvalue()


@dataclass(frozen=True)
class DistanceReport:
    metric: str
    value: float
    support: np.ndarray

    def to_json(self) -> str:
        return json.dumps({"metric": self.metric, "value": self.value, "support_size": int(len(self.support))})


def stieltjes_of_measure(mu: MeasureEstimate, z):
    """∫ dμ(x)/(x - z): exact over atoms, midpoint rule over histogram bins."""
    z_arr = np.asarray(z, dtype=complex)
    if np.any(z_arr.imag <= 0):
        raise ValueError("Stieltjes transform needs Im z > 0")
    x = mu.support_points()
    out = np.array([np.sum(mu.weights / (x - zi)) for zi in z_arr.ravel()]).reshape(z_arr.shape)
    return complex(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DensityEstimate:
    energies: np.ndarray
    density: np.ndarray
    eta: float
    integral: float

    @property
    def deficit(self) -> float:
        """Mass missing from the window (Cauchy tails, mass outside); reported, never renormalized."""
        return 1.0 - self.integral


def density_from_stieltjes(est: StieltjesEstimate, eta: float) -> DensityEstimate:
    """Cauchy-smoothed density ``Im s(E + i eta) / pi`` along the grid line ``Im z = eta``."""
    idx = est.grid.line(eta)
    if len(idx) == 0:
        raise ValueError(f"grid has no points with Im z = {eta}")
    energies = est.grid.points.real[idx]
    density = np.maximum(est.mean.imag[idx], 0.0) / math.pi
    integral = float(np.trapezoid(density, energies)) if len(idx) > 1 else 0.0
    return DensityEstimate(energies, density, float(eta), integral)


def _merged_support(a: MeasureEstimate, b: MeasureEstimate) -> np.ndarray:
    pts = [m.locations if m.is_atomic else m.edges for m in (a, b)]
    return np.unique(np.concatenate(pts))


def kolmogorov_distance(a: MeasureEstimate, b: MeasureEstimate) -> DistanceReport:
    """sup_x |F_a(x) - F_b(x)| evaluated on the merged atom/edge locations."""
    support = _merged_support(a, b)
    value = float(np.max(np.abs(a.cdf(support) - b.cdf(support)))) if len(support) else 0.0
    return DistanceReport("kolmogorov", value, support)


def total_variation_distance(a: MeasureEstimate, b: MeasureEstimate) -> DistanceReport:
    """½ Σ |a({x}) - b({x})| for two atomic measures."""
    if not (a.is_atomic and b.is_atomic):
        raise ValueError("total variation is implemented for atomic measures only")
    support = np.union1d(a.locations, b.locations)
    wa = np.zeros(len(support))
    wb = np.zeros(len(support))
    wa[np.searchsorted(support, a.locations)] = a.weights
    wb[np.searchsorted(support, b.locations)] = b.weights
    return DistanceReport("total_variation", 0.5 * float(np.abs(wa - wb).sum()), support)


def sup_grid_distance(s1: StieltjesEstimate, s2: StieltjesEstimate) -> DistanceReport:
    if not s1.grid.same_as(s2.grid):
        raise GridMismatchError("Stieltjes estimates live on different grids")
    value = float(np.max(np.abs(s1.mean - s2.mean)))
    return DistanceReport("sup_grid", value, s1.grid.points)


def moment(mu: MeasureEstimate, r: float) -> float:
    """∫ |x|^r dμ."""
    if not 0 < r <= 2:
        raise ValueError("r must lie in (0, 2]")
    return float(np.sum(mu.weights * np.abs(mu.support_points()) ** r))


def poisson_total_variation(samples, lam: float) -> float:
    """TV between the empirical law of integer-rounded samples and Poisson(lam)."""
    k = np.rint(np.asarray(samples, dtype=float)).astype(np.int64)
    top = int(max(k.max(initial=0), stats.poisson.isf(1e-16, lam) if lam > 0 else 0)) + 1
    inside = (k >= 0) & (k <= top)
    emp = np.bincount(k[inside], minlength=top + 1) / len(k)
    pmf = stats.poisson.pmf(np.arange(top + 1), lam) if lam > 0 else np.eye(1, top + 1)[0]
    outside = (len(k) - inside.sum()) / len(k)
    tail = max(0.0, 1.0 - pmf.sum())
    return 0.5 * (float(np.abs(emp - pmf).sum()) + outside + tail)


@dataclass(frozen=True)
class RowSumFit:
    n_samples: int
    t: np.ndarray
    cf_deviation: float
    modulus_deviation: float
    total_variation: Optional[float] = None

    def to_dict(self):
        return {
            "n_samples": self.n_samples,
            "cf_deviation": self.cf_deviation,
            "modulus_deviation": self.modulus_deviation,
            "total_variation": self.total_variation,
        }


def empirical_cf(samples, t) -> np.ndarray:
    samples = np.asarray(samples, dtype=float)
    return np.array([np.mean(np.exp(1j * ti * samples)) for ti in np.asarray(t, dtype=float)])


def row_sum_fit(samples, m: LevyMeasure, b: float, t=None) -> RowSumFit:
    """Goodness of fit of row sums to the infinitely divisible law (0, b, m)."""
    samples = np.asarray(samples, dtype=float).ravel()
    if len(samples) < MIN_ROW_SUM_SAMPLES:
        raise ValueError(f"row_sum_fit needs at least {MIN_ROW_SUM_SAMPLES} samples, got {len(samples)}")
    t = np.linspace(-5.0, 5.0, 33) if t is None else np.asarray(t, dtype=float)
    emp = empirical_cf(samples, t)
    model = id_characteristic_function(m, b, t)
    tv = poisson_total_variation(samples, m.lam) if isinstance(m, PointMass) else None
    return RowSumFit(
        len(samples),
        t,
        float(np.max(np.abs(emp - model))),
        float(np.max(np.abs(np.abs(emp) - np.abs(model)))),
        tv,
    )
