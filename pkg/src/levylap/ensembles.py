"""Lévy–Khintchine matrix ensembles and their Laplacians ``L = A - D``."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import special

from .point_processes import AlphaStable, LevyMeasure, PointMass, ScaledGaussian
from .streams import as_generator


@dataclass(frozen=True)
class LevyPareto:
    """Entries ``xi / n^(1/alpha)`` with ``P(|xi| > t) = t^-alpha`` for ``t >= 1``."""

    n: int
    alpha: float
    theta: float = 0.5

    kind = "levy_pareto"

    def __post_init__(self):
        _check_n(self.n)
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(
                f"alpha must lie in (0, 1) for Laplacian ensembles, got {self.alpha}; "
                "row sums are not summable for alpha >= 1"
            )
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")

    @property
    def scale(self) -> float:
        # exact solution of P(|xi| > a) = 1/n for the Pareto law
        return float(self.n) ** (1.0 / self.alpha)

    def levy_measure(self) -> LevyMeasure:
        return AlphaStable(self.alpha, self.theta)

    def draw_entries(self, size, gen):
        magnitude = (1.0 - gen.random(size)) ** (-1.0 / self.alpha)
        sign = np.where(gen.random(size) < self.theta, 1.0, -1.0)
        return sign * magnitude / self.scale

    def entry_tail(self, t):
        """n P(|A_12| >= t)."""
        t = np.asarray(t, dtype=float)
        return np.minimum(float(self.n), t ** -self.alpha)

    def to_dict(self):
        return {"kind": self.kind, "n": self.n, "alpha": self.alpha, "theta": self.theta}


@dataclass(frozen=True)
class ErdosRenyi:
    n: int
    lam: float

    kind = "erdos_renyi"

    def __post_init__(self):
        _check_n(self.n)
        _check_sparse(self.n, self.lam)

    def levy_measure(self) -> LevyMeasure:
        return PointMass(self.lam)

    def draw_entries(self, size, gen):
        return (gen.random(size) < self.lam / self.n).astype(float)

    def entry_tail(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t <= 1.0, float(self.lam), 0.0)

    def to_dict(self):
        return {"kind": self.kind, "n": self.n, "lam": self.lam}


@dataclass(frozen=True)
class SparseGaussian:
    n: int
    lam: float

    kind = "sparse_gaussian"

    def __post_init__(self):
        _check_n(self.n)
        _check_sparse(self.n, self.lam)

    def levy_measure(self) -> LevyMeasure:
        return ScaledGaussian(self.lam)

    def draw_entries(self, size, gen):
        mask = gen.random(size) < self.lam / self.n
        out = np.zeros(size)
        out[mask] = gen.standard_normal(int(mask.sum())) / math.sqrt(self.lam)
        return out

    def entry_tail(self, t):
        t = np.asarray(t, dtype=float)
        return self.lam * special.erfc(np.maximum(t, 0.0) * math.sqrt(self.lam / 2))

    def to_dict(self):
        return {"kind": self.kind, "n": self.n, "lam": self.lam}


EnsembleSpec = Union[LevyPareto, ErdosRenyi, SparseGaussian]
_SPECS = {cls.kind: cls for cls in (LevyPareto, ErdosRenyi, SparseGaussian)}


def spec_from_dict(doc) -> EnsembleSpec:
    doc = dict(doc)
    kind = doc.pop("kind", None)
    if kind not in _SPECS:
        raise ValueError(f"unknown ensemble kind {kind!r}; expected one of {sorted(_SPECS)}")
    if "n" in doc:
        doc["n"] = int(doc["n"])
    try:
        return _SPECS[kind](**{k: (v if k == "n" else float(v)) for k, v in doc.items()})
    except TypeError as exc:
        raise ValueError(f"bad parameters for {kind}: {exc}") from None


def _check_n(n):
    if int(n) != n or n < 2:
        raise ValueError(f"n must be an integer >= 2, got {n}")


def _check_sparse(n, lam):
    if not lam > 0:
        raise ValueError(f"lam must be > 0, got {lam}")
    if not n > lam:
        raise ValueError(f"need n > lam for Bernoulli(lam/n) entries, got n={n}, lam={lam}")


# ---------------------------------------------------------------------------
# matrices
# ---------------------------------------------------------------------------


class SymmetricMatrix:
    """Real symmetric matrix stored once, as the packed lower triangle.

    ``packed`` lists ``a[i, j]`` for ``i >= j`` in row order (the order of
    ``numpy.tril_indices``).
    """

    def __init__(self, n: int, packed):
        packed = np.asarray(packed, dtype=float)
        if packed.shape != (n * (n + 1) // 2,):
            raise ValueError(f"packed lower triangle of a {n}x{n} matrix needs {n * (n + 1) // 2} entries")
        self.n = int(n)
        self.packed = packed
        self.packed.setflags(write=False)

    @classmethod
    def from_dense(cls, a):
        a = np.asarray(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("expected a square matrix")
        if not np.array_equal(a, a.T):
            raise ValueError("matrix is not symmetric")
        return cls(a.shape[0], a[np.tril_indices(a.shape[0])])

    def to_dense(self) -> np.ndarray:
        n = self.n
        a = np.zeros((n, n))
        rows, cols = np.tril_indices(n)
        a[rows, cols] = self.packed
        a[cols, rows] = self.packed
        return a

    def diagonal(self) -> np.ndarray:
        i = np.arange(self.n)
        return self.packed[i * (i + 1) // 2 + i]

    def triples(self):
        """Nonzero ``(i, j, value)`` entries with ``i >= j``."""
        rows, cols = np.tril_indices(self.n)
        nz = self.packed != 0
        return list(zip(rows[nz].tolist(), cols[nz].tolist(), self.packed[nz].tolist()))

    def __repr__(self):
        return f"{type(self).__name__}(n={self.n})"


class LaplacianMatrix(SymmetricMatrix):
    pass


def sample_matrix(spec: EnsembleSpec, rng) -> SymmetricMatrix:
    """Draw ``A_n``: zero diagonal, i.i.d. entries above it."""
    gen = as_generator(rng)
    n = spec.n
    rows, cols = np.tril_indices(n, k=-1)
    entries = spec.draw_entries(len(rows), gen)
    a = np.zeros((n, n))
    a[rows, cols] = entries
    return SymmetricMatrix(n, a[np.tril_indices(n)])


def row_sums(a: SymmetricMatrix) -> np.ndarray:
    return a.to_dense().sum(axis=1)


def laplacian(a: SymmetricMatrix) -> LaplacianMatrix:
    """``L = A - D`` with ``D_ii = Σ_{j≠i} A_ij``; ``A`` must have zero diagonal."""
    if np.any(a.diagonal() != 0):
        raise ValueError("adjacency matrix must have a zero diagonal")
    dense = a.to_dense()
    np.fill_diagonal(dense, -dense.sum(axis=1))
    return LaplacianMatrix(a.n, dense[np.tril_indices(a.n)])


def sample_row_sum_law(spec: EnsembleSpec, size: int, rng) -> np.ndarray:
    """``size`` i.i.d. copies of ``Σ_{j=1}^{n-1} A_1j``."""
    gen = as_generator(rng)
    if isinstance(spec, ErdosRenyi):
        return gen.binomial(spec.n - 1, spec.lam / spec.n, size=size).astype(float)
    out = np.empty(size)
    for i in range(size):
        out[i] = spec.draw_entries(spec.n - 1, gen).sum()
    return out


def independent_diagonal_laplacian(a: SymmetricMatrix, spec: EnsembleSpec, rng) -> LaplacianMatrix:
    """``A - D~`` with ``D~_ii`` i.i.d. row-sum copies independent of ``A``."""
    if a.n != spec.n:
        raise ValueError("matrix size does not match the ensemble spec")
    if np.any(a.diagonal() != 0):
        raise ValueError("adjacency matrix must have a zero diagonal")
    dense = a.to_dense()
    np.fill_diagonal(dense, -sample_row_sum_law(spec, a.n, rng))
    return LaplacianMatrix(a.n, dense[np.tril_indices(a.n)])


def entry_tail_check(spec: EnsembleSpec, t, epsilon: float, C: float, samples: int = 0, rng=None):
    """Compare ``n P(|A_12| >= t)`` with ``C t^-epsilon`` on a grid of ``t``.

    With ``samples > 0`` the probability is also estimated from that many
    fresh entries. Returns ``(exact, empirical_or_None, holds)``.
    """
    t = np.asarray(t, dtype=float)
    exact = spec.entry_tail(t)
    bound = C * t ** -epsilon
    empirical = None
    if samples:
        gen = as_generator(rng if rng is not None else 0)
        draws = np.sort(np.abs(spec.draw_entries(samples, gen)))
        empirical = spec.n * (samples - np.searchsorted(draws, t, side="left")) / samples
    holds = bool(np.all(exact <= bound * (1 + 1e-12)))
    return exact, empirical, holds
