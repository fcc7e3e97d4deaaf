"""Dense real-symmetric eigenvalues: Householder tridiagonalization + implicit QL.

Eigenvectors are never formed. Both kernels are compiled with numba and
touch only the lower triangle, row by row.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .ensembles import SymmetricMatrix

MAX_QL_ITERATIONS = 50


class EigenConvergenceError(RuntimeError):
    def __init__(self, index):
        super().__init__(f"implicit QL failed to converge for eigenvalue {index} "
                         f"within {MAX_QL_ITERATIONS} iterations")
        self.index = index


@njit(cache=True)
def _householder_lower(a, keep_vectors):
    n = a.shape[0]
    d = np.zeros(n)
    e = np.zeros(n)
    v = np.empty(n)
    p = np.empty(n)
    for k in range(n - 2):
        m = n - k - 1
        off = k + 1
        colmax = 0.0
        for i in range(m):
            colmax = max(colmax, abs(a[off + i, k]))
        d[k] = a[k, k]
        if colmax == 0.0:
            e[k] = 0.0
            if keep_vectors:
                for i in range(m):
                    a[off + i, k] = 0.0
            continue
        # work with the column divided by its largest entry so norms cannot
        # underflow; the reflector I - v v^T / h is invariant under v -> cv, h -> c^2 h
        norm2 = 0.0
        for i in range(m):
            v[i] = a[off + i, k] / colmax
            norm2 += v[i] * v[i]
        alpha = np.sqrt(norm2)
        if v[0] < 0.0:
            alpha = -alpha
        h = norm2 + alpha * v[0]  # = |v|^2 / 2 after the update below
        v[0] += alpha
        # p = S v / h with S the trailing block, read from its lower triangle
        for i in range(m):
            p[i] = 0.0
        for i in range(m):
            row = off + i
            vi = v[i]
            acc = 0.0
            for j in range(i):
                s = a[row, off + j]
                acc += s * v[j]
                p[j] += s * vi
            p[i] += acc + a[row, off + i] * vi
        for i in range(m):
            p[i] /= h
        kk = 0.0
        for i in range(m):
            kk += v[i] * p[i]
        kk /= 2.0 * h
        for i in range(m):
            p[i] -= kk * v[i]
        for i in range(m):
            row = off + i
            vi = v[i]
            qi = p[i]
            for j in range(i + 1):
                a[row, off + j] -= vi * p[j] + qi * v[j]
        e[k] = -alpha * colmax
        if keep_vectors:
            for i in range(m):
                a[off + i, k] = v[i]
            a[k, k + 1] = h
    if n >= 2:
        d[n - 2] = a[n - 2, n - 2]
        e[n - 2] = a[n - 1, n - 2]
    if n >= 1:
        d[n - 1] = a[n - 1, n - 1]
    return d, e


@njit(cache=True)
def _implicit_ql(d, e, maxit):
    """Eigenvalues of the tridiagonal (d, e) in place; e[n-1] must be 0.

    Returns -1 on success, else the index whose iteration stalled.
    """
    n = d.shape[0]
    eps = np.finfo(np.float64).eps
    # absolute floor: splitting below ulp*|T| changes eigenvalues by less than
    # the backward error already made by the Householder reduction
    anorm = 0.0
    for i in range(n):
        row = abs(d[i]) + abs(e[i]) + (abs(e[i - 1]) if i > 0 else 0.0)
        if row > anorm:
            anorm = row
    floor = eps * anorm
    for l in range(n):
        it = 0
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) <= eps * dd or abs(e[m]) <= floor:
                    break
                m += 1
            if m == l:
                break
            if it == maxit:
                return l
            it += 1
            # Wilkinson shift from the leading 2x2 block
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = np.hypot(g, 1.0)
            if g >= 0.0:
                g = d[m] - d[l] + e[l] / (g + r)
            else:
                g = d[m] - d[l] + e[l] / (g - r)
            s = 1.0
            c = 1.0
            p = 0.0
            i = m - 1
            early = False
            while i >= l:
                f = s * e[i]
                b = c * e[i]
                r = np.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    early = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                i -= 1
            if early:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0
    return -1


@dataclass(frozen=True)
class TridiagonalForm:
    diagonal: np.ndarray
    subdiagonal: np.ndarray
    transform: Optional[np.ndarray] = None

    def to_dense(self) -> np.ndarray:
        return np.diag(self.diagonal) + np.diag(self.subdiagonal, 1) + np.diag(self.subdiagonal, -1)

    def trace(self) -> float:
        return float(self.diagonal.sum())

    def frobenius2(self) -> float:
        return float(np.sum(self.diagonal**2) + 2 * np.sum(self.subdiagonal**2))


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues sorted non-increasing."""

    eigenvalues: np.ndarray

    def __len__(self):
        return len(self.eigenvalues)

    def to_text(self) -> str:
        return "".join(f"{x:.17g}\n" for x in self.eigenvalues)

    @classmethod
    def from_text(cls, text: str) -> "Spectrum":
        values = np.array([float(line) for line in text.split()])
        return cls(np.sort(values)[::-1])


def _as_dense(m) -> np.ndarray:
    a = m.to_dense() if isinstance(m, SymmetricMatrix) else np.array(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix")
    if a.shape[0] < 1:
        raise ValueError("matrix must be at least 1x1")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has NaN or infinite entries")
    return a


def _pow2_exponent(*arrays) -> int:
    """``k`` with ``max |x| * 2^-k`` in ``[0.5, 1)``; scaling by ``2^-k`` is exact.

    Keeps sums of squares away from underflow and overflow.
    """
    top = max((float(np.max(np.abs(x))) for x in arrays if np.size(x)), default=0.0)
    return int(np.frexp(top)[1]) if top > 0 else 0


def tridiagonalize(m, accumulate: bool = False) -> TridiagonalForm:
    """Orthogonal similarity reduction ``Q^T M Q = T`` (lower triangle of ``M`` is used)."""
    a = np.ascontiguousarray(_as_dense(m))
    n = a.shape[0]
    k = _pow2_exponent(np.tril(a))
    a = np.ldexp(a, -k)
    d, e = _householder_lower(a, accumulate)
    d, e = np.ldexp(d, k), np.ldexp(e, k)
    q = None
    if accumulate:
        q = np.eye(n)
        for k in range(n - 3, -1, -1):
            v = a[k + 1:, k]
            h = a[k, k + 1]
            if h == 0.0 or not np.any(v):
                continue
            block = q[k + 1:, k + 1:]
            block -= np.outer(v, v @ block) / h
    return TridiagonalForm(d, e[: max(n - 1, 0)].copy(), q)


def tridiagonal_eigenvalues(diagonal, subdiagonal) -> np.ndarray:
    d = np.array(diagonal, dtype=float)
    e = np.zeros(len(d))
    e[: len(d) - 1] = subdiagonal
    k = _pow2_exponent(d, e)
    d, e = np.ldexp(d, -k), np.ldexp(e, -k)
    status = _implicit_ql(d, e, MAX_QL_ITERATIONS)
    if status >= 0:
        raise EigenConvergenceError(int(status))
    return np.ldexp(np.sort(d)[::-1], k)


def spectrum(m, check: bool = False) -> Spectrum:
    """All eigenvalues of a real symmetric matrix, sorted non-increasing.

    With ``check=True`` the trace and Frobenius norm of the input are
    compared with the eigenvalue sums (relative 1e-10) and an
    ``AssertionError`` is raised on violation.
    """
    a = _as_dense(m)
    form = tridiagonalize(a)
    values = tridiagonal_eigenvalues(form.diagonal, form.subdiagonal)
    if check:
        check_conservation(a, values)
    values.setflags(write=False)
    return Spectrum(values)


def check_conservation(a, values, rtol: float = 1e-10):
    k = _pow2_exponent(a)
    a, values = np.ldexp(a, -k), np.ldexp(np.asarray(values, dtype=float), -k)
    fro2 = float(np.sum(a * a))
    scale = max(abs(float(np.trace(a))), np.sqrt(fro2), np.finfo(float).tiny)
    trace_err = abs(float(values.sum()) - float(np.trace(a))) / scale
    fro_err = abs(float(np.sum(values**2)) - fro2) / max(fro2, np.finfo(float).tiny)
    if trace_err > rtol or fro_err > rtol:
        raise AssertionError(f"spectrum violates conservation: trace {trace_err:.2e}, frobenius {fro_err:.2e}")
    if np.any(np.diff(values) > 0):
        raise AssertionError("eigenvalues are not sorted non-increasing")
    return trace_err, fro_err


def esm(s: Spectrum):
    """Empirical spectral measure: mass 1/n at each eigenvalue (equal ones merged)."""
    from .measures import MeasureEstimate

    locations, counts = np.unique(np.asarray(s.eigenvalues), return_counts=True)
    return MeasureEstimate.from_atoms(locations, counts / len(s), total_mass=1.0)


def empirical_stieltjes(s: Spectrum, z):
    """(1/n) Σ 1/(λ_i - z), vectorized over ``z``; requires Im z > 0."""
    z_arr = np.asarray(z, dtype=complex)
    if np.any(z_arr.imag <= 0):
        raise ValueError("Stieltjes transform needs Im z > 0")
    lam = np.asarray(s.eigenvalues)
    out = np.array([np.mean(1.0 / (lam - zi)) for zi in z_arr.ravel()]).reshape(z_arr.shape)
    return complex(out) if out.ndim == 0 else out
