"""Truncated Poisson weighted infinite trees with loops and their root resolvent.

A node ``v`` at depth below ``H`` gets children from an independent Poisson
process (points with ``|y| >= delta``, the ``B`` largest kept). Loops carry
``-y_parent - Σ_k y_vk`` over *retained* children, so the finite matrix is
exactly the Laplacian-type operator of the truncated weighted tree.

The root resolvent ``<e_root, (L - z)^{-1} e_root>`` is computed either by
the bottom-up recursion

    s_v = -(z - Σ_k y_vk / (s_vk y_vk - 1))^{-1},    s_leaf = -1/z,

where each ``s_vk`` is the root resolvent of the subtree hanging at ``vk``
with its own root loop ``-Σ(children)``, or by solving the linear system
directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as sparse_linalg

from .point_processes import (
    LevyMeasure,
    Truncation,
    is_infinite,
    sample_point_process_batch,
    NotSummableError,
    AlphaStable,
)
from .streams import RandomStream, as_generator

DENOMINATOR_FLOOR = 1e-14
DENSE_LIMIT = 256


class HerglotzError(ArithmeticError):
    """A resolvent left {Im s > 0, |s| <= 1/Im z}; indicates a bug, never data."""


@dataclass(frozen=True)
class TruncationParams:
    depth: int
    branching: int
    delta: float = 0.0

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if self.branching < 1:
            raise ValueError("branching must be >= 1")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")

    def truncation(self) -> Truncation:
        return Truncation(self.delta, self.branching)

    def check_for(self, m: LevyMeasure):
        if is_infinite(m) and not self.delta > 0:
            raise ValueError("an infinite-mass measure needs delta > 0")
        if isinstance(m, AlphaStable) and m.alpha >= 1:
            raise NotSummableError(f"alpha={m.alpha} >= 1: loop weights are not summable")

    def max_nodes(self) -> int:
        b, h = self.branching, self.depth
        return h + 1 if b == 1 else (b ** (h + 1) - 1) // (b - 1)


def default_params(m: LevyMeasure, depth: int = 8) -> TruncationParams:
    if is_infinite(m):
        return TruncationParams(depth, 256, 1e-3)
    return TruncationParams(depth, 64, 0.0)


@dataclass(frozen=True)
class TruncatedTree:
    """Nodes in breadth-first order; node 0 is the root."""

    parent: np.ndarray
    rank: np.ndarray
    depth: np.ndarray
    edge_weight: np.ndarray
    loop_weight: np.ndarray
    params: TruncationParams

    def __len__(self):
        return len(self.parent)

    def children(self, v: int) -> np.ndarray:
        return np.flatnonzero(self.parent == v)

    def word(self, v: int) -> tuple:
        out = []
        while v > 0:
            out.append(int(self.rank[v]))
            v = int(self.parent[v])
        return tuple(reversed(out))

    def to_dense(self) -> np.ndarray:
        n = len(self)
        mat = np.diag(self.loop_weight.astype(float))
        child = np.arange(1, n)
        mat[self.parent[1:], child] = self.edge_weight[1:]
        mat[child, self.parent[1:]] = self.edge_weight[1:]
        return mat

    def to_text(self) -> str:
        """Parent-pointer listing: word, parent word, edge weight, loop weight."""
        fmt_word = lambda w: ".".join(map(str, w)) if w else "root"  # noqa: E731
        lines = ["word\tparent\tedge_weight\tloop_weight"]
        for v in range(len(self)):
            parent = fmt_word(self.word(int(self.parent[v]))) if v else "-"
            lines.append(f"{fmt_word(self.word(v))}\t{parent}\t{self.edge_weight[v]:.17g}\t{self.loop_weight[v]:.17g}")
        return "\n".join(lines) + "\n"


def loop_identity_residuals(tree: TruncatedTree) -> np.ndarray:
    """loop + (parent edge + Σ children) per node; zero when loops follow the truncated rule."""
    out = np.empty(len(tree))
    for v in range(len(tree)):
        kids = tree.edge_weight[tree.children(v)]
        out[v] = tree.loop_weight[v] + (tree.edge_weight[v] + np.sum(kids))
    return out


def tree_from_children(children_weights: dict, params: Optional[TruncationParams] = None) -> TruncatedTree:
    """Build a tree from ``{word: [child weights]}`` (words are tuples, root is ``()``)."""
    parent, rank, depth, edge = [-1], [0], [0], [0.0]
    words = [()]
    v = 0
    while v < len(words):
        for k, y in enumerate(children_weights.get(words[v], ()), start=1):
            words.append(words[v] + (k,))
            parent.append(v)
            rank.append(k)
            depth.append(depth[v] + 1)
            edge.append(float(y))
        v += 1
    if params is None:
        params = TruncationParams(max(depth), max(1, max((len(c) for c in children_weights.values()), default=1)))
    return _assemble(np.array(parent), np.array(rank), np.array(depth), np.array(edge), params)


def _assemble(parent, rank, depth, edge, params) -> TruncatedTree:
    n = len(parent)
    child_sum = np.zeros(n)
    np.add.at(child_sum, parent[1:], edge[1:])
    loop = -(edge + child_sum)
    loop[0] = -child_sum[0]
    return TruncatedTree(parent, rank, depth, edge, loop, params)


def sample_tree(m: LevyMeasure, params: TruncationParams, rng) -> TruncatedTree:
    """Draw a truncated PWITL realization.

    All processes on one level are drawn in a single batch call; the law is
    the same as drawing ``sample_point_process`` node by node, and children
    come out sorted by decreasing ``|y|``.
    """
    params.check_for(m)
    gen = as_generator(rng)
    trunc = params.truncation()
    parent, rank, depth, edge = [np.array([-1])], [np.array([0])], [np.array([0])], [np.array([0.0])]
    first, width = 0, 1
    for h in range(params.depth):
        values, counts = sample_point_process_batch(m, trunc, width, gen, sort=True)
        owner = np.repeat(np.arange(width), counts)
        starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
        parent.append(first + owner)
        rank.append(np.arange(len(values)) - starts[owner] + 1)
        depth.append(np.full(len(values), h + 1))
        edge.append(values)
        first, width = first + width, len(values)
        if width == 0:
            break
    return _assemble(np.concatenate(parent), np.concatenate(rank), np.concatenate(depth),
                     np.concatenate(edge), params)


@dataclass(frozen=True)
class RootResolventSample:
    z: complex
    value: complex
    method: str


def _check_z(z):
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    if np.any(z.imag <= 0):
        raise ValueError("resolvent needs Im z > 0")
    return z


def _check_herglotz(s, z):
    eta = z.imag
    if not (np.all(s.imag > 0) and np.all(np.abs(s) * eta <= 1 + 1e-12)):
        raise HerglotzError("resolvent value left the Herglotz region")


def _child_terms(s_child, y):
    denom = s_child * y[..., None] - 1.0
    small = np.abs(denom) < DENOMINATOR_FLOOR
    if np.any(small):
        denom = np.where(small, DENOMINATOR_FLOOR, denom)
    return y[..., None] / denom, int(small.sum())


def _resolvent_values(tree: TruncatedTree, z: np.ndarray):
    n = len(tree)
    s = np.empty((n, len(z)), dtype=complex)
    acc = np.zeros((n, len(z)), dtype=complex)
    floored = 0
    for h in range(int(tree.depth.max()), -1, -1):
        level = np.flatnonzero(tree.depth == h)
        s[level] = -1.0 / (z[None, :] - acc[level])
        _check_herglotz(s[level], z)
        if h == 0:
            break
        terms, k = _child_terms(s[level], tree.edge_weight[level])
        floored += k
        np.add.at(acc, tree.parent[level], terms)
    return s, floored


def tree_resolvent_recursive(tree: TruncatedTree, z) -> RootResolventSample:
    zz = _check_z(z)
    s, _ = _resolvent_values(tree, zz)
    return RootResolventSample(complex(zz[0]), complex(s[0, 0]), "recursive")


def node_resolvents(tree: TruncatedTree, z) -> np.ndarray:
    """Subtree root resolvent at every node (vectorized over ``z``)."""
    zz = _check_z(z)
    return _resolvent_values(tree, zz)[0]


def solve_complex(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gaussian elimination with partial pivoting for a complex square system."""
    a = np.array(a, dtype=complex)
    x = np.array(b, dtype=complex)
    n = a.shape[0]
    scale = max(np.abs(a).max(), 1e-300)
    for k in range(n):
        piv = k + int(np.argmax(np.abs(a[k:, k])))
        if abs(a[piv, k]) <= 1e-15 * scale:
            raise ZeroDivisionError(f"pivot breakdown at column {k}")
        if piv != k:
            a[[k, piv]] = a[[piv, k]]
            x[[k, piv]] = x[[piv, k]]
        factors = a[k + 1:, k] / a[k, k]
        a[k + 1:, k:] -= factors[:, None] * a[k, k:][None, :]
        x[k + 1:] -= factors * x[k]
    for k in range(n - 1, -1, -1):
        x[k] = (x[k] - a[k, k + 1:] @ x[k + 1:]) / a[k, k]
    return x


def tree_resolvent_direct(tree: TruncatedTree, z, dense_limit: int = DENSE_LIMIT) -> RootResolventSample:
    """Solve ``(L_t - z) x = e_root`` and return ``x_root``.

    Up to ``dense_limit`` nodes the dense system goes through
    :func:`solve_complex`. Larger trees use SuperLU's sparse LU with strict
    partial pivoting (``diag_pivot_thresh=1``), since a dense matrix of a
    deep heavy-tailed tree would not fit in memory.
    """
    zz = _check_z(z)
    z0 = complex(zz[0])
    n = len(tree)
    rhs = np.zeros(n, dtype=complex)
    rhs[0] = 1.0
    if n <= dense_limit:
        mat = tree.to_dense().astype(complex)
        mat[np.diag_indices_from(mat)] -= z0
        x = solve_complex(mat, rhs)
    else:
        child = np.arange(1, n)
        rows = np.concatenate((np.arange(n), tree.parent[1:], child))
        cols = np.concatenate((np.arange(n), child, tree.parent[1:]))
        vals = np.concatenate((tree.loop_weight - z0, tree.edge_weight[1:], tree.edge_weight[1:])).astype(complex)
        mat = sparse.csc_matrix((vals, (rows, cols)), shape=(n, n))
        x = sparse_linalg.splu(mat, permc_spec="COLAMD", diag_pivot_thresh=1.0).solve(rhs)
    return RootResolventSample(z0, complex(x[0]), "direct")


def _ensemble_batch(m, params, z, count, gen):
    trunc = params.truncation()
    owners, weights = [], []
    width = count
    for _ in range(params.depth):
        values, counts = sample_point_process_batch(m, trunc, width, gen)
        owners.append(np.repeat(np.arange(width), counts))
        weights.append(values)
        width = len(values)
    s = np.broadcast_to(-1.0 / z, (width, len(z))).astype(complex)
    for h in range(params.depth - 1, -1, -1):
        y = weights[h]
        terms, _ = _child_terms(s, y)
        parents = len(owners[h - 1]) if h > 0 else count
        acc = np.empty((parents, len(z)), dtype=complex)
        for g in range(len(z)):
            acc[:, g] = (np.bincount(owners[h], weights=terms[:, g].real, minlength=parents)
                         + 1j * np.bincount(owners[h], weights=terms[:, g].imag, minlength=parents))
        s = -1.0 / (z[None, :] - acc)
        _check_herglotz(s, z)
    return s


def sample_root_resolvent_ensemble(m: LevyMeasure, params: TruncationParams, z, count: int, rng,
                                   batch_size: int = 1000) -> np.ndarray:
    """``count`` i.i.d. recursive root resolvents over fresh trees.

    Trees are drawn level by level in batches of ``batch_size``; batch ``b``
    uses ``rng.child("tree-batch", b)`` when ``rng`` is a RandomStream, so
    results do not depend on how batches are distributed over workers.
    Returns an array of shape ``(count,)`` for scalar ``z``, else
    ``(count, len(z))``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    params.check_for(m)
    scalar = np.ndim(z) == 0
    zz = _check_z(z)
    out = np.empty((count, len(zz)), dtype=complex)
    gen = None if isinstance(rng, RandomStream) else as_generator(rng)
    for b, start in enumerate(range(0, count, batch_size)):
        size = min(batch_size, count - start)
        g = rng.child("tree-batch", b).generator() if gen is None else gen
        out[start:start + size] = _ensemble_batch(m, params, zz, size, g)
    return out[:, 0] if scalar else out


def ensemble_batch(m, params, z, batch_index: int, count: int, batch_size: int, stream: RandomStream):
    """One batch of :func:`sample_root_resolvent_ensemble`; used by parallel drivers."""
    zz = _check_z(z)
    start = batch_index * batch_size
    size = min(batch_size, count - start)
    return _ensemble_batch(m, params, zz, size, stream.child("tree-batch", batch_index).generator())
