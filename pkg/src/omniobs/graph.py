"""Weighted bidirected communication graphs.

Node ids are 0-based internally. Config files use 1-based edge lists;
:meth:`Graph.from_edges` converts.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .exceptions import EmptyR, NotConnected

RANK_RTOL = 1e-10
SPECTRAL_TOL = 1e-9


@dataclass(frozen=True)
class Graph:
    """Bidirected graph stored as a dense symmetric adjacency matrix."""

    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] == 0:
            raise ValueError(f"adjacency must be a nonempty square matrix, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("adjacency contains non-finite weights")
        if np.any(w < 0):
            raise ValueError("edge weights must be nonnegative")
        if np.any(np.diag(w) != 0):
            raise ValueError("self-loops are not allowed (a_ii must be 0)")
        if not np.array_equal(w, w.T):
            raise ValueError("adjacency must be symmetric (bidirected graph)")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def from_edges(cls, n, edges, one_based=True) -> "Graph":
        """Build from ``[i, j, weight]`` triples (or ``[i, j]`` for unit weight)."""
        w = np.zeros((n, n))
        off = 1 if one_based else 0
        for e in edges:
            if len(e) not in (2, 3):
                raise ValueError(f"edge {e!r} must be [i, j] or [i, j, weight]")
            i, j = int(e[0]) - off, int(e[1]) - off
            wt = float(e[2]) if len(e) == 3 else 1.0
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge {e!r} references a node outside 1..{n}")
            if i == j:
                raise ValueError(f"edge {e!r} is a self-loop")
            if wt <= 0:
                raise ValueError(f"edge {e!r} must have positive weight")
            w[i, j] = w[j, i] = wt
        return cls(w)

    def edges(self, one_based=True):
        off = 1 if one_based else 0
        i, j = np.nonzero(np.triu(self.weights))
        return [[int(a) + off, int(b) + off, float(self.weights[a, b])] for a, b in zip(i, j)]

    def neighbors(self, i):
        return np.flatnonzero(self.weights[i])

    def laplacian(self) -> np.ndarray:
        return laplacian(self)


def ring(n, weight=1.0) -> Graph:
    w = np.zeros((n, n))
    if n == 2:
        w[0, 1] = w[1, 0] = weight
    elif n > 2:
        for i in range(n):
            j = (i + 1) % n
            w[i, j] = w[j, i] = weight
    return Graph(w)


def path(n, weight=1.0) -> Graph:
    w = np.zeros((n, n))
    for i in range(n - 1):
        w[i, i + 1] = w[i + 1, i] = weight
    return Graph(w)


def complete(n, weight=1.0) -> Graph:
    return Graph(weight * (np.ones((n, n)) - np.eye(n)))


def random_connected(n, p, rng, weight_range=(0.5, 2.0)) -> Graph:
    """Erdos-Renyi graph conditioned on connectivity by rejection.

    A random spanning tree is overlaid when rejection takes too long.
    """
    lo, hi = weight_range
    for _ in range(50):
        mask = np.triu(rng.random((n, n)) < p, 1)
        w = np.where(mask, rng.uniform(lo, hi, (n, n)), 0.0)
        g = Graph(w + w.T)
        if is_connected(g):
            return g
    perm = rng.permutation(n)
    for k in range(1, n):
        a, b = perm[k], perm[rng.integers(k)]
        w[min(a, b), max(a, b)] = rng.uniform(lo, hi)
    w = np.triu(w, 1)
    return Graph(w + w.T)


def laplacian(g: Graph) -> np.ndarray:
    w = g.weights
    return np.diag(w.sum(axis=1)) - w


def is_connected(g: Graph) -> bool:
    """Breadth-first reachability from node 0 over positive-weight edges."""
    n = g.n
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in np.flatnonzero(g.weights[i] > 0):
            if not seen[j]:
                seen[j] = True
                queue.append(j)
    return bool(seen.all())


def algebraic_connectivity(g: Graph) -> float:
    if g.n == 1:
        return 0.0
    return float(np.linalg.eigvalsh(laplacian(g))[1])


def is_connected_spectral(g: Graph, tol=SPECTRAL_TOL) -> bool:
    return g.n == 1 or algebraic_connectivity(g) > tol


@dataclass(frozen=True)
class BarRow:
    index: int
    row: np.ndarray


def _check_R(g: Graph, R):
    R = sorted({int(r) for r in R})
    if not R:
        raise EmptyR("at least one agent must measure its own absolute output")
    bad = [r for r in R if not 0 <= r < g.n]
    if bad:
        raise ValueError(f"R contains node ids outside 0..{g.n - 1}: {bad}")
    return R


def bar_rows(g: Graph, R) -> list:
    """Mixed rows: identity row for agents in R, Laplacian row otherwise."""
    R = _check_R(g, R)
    if not is_connected(g):
        raise NotConnected("mixed rows require a connected graph")
    lap = laplacian(g)
    eye = np.eye(g.n)
    return [BarRow(i, eye[i].copy() if i in R else lap[i].copy()) for i in range(g.n)]


def bar_matrix(rows) -> np.ndarray:
    return np.vstack([r.row for r in rows])


def numerical_rank(m, rtol=RANK_RTOL) -> int:
    m = np.atleast_2d(np.asarray(m))
    if m.size == 0:
        return 0
    s = np.linalg.svd(m, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def verify_bar_nonsingular(rows) -> bool:
    m = bar_matrix(rows)
    return numerical_rank(m) == m.shape[0]
