"""Undirected weighted communication graphs, their Laplacians and contraction factors."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

ZERO_EIG_TOL = 1e-10
MAX_RANDOM_DRAWS = 100
DEFAULT_RHO = 0.9


class GraphError(ValueError):
    """The graph violates connectivity, symmetry or the row-sum bound."""


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    """Symmetric nonnegative weights with zero diagonal and every row sum below one.

    ``weights`` is a dense ``(n, n)`` array; an edge exists wherever the weight
    is positive.  Construction validates the whole contract.
    """

    weights: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] < 2:
            raise GraphError("weights must be a square matrix with n >= 2")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise GraphError("weights must be finite and nonnegative")
        if np.any(np.diag(w) != 0):
            raise GraphError("self-loops are not allowed (w_ii must be 0)")
        if not np.array_equal(w, w.T):
            raise GraphError("weights must be symmetric")
        rows = w.sum(axis=1)
        bad = np.flatnonzero(rows >= 1)
        if bad.size:
            i = int(bad[0])
            raise GraphError(f"row sum of agent {i} is {rows[i]:g}; every row must sum to < 1")
        if not _connected(w > 0):
            raise GraphError("graph is not connected")

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @cached_property
    def edges(self) -> list[tuple[int, int]]:
        """Undirected edges ``(i, j)`` with ``i < j`` in lexicographic order."""
        iu, ju = np.nonzero(np.triu(self.weights > 0))
        return list(zip(iu.tolist(), ju.tolist()))

    @cached_property
    def neighbors(self) -> list[list[int]]:
        return [np.flatnonzero(row > 0).tolist() for row in self.weights]

    def weight(self, i: int, j: int) -> float:
        return float(self.weights[i, j])

    def to_adjacency_text(self) -> str:
        """One line per agent: ``i: j(w_ij) k(w_ik) ...``."""
        lines = []
        for i, nbrs in enumerate(self.neighbors):
            lines.append(f"{i}: " + " ".join(f"{j}({self.weights[i, j]:g})" for j in nbrs))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class SpectralSummary:
    eigenvalues: np.ndarray
    beta: float

    @property
    def lambda2(self) -> float:
        return float(self.eigenvalues[1])

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])


def _connected(adj: np.ndarray) -> bool:
    n = adj.shape[0]
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        i = stack.pop()
        for j in np.flatnonzero(adj[i] & ~seen):
            seen[j] = True
            stack.append(int(j))
    return bool(seen.all())


def _uniform(adj: np.ndarray, w: float, kind: str) -> WeightedGraph:
    return WeightedGraph(np.where(adj, float(w), 0.0), kind=kind)


def cycle(n: int, w: float = 0.3) -> WeightedGraph:
    if n < 3:
        raise GraphError("a cycle needs n >= 3")
    adj = np.zeros((n, n), dtype=bool)
    idx = np.arange(n)
    adj[idx, (idx + 1) % n] = adj[(idx + 1) % n, idx] = True
    return _uniform(adj, w, "cycle")


def path(n: int, w: float = 0.3) -> WeightedGraph:
    adj = np.zeros((n, n), dtype=bool)
    idx = np.arange(n - 1)
    adj[idx, idx + 1] = adj[idx + 1, idx] = True
    return _uniform(adj, w, "path")


def complete(n: int, w: float | None = None) -> WeightedGraph:
    adj = ~np.eye(n, dtype=bool)
    if w is None:
        w = DEFAULT_RHO / n
    return _uniform(adj, w, "complete")


def erdos_renyi(n: int, p: float, rng: np.random.Generator, w: float | None = None,
                rho: float = DEFAULT_RHO) -> WeightedGraph:
    """Connected G(n, p) draw, retried up to ``MAX_RANDOM_DRAWS`` times.

    Without an explicit ``w`` every edge gets ``rho / (max_degree + 1)``.
    """
    for _ in range(MAX_RANDOM_DRAWS):
        upper = np.triu(rng.random((n, n)) < p, k=1)
        adj = upper | upper.T
        if _connected(adj):
            weight = w if w is not None else rho / (adj.sum(axis=1).max() + 1)
            return _uniform(adj, weight, "erdos-renyi")
    raise GraphError(f"no connected G({n}, {p}) draw in {MAX_RANDOM_DRAWS} attempts")


def build_graph(block: dict) -> WeightedGraph:
    """Build a graph from a block block such as ``{"kind": "cycle", "n": 10, "weight": 0.3}``.

    Recognized kinds: ``cycle``, ``path``, ``complete``, ``erdos-renyi`` (which
    also takes ``p`` and ``seed``).  A missing weight falls back to the
    max-degree rule ``rho / (max_degree + 1)``.
    """
    kind = block.get("kind", "cycle")
    n = int(block["n"])
    if n < 2:
        raise GraphError("need at least two agents")
    w = block.get("weight")
    rho = float(block.get("rho", DEFAULT_RHO))
    if kind == "cycle":
        return cycle(n, rho / 3 if w is None else w)
    if kind == "path":
        return path(n, rho / 3 if w is None else w)
    if kind == "complete":
        return complete(n, rho / n if w is None else w)
    if kind == "erdos-renyi":
        rng = np.random.default_rng(block.get("seed", 0))
        return erdos_renyi(n, float(block.get("p", 0.3)), rng, w=w, rho=rho)
    raise GraphError(f"unknown graph kind {kind!r}")


def laplacian(g: WeightedGraph) -> np.ndarray:
    w = g.weights
    return np.diag(w.sum(axis=1)) - w


def iteration_matrix(g: WeightedGraph) -> np.ndarray:
    """``I - L``: symmetric, doubly stochastic and entrywise nonnegative."""
    return np.eye(g.n) - laplacian(g)


def spectrum(g: WeightedGraph) -> SpectralSummary:
    try:
        lam = np.linalg.eigvalsh(laplacian(g))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise ArithmeticError(f"eigensolver failed: {exc}") from exc
    if abs(lam[0]) > ZERO_EIG_TOL:
        raise ArithmeticError(f"smallest Laplacian eigenvalue {lam[0]:g} is not zero")
    beta = max(abs(1 - lam[1]), abs(1 - lam[-1]))
    return SpectralSummary(lam, float(beta))


def contraction_factor(g: WeightedGraph) -> float:
    return spectrum(g).beta
