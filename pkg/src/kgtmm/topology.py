"""Communication graphs, Metropolis-Hastings mixing matrices and their contraction parameter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from kgtmm import rng as rngmod
from kgtmm.errors import ConstructionError, ContractViolation, KGTMMError

GRAPH_KINDS = ("complete", "ring", "star", "path", "erdos_renyi")
ER_MAX_ATTEMPTS = 1000


@dataclass(frozen=True)
class Graph:
    n: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        if self.n < 1:
            raise ContractViolation("a graph needs at least one node")
        norm = set()
        for i, j in self.edges:
            if i == j:
                raise ContractViolation(f"self-loop ({i}, {i}) not allowed")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ContractViolation(f"edge ({i}, {j}) out of range")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(norm))

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n, self.n), dtype=bool)
        for i, j in self.edges:
            adj[i, j] = adj[j, i] = True
        return adj

    def degrees(self) -> np.ndarray:
        return self.adjacency().sum(axis=1)

    def is_connected(self) -> bool:
        adj = self.adjacency()
        seen = {0}
        frontier = [0]
        while frontier:
            i = frontier.pop()
            for j in np.flatnonzero(adj[i]):
                if j not in seen:
                    seen.add(int(j))
                    frontier.append(int(j))
        return len(seen) == self.n


@dataclass(frozen=True)
class MixingMatrix:
    """Symmetric doubly stochastic gossip matrix ``W`` with its certified contraction ``p``."""

    W: np.ndarray
    p: float

    def __post_init__(self):
        W = np.array(self.W, dtype=float)
        W.setflags(write=False)
        object.__setattr__(self, "W", W)
        check_mixing(W)

    @property
    def n(self) -> int:
        return self.W.shape[0]

    @classmethod
    def from_matrix(cls, W) -> MixingMatrix:
        W = np.asarray(W, dtype=float)
        check_mixing(W)
        return cls(W, spectral_gap(W))


def check_mixing(W: np.ndarray, atol: float = 1e-12) -> None:
    """Raise :class:`ContractViolation` unless ``W`` is symmetric, nonnegative and doubly stochastic."""
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ContractViolation(f"W must be square, got shape {W.shape}")
    if np.max(np.abs(W - W.T)) > atol:
        raise ContractViolation("W is not symmetric")
    if np.min(W) < 0:
        raise ContractViolation("W has negative entries")
    if np.max(np.abs(W.sum(axis=0) - 1)) > atol or np.max(np.abs(W.sum(axis=1) - 1)) > atol:
        raise ContractViolation("W is not doubly stochastic")


def build_graph(kind: str, n: int, seed: int = 0, prob: float = 0.3) -> Graph:
    """Build a connected graph of the requested family.

    ``erdos_renyi`` redraws (from the same seeded stream) until the sample is
    connected, giving up after 1000 attempts.
    """
    if n < 1:
        raise ContractViolation("n must be >= 1")
    if kind == "complete":
        edges = {(i, j) for i in range(n) for j in range(i + 1, n)}
    elif kind == "ring":
        edges = {(i, (i + 1) % n) for i in range(n)} if n > 1 else set()
        edges = {e for e in edges if e[0] != e[1]}
    elif kind == "star":
        edges = {(0, j) for j in range(1, n)}
    elif kind == "path":
        edges = {(i, i + 1) for i in range(n - 1)}
    elif kind == "erdos_renyi":
        if not 0 < prob <= 1:
            raise ContractViolation("erdos_renyi needs 0 < prob <= 1")
        g = rngmod.stream(seed, "graph", n)
        iu = np.triu_indices(n, k=1)
        for _ in range(ER_MAX_ATTEMPTS):
            mask = g.random(len(iu[0])) < prob
            graph = Graph(n, frozenset(zip(iu[0][mask].tolist(), iu[1][mask].tolist())))
            if graph.is_connected():
                return graph
        raise ConstructionError(f"no connected Erdos-Renyi graph (n={n}, prob={prob}) in {ER_MAX_ATTEMPTS} attempts")
    else:
        raise ContractViolation(f"unknown graph kind {kind!r}; expected one of {GRAPH_KINDS}")
    return Graph(n, frozenset(edges))


def metropolis_weights(graph: Graph) -> MixingMatrix:
    if not graph.is_connected():
        raise ContractViolation("Metropolis weights need a connected graph")
    deg = graph.degrees()
    W = np.zeros((graph.n, graph.n))
    for i, j in graph.edges:
        W[i, j] = W[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    np.fill_diagonal(W, 1.0 - W.sum(axis=1))
    return MixingMatrix(W, spectral_gap(W))


def spectral_gap(W) -> float:
    """Largest ``p`` with ``|XW - XJ|_F^2 <= (1-p) |X - XJ|_F^2``: ``1 - rho^2``.

    ``rho`` is the largest eigenvalue modulus of ``W`` on the complement of the
    all-ones direction, i.e. ``max(|lambda_2|, |lambda_n|)``.
    """
    W = np.asarray(W, dtype=float)
    n = W.shape[0]
    if n == 1:
        return 1.0
    try:
        lam = np.linalg.eigvalsh(0.5 * (W + W.T))
    except np.linalg.LinAlgError as exc:
        raise KGTMMError(f"eigensolver failed: {exc}") from exc
    lam = lam[::-1]
    rho = max(abs(lam[1]), abs(lam[-1]))
    return float(min(1.0, max(0.0, 1.0 - rho * rho)))


def averaging_matrix(n: int) -> np.ndarray:
    """``J = 11'/n``."""
    return np.full((n, n), 1.0 / n)
