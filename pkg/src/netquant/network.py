"""Directed networks: adjacency, row normalisation, random generators.

An edge ``(i, j)`` means node ``i`` follows node ``j`` (``a_ij = 1``).
Self-loops are never allowed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import DataError, DomainError

__all__ = [
    "AdjacencyMatrix",
    "NetworkWeights",
    "row_normalize",
    "gen_dyad",
    "gen_sbm",
    "gen_powerlaw",
    "apply_weights",
    "density",
    "powerlaw_pmf",
    "read_edgelist",
    "write_edgelist",
]


@dataclass(frozen=True)
class AdjacencyMatrix:
    """Binary directed adjacency stored as sorted, de-duplicated edge arrays."""

    n: int
    src: np.ndarray = field(repr=False)
    dst: np.ndarray = field(repr=False)

    def __post_init__(self):
        n = int(self.n)
        if n < 1:
            raise DomainError("a network needs at least one node")
        src = np.asarray(self.src, dtype=np.int64).ravel()
        dst = np.asarray(self.dst, dtype=np.int64).ravel()
        if src.shape != dst.shape:
            raise DomainError("src and dst must have equal length")
        if src.size:
            if src.min() < 0 or dst.min() < 0 or src.max() >= n or dst.max() >= n:
                raise DomainError(f"edge endpoint outside [0, {n})")
            if np.any(src == dst):
                raise DomainError("self-loops are not allowed")
            key = np.unique(src * n + dst)
            src, dst = key // n, key % n
        src.setflags(write=False)
        dst.setflags(write=False)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "dst", dst)

    @classmethod
    def from_dense(cls, a) -> "AdjacencyMatrix":
        a = np.asarray(a)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DomainError("adjacency must be square")
        if np.any(np.diag(a) != 0):
            raise DomainError("self-loops are not allowed")
        src, dst = np.nonzero(a)
        return cls(a.shape[0], src, dst)

    @classmethod
    def empty(cls, n: int) -> "AdjacencyMatrix":
        return cls(n, np.empty(0, np.int64), np.empty(0, np.int64))

    @property
    def n_edges(self) -> int:
        return int(self.src.size)

    def out_degree(self) -> np.ndarray:
        return np.bincount(self.src, minlength=self.n)

    def in_degree(self) -> np.ndarray:
        return np.bincount(self.dst, minlength=self.n)

    def to_dense(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        a[self.src, self.dst] = 1.0
        return a


@dataclass(frozen=True)
class NetworkWeights:
    """Row-normalised network matrix W in CSR form.

    ``isolated_count`` is the number of all-zero rows (nodes following nobody).
    """

    matrix: sparse.csr_matrix = field(repr=False)
    isolated_count: int = 0

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    def inf_norm(self) -> float:
        return float(np.max(np.abs(self.row_sums()))) if self.n else 0.0

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    @classmethod
    def from_dense(cls, w) -> "NetworkWeights":
        m = sparse.csr_matrix(np.asarray(w, dtype=float))
        iso = int(np.sum(np.diff(m.indptr) == 0))
        return cls(m, iso)


def row_normalize(a: AdjacencyMatrix) -> NetworkWeights:
    """W with ``w_ij = a_ij / outdegree(i)``; zero rows for isolated nodes."""
    deg = a.out_degree()
    vals = 1.0 / deg[a.src] if a.n_edges else np.empty(0)
    m = sparse.csr_matrix((vals, (a.src, a.dst)), shape=(a.n, a.n))
    m.sort_indices()
    return NetworkWeights(m, int(np.sum(deg == 0)))


def dyad_probabilities(n: int) -> tuple[float, float]:
    """(P(mutual), P(one specific direction only)) for the dyad model."""
    return 2.0 / n, 0.5 * n ** -0.8


def gen_dyad(n: int, rng: np.random.Generator) -> AdjacencyMatrix:
    """Dyad-independence network.

    Each unordered pair is mutual with probability 2/n and one-directional
    (each way) with probability 0.5 n^-0.8.
    """
    if n < 2:
        raise DomainError("dyad model needs n >= 2")
    p_mut, p_one = dyad_probabilities(n)
    if p_mut + 2 * p_one > 1:
        raise DomainError(f"dyad probabilities exceed 1 for n={n}")
    i, j = np.triu_indices(n, k=1)
    u = rng.random(i.size)
    mutual = u < p_mut
    fwd = (u >= p_mut) & (u < p_mut + p_one)
    back = (u >= p_mut + p_one) & (u < p_mut + 2 * p_one)
    src = np.concatenate([i[mutual], j[mutual], i[fwd], j[back]])
    dst = np.concatenate([j[mutual], i[mutual], j[fwd], i[back]])
    return AdjacencyMatrix(n, src, dst)


def sbm_probabilities(n: int) -> tuple[float, float]:
    """(within-block, between-block) edge probabilities."""
    return 0.3 * n ** -0.3, 0.3 / n


def gen_sbm(n: int, blocks: int, rng: np.random.Generator, return_labels: bool = False):
    """Stochastic block model with uniformly random block labels."""
    if not 1 <= blocks <= n:
        raise DomainError("need 1 <= blocks <= n")
    labels = rng.integers(0, blocks, size=n)
    p_in, p_out = sbm_probabilities(n)
    same = labels[:, None] == labels[None, :]
    prob = np.where(same, p_in, p_out)
    np.fill_diagonal(prob, 0.0)
    src, dst = np.nonzero(rng.random((n, n)) < prob)
    adj = AdjacencyMatrix(n, src, dst)
    return (adj, labels) if return_labels else adj


def powerlaw_pmf(n: int, exponent: float = 2.5) -> tuple[np.ndarray, np.ndarray]:
    """Support {1..n-1} and normalised probabilities proportional to k^-exponent."""
    k = np.arange(1, n, dtype=float)
    w = k ** -exponent
    return k.astype(np.int64), w / w.sum()


def gen_powerlaw(n: int, rng: np.random.Generator, exponent: float = 2.5, return_degrees: bool = False):
    """Power-law in-degree network.

    Node ``i`` receives in-degree ``d_i`` from the truncated discrete power law
    and ``d_i`` distinct followers drawn uniformly from the other nodes.
    """
    if n < 2:
        raise DomainError("power-law model needs n >= 2")
    support, pmf = powerlaw_pmf(n, exponent)
    degrees = rng.choice(support, size=n, p=pmf)
    src_parts, dst_parts = [], []
    for i, d in enumerate(degrees):
        picks = rng.choice(n - 1, size=int(d), replace=False)
        picks[picks >= i] += 1
        src_parts.append(picks)
        dst_parts.append(np.full(int(d), i, dtype=np.int64))
    adj = AdjacencyMatrix(n, np.concatenate(src_parts), np.concatenate(dst_parts))
    return (adj, degrees) if return_degrees else adj


def apply_weights(w: NetworkWeights, y, power: int = 1) -> np.ndarray:
    """W^power @ y by repeated sparse products; ``y`` may be (n,) or (n, T)."""
    y = np.asarray(y, dtype=float)
    if power < 1:
        raise DomainError("power must be >= 1")
    if y.shape[0] != w.n:
        raise DomainError(f"vector length {y.shape[0]} does not match network size {w.n}")
    out = y
    for _ in range(power):
        out = w.matrix @ out
    return np.asarray(out)


def density(a: AdjacencyMatrix) -> float:
    if a.n < 2:
        raise DomainError("density needs n >= 2")
    return a.n_edges / (a.n * (a.n - 1))


def write_edgelist(a: AdjacencyMatrix, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["src", "dst"])
        wr.writerows(zip(a.src.tolist(), a.dst.tolist()))


def read_edgelist(path, n: int) -> AdjacencyMatrix:
    """Load a ``src,dst`` CSV with 0-based ids for an ``n``-node network."""
    path = Path(path)
    src, dst = [], []
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise DataError(f"cannot open edge list: {exc}", path) from exc
    with fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header is None or [h.strip() for h in header] != ["src", "dst"]:
            raise DataError("edge list must start with header 'src,dst'", path, row=1)
        for lineno, row in enumerate(rows, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise DataError(f"expected 2 fields, got {len(row)}", path, row=lineno)
            try:
                s, d = int(row[0]), int(row[1])
            except ValueError:
                raise DataError("non-integer node id", path, row=lineno) from None
            if not (0 <= s < n and 0 <= d < n):
                raise DataError(f"node id outside [0, {n})", path, row=lineno)
            if s == d:
                raise DataError("self-loop", path, row=lineno)
            src.append(s)
            dst.append(d)
    return AdjacencyMatrix(n, np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64))
