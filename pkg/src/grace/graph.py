"""Static relation graph over stock and factor vertices.

Stocks 0..N-1 carry M binary symmetric relation matrices loaded from an
edge list; each factor vertex N+b is implicitly linked to every stock
(and to no other factor). The collapsed row-normalized adjacency backs
the linear baseline models.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


class GraphLoadError(ValueError):
    pass


@dataclass(frozen=True)
class Hypergraph:
    n_stocks: int
    n_factors: int
    n_relations: int
    adjacency: np.ndarray          # (M, N, N) binary, symmetric, zero diagonal
    include_factors: bool = True
    edge_lists: tuple = field(default_factory=tuple, compare=False)

    @property
    def degrees(self) -> np.ndarray:
        """d_j: total relation count of stock j across all relations."""
        if self.n_relations == 0:
            return np.zeros(self.n_stocks)
        return self.adjacency.sum(axis=(0, 1))

    @property
    def n_contributors(self) -> int:
        """Vertices that can feed a target stock's aggregation."""
        return self.n_stocks + (self.n_factors if self.include_factors else 0)

    def relation_vector(self, i: int, j: int) -> np.ndarray:
        """Binary (M+B) relation vector between vertices i and j."""
        n, b, m = self.n_stocks, self.n_factors, self.n_relations
        total = n + b
        if not (0 <= i < total and 0 <= j < total):
            raise GraphLoadError(f"vertex id out of range: ({i}, {j})")
        if i == j:
            raise GraphLoadError("relation vector undefined for i == j")
        vec = np.zeros(m + b)
        if i < n and j < n:
            vec[:m] = self.adjacency[:, i, j]
        elif i >= n and j >= n:
            pass  # factor-factor: no linkage by construction
        else:
            fac = (i if i >= n else j) - n
            if self.include_factors:
                vec[m + fac] = 1.0
        return vec

    def collapse(self) -> np.ndarray:
        """Row-normalized any-relation adjacency w[i,j] = a[i,j]/n_i."""
        any_rel = (self.adjacency.sum(axis=0) > 0).astype(np.float64) \
            if self.n_relations else np.zeros((self.n_stocks, self.n_stocks))
        counts = any_rel.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore"):
            w = np.where(counts > 0, any_rel / np.where(counts > 0, counts, 1.0), 0.0)
        return w

    def attention_relation_stack(self) -> np.ndarray:
        """Constant (M+B, N, C) stack so the relation term of the pairwise
        score reduces to one matrix product with the relation weights."""
        n, b, m = self.n_stocks, self.n_factors, self.n_relations
        c = self.n_contributors
        stack = np.zeros((m + b, n, c))
        if m:
            stack[:m, :, :n] = self.adjacency
        if self.include_factors:
            for fac in range(b):
                stack[m + fac, :, n + fac] = 1.0
        return stack

    def contributor_scale(self) -> np.ndarray:
        """Per-contributor divisor of the aggregation: max(d_j, 1) for
        stocks (isolated stocks keep the similarity channel alive) and N
        for factor vertices."""
        deg = np.maximum(self.degrees, 1.0)
        if self.include_factors:
            return np.concatenate([1.0 / deg, np.full(self.n_factors, 1.0 / self.n_stocks)])
        return 1.0 / deg

    def self_mask(self) -> np.ndarray:
        """Additive mask removing j == i from each stock's contributor row."""
        mask = np.zeros((self.n_stocks, self.n_contributors))
        idx = np.arange(self.n_stocks)
        mask[idx, idx] = -1e30
        return mask


def build_hypergraph(edges, n_stocks, n_factors, n_relations=None,
                     include_factors=True) -> Hypergraph:
    """Assemble the graph from (i, j, relation_id) triples.

    Symmetric closure is applied per relation. Relations with no edges are
    retained as all-zero matrices so parameter widths do not depend on
    data sparsity.
    """
    edges = list(edges)
    if n_relations is None:
        n_relations = (max((e[2] for e in edges), default=-1)) + 1
    adj = np.zeros((n_relations, n_stocks, n_stocks))
    lists = [[] for _ in range(n_relations)]
    for row, (i, j, m) in enumerate(edges):
        if not (0 <= i < n_stocks and 0 <= j < n_stocks):
            raise GraphLoadError(f"edge row {row}: stock id out of range: ({i},{j})")
        if i == j:
            raise GraphLoadError(f"edge row {row}: self-loop on vertex {i}")
        if not (0 <= m < n_relations):
            raise GraphLoadError(f"edge row {row}: relation id {m} out of range")
        adj[m, i, j] = 1.0
        adj[m, j, i] = 1.0
        lists[m].append((min(i, j), max(i, j)))
    edge_lists = tuple(tuple(sorted(set(lst))) for lst in lists)
    return Hypergraph(n_stocks=n_stocks, n_factors=n_factors,
                      n_relations=n_relations, adjacency=adj,
                      include_factors=include_factors, edge_lists=edge_lists)


def load_relation_edges(path):
    """Read an `i,j,relation_id` CSV (comment lines starting with # allowed)."""
    edges = []
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        return edges
    if rows[0][:3] == ["i", "j", "relation_id"]:
        rows = rows[1:]
    for row in rows:
        if len(row) < 3:
            raise GraphLoadError(f"malformed relation row: {row}")
        edges.append((int(row[0]), int(row[1]), int(row[2])))
    return edges


def load_relation_names(path):
    """relation_id -> name map from relations_meta.csv."""
    names = {}
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if rows and rows[0][:2] == ["relation_id", "name"]:
        rows = rows[1:]
    for row in rows:
        names[int(row[0])] = row[1]
    return names
