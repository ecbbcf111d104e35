"""Graph storage, feature propagation, conductance and hop-adaptive tokens."""
from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import InvalidArgument


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph in CSR form with a dense float32 feature matrix.

    Build instances with :meth:`from_edges`; it strips self-loops, merges
    duplicate edges and symmetrizes.
    """

    indptr: np.ndarray
    indices: np.ndarray
    features: np.ndarray

    @classmethod
    def from_edges(cls, n_nodes, edges, features=None):
        n_nodes = int(n_nodes)
        if n_nodes < 0:
            raise InvalidArgument("n_nodes must be non-negative")
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2) if len(edges) else np.zeros((0, 2), np.int64)
        if e.size and (e.min() < 0 or e.max() >= n_nodes):
            raise InvalidArgument(f"edge endpoint out of range [0, {n_nodes})")
        e = e[e[:, 0] != e[:, 1]]
        both = np.concatenate([e, e[:, ::-1]])
        adj = sp.csr_matrix(
            (np.ones(len(both), np.int8), (both[:, 0], both[:, 1])), shape=(n_nodes, n_nodes)
        )
        adj.sum_duplicates()
        adj.sort_indices()
        if features is None:
            features = np.zeros((n_nodes, 0), np.float32)
        features = np.ascontiguousarray(features, dtype=np.float32)
        if features.ndim != 2 or features.shape[0] != n_nodes:
            raise InvalidArgument(
                f"feature matrix must have {n_nodes} rows, got shape {features.shape}"
            )
        return cls(adj.indptr.astype(np.int64), adj.indices.astype(np.int64), features)

    @property
    def n_nodes(self):
        return self.indptr.shape[0] - 1

    @property
    def n_edges(self):
        return self.indices.shape[0] // 2

    @property
    def degrees(self):
        return np.diff(self.indptr)

    @property
    def n_features(self):
        return self.features.shape[1]

    def neighbors(self, v):
        return self.indices[self.indptr[v] : self.indptr[v + 1]]

    def adjacency(self):
        n = self.n_nodes
        data = np.ones(self.indices.shape[0], np.float64)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(n, n))

    def edge_array(self):
        """Each undirected edge once, as ``(u, v)`` with ``u < v``."""
        rows = np.repeat(np.arange(self.n_nodes), self.degrees)
        keep = rows < self.indices
        return np.stack([rows[keep], self.indices[keep]], axis=1)

    def has_edge(self, u, v):
        nb = self.neighbors(u)
        i = np.searchsorted(nb, v)
        return i < nb.shape[0] and nb[i] == v

    def with_features(self, features):
        features = np.ascontiguousarray(features, dtype=np.float32)
        if features.shape[0] != self.n_nodes:
            raise InvalidArgument("feature row count must equal n_nodes")
        return Graph(self.indptr, self.indices, features)


@dataclass(frozen=True)
class PropagationStack:
    hops: list

    @property
    def h_max(self):
        return len(self.hops) - 1


@dataclass
class TokenTensor:
    """Per-node token sequences.

    ``tokens`` has shape ``(n, m, d)`` with ``m = h_max + 3``: hop tokens at
    positions ``0..h_max``, the feature prompt at ``m-2`` and the structure
    prompt at ``m-1``. ``mask`` is true on valid positions.
    """

    tokens: np.ndarray
    mask: np.ndarray
    selected_hop: np.ndarray

    @property
    def n_tokens(self):
        return self.tokens.shape[1]

    @property
    def h_max(self):
        return self.tokens.shape[1] - 3

    def pooled(self):
        """Masked mean over token positions, shape ``(n, d)``."""
        w = self.mask.astype(self.tokens.dtype)
        return (self.tokens * w[:, :, None]).sum(1) / np.maximum(w.sum(1), 1)[:, None]


def normalize_adjacency(g):
    """Symmetric normalization D^-1/2 A D^-1/2; isolated nodes get a zero row."""
    deg = g.degrees.astype(np.float64)
    inv = np.zeros_like(deg)
    nz = deg > 0
    inv[nz] = 1.0 / np.sqrt(deg[nz])
    a = g.adjacency()
    return sp.csr_matrix(sp.diags(inv) @ a @ sp.diags(inv))


def propagate(g, h_max, features=None):
    if h_max < 0:
        raise InvalidArgument("h_max must be >= 0")
    x = g.features if features is None else np.asarray(features, np.float32)
    a_hat = normalize_adjacency(g).astype(np.float32)
    hops = [x]
    for _ in range(h_max):
        hops.append(np.asarray(a_hat @ hops[-1], dtype=np.float32))
    return PropagationStack(hops)


def khop_neighborhood(g, v, i):
    """Nodes within shortest-path distance ``i`` of ``v`` (BFS), sorted."""
    if not 0 <= v < g.n_nodes:
        raise InvalidArgument(f"node {v} out of range")
    dist = {v: 0}
    queue = deque([v])
    while queue:
        u = queue.popleft()
        if dist[u] == i:
            continue
        for w in g.neighbors(u):
            w = int(w)
            if w not in dist:
                dist[w] = dist[u] + 1
                queue.append(w)
    return np.array(sorted(dist), dtype=np.int64)


def conductance(g, nodes):
    """cut(C, V\\C) / min(vol C, vol V\\C); 1.0 when the denominator is zero."""
    inside = np.zeros(g.n_nodes, bool)
    inside[np.asarray(nodes, dtype=np.int64)] = True
    deg = g.degrees
    vol = int(deg[inside].sum())
    total = int(deg.sum())
    rows = np.repeat(np.arange(g.n_nodes), deg)
    cut = int(np.count_nonzero(inside[rows] & ~inside[g.indices]))
    den = min(vol, total - vol)
    if den == 0:
        return 1.0
    return cut / den


def select_local_hop(g, v, h_max):
    """Hop depth in ``0..h_max`` whose neighborhood of ``v`` has least conductance.

    First minimum wins on ties.
    """
    best_hop, best = 0, np.inf
    for i in range(h_max + 1):
        c = conductance(g, khop_neighborhood(g, v, i))
        if c < best:
            best_hop, best = i, c
    return best_hop


def select_local_hops(g, h_max):
    """Vectorized :func:`select_local_hop` over all nodes (kernel-backed)."""
    if h_max < 0:
        raise InvalidArgument("h_max must be >= 0")
    hops, _ = kernels.select_hops(g.indptr, g.indices, h_max)
    return hops


def build_aug_tokens(stack, selected_hop):
    """Hop tokens up to each node's selected depth; prompt slots left empty."""
    selected_hop = np.asarray(selected_hop, dtype=np.int64)
    h_max = stack.h_max
    if selected_hop.size and (selected_hop.min() < 0 or selected_hop.max() > h_max):
        raise InvalidArgument("selected hop outside [0, h_max]")
    n, d = stack.hops[0].shape
    m = h_max + 3
    tokens = np.zeros((n, m, d), np.float32)
    mask = np.zeros((n, m), bool)
    for i, h in enumerate(stack.hops):
        valid = selected_hop >= i
        tokens[valid, i] = h[valid]
        mask[:, i] = valid
    return TokenTensor(tokens, mask, selected_hop)


def sample_non_edges(g, count, rng):
    """Uniform node pairs ``u != v`` that are not edges, rejection-checked."""
    n = g.n_nodes
    max_pairs = n * (n - 1) // 2 - g.n_edges
    if count <= 0 or max_pairs <= 0:
        return np.zeros((0, 2), np.int64)
    adj = g.adjacency()
    out = []
    got = 0
    while got < count:
        need = max(2 * (count - got), 16)
        u = rng.integers(0, n, need)
        v = rng.integers(0, n, need)
        ok = u != v
        u, v = u[ok], v[ok]
        ok = np.asarray(adj[u, v]).ravel() == 0
        pairs = np.stack([u[ok], v[ok]], axis=1)[: count - got]
        out.append(pairs)
        got += len(pairs)
    return np.concatenate(out).astype(np.int64)
