"""K-means (k-means++ seeding, Lloyd iterations) and Louvain modularity clustering."""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import InvalidArgument


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    k: int
    centroids: np.ndarray = None
    # K-means: inertia after every assignment step. Louvain: modularity after every level.
    history: list = field(default_factory=list)
    # Louvain only, when traced: one dict per level with "membership" and "moves".
    trace: list = None


def _kmeans_pp(x, k, rng):
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((x - x[chosen[0]]) ** 2).sum(1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            # every remaining point duplicates a chosen one
            free = np.setdiff1d(np.arange(n), chosen)
            idx = int(free[rng.integers(free.size)])
        chosen.append(idx)
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(1))
    return x[chosen].copy()


def kmeans(x, k, max_iters=100, seed=0):
    """Lloyd's algorithm from a k-means++ start.

    Empty clusters are reseeded at the point farthest from its current
    centroid. Deterministic for a fixed ``seed``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidArgument("kmeans expects a 2-D matrix")
    n = x.shape[0]
    k = int(k)
    if k < 1:
        raise InvalidArgument("k must be >= 1")
    if k > n:
        raise InvalidArgument(f"k={k} exceeds number of points {n}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(x, k, rng)
    labels = None
    history = []
    for _ in range(max(1, max_iters)):
        new_labels, dist = kernels.assign_nearest(x, centroids)
        counts = np.bincount(new_labels, minlength=k)
        for j in np.flatnonzero(counts == 0):
            # never empty another cluster: only points from clusters of size >= 2
            movable = counts[new_labels] > 1
            far = int(np.argmax(np.where(movable, dist, -1.0)))
            counts[new_labels[far]] -= 1
            new_labels[far] = j
            counts[j] = 1
            centroids[j] = x[far]
            dist[far] = 0.0
        history.append(float(dist.sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, x)
        centroids = sums / counts[:, None]
    return ClusterAssignment(labels.astype(np.int64), k, centroids, history)


def _canonical(labels):
    """Renumber labels 0..k-1 by first appearance in node order."""
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    return order[inv].astype(np.int64)


def _modularity_of(adj, m2):
    return float(adj.diagonal().sum() / m2 - ((np.asarray(adj.sum(1)).ravel() / m2) ** 2).sum())


def louvain(g, seed=None, min_gain=1e-12, max_levels=64, trace=False):
    """Two-phase Louvain on modularity (resolution 1).

    Nodes are visited in ascending id order; an integer ``seed`` visits them
    in a seeded random order instead. Every accepted local move raises
    modularity by more than ``min_gain``. With ``trace=True`` the result
    carries every level's node membership and accepted moves.
    """
    n = g.n_nodes
    if g.n_edges == 0:
        return ClusterAssignment(np.arange(n, dtype=np.int64), n, history=[], trace=[] if trace else None)

    adj = g.adjacency()
    perm = None
    if seed is not None:
        perm = np.random.default_rng(seed).permutation(n)
        adj = sp.csr_matrix(adj[perm][:, perm])
    m2 = float(adj.sum())
    membership = np.arange(n)
    history = [_modularity_of(adj, m2)]
    levels = []
    for _ in range(max_levels):
        adj.sort_indices()
        start = np.arange(adj.shape[0])
        labels, node, src, dst, gain = kernels.louvain_move(
            adj.indptr, adj.indices, adj.data, start, min_gain=min_gain
        )
        if node.size == 0:
            break
        if trace:
            levels.append(
                {"membership": membership.copy(), "moves": (node, src, dst, gain)}
            )
        _, labels = np.unique(labels, return_inverse=True)
        k = labels.max() + 1
        s = sp.csr_matrix((np.ones(adj.shape[0]), (np.arange(adj.shape[0]), labels)), shape=(adj.shape[0], k))
        adj = sp.csr_matrix(s.T @ adj @ s)
        membership = labels[membership]
        history.append(_modularity_of(adj, m2))
    if perm is not None:
        flat = np.empty(n, np.int64)
        flat[perm] = membership
        if trace:
            for lvl in levels:
                m = np.empty(n, np.int64)
                m[perm] = lvl["membership"]
                lvl["membership"] = m
                lvl["order"] = perm
    else:
        flat = membership
    flat = _canonical(flat)
    return ClusterAssignment(flat, int(flat.max()) + 1, history=history, trace=levels if trace else None)
