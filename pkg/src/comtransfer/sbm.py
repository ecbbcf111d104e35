"""Planted-partition graphs with Gaussian block features."""
import numpy as np

from .errors import InvalidArgument
from .graph import Graph


def _block_means(blocks, dim, separation, rng):
    if dim >= blocks:
        basis = np.eye(dim)[:blocks]
    else:
        basis = rng.normal(size=(blocks, dim))
        basis /= np.linalg.norm(basis, axis=1, keepdims=True)
    return separation * basis


def _sample_within(nodes, p, rng):
    s = len(nodes)
    n_pairs = s * (s - 1) // 2
    if n_pairs == 0 or p <= 0:
        return np.zeros((0, 2), np.int64)
    k = rng.binomial(n_pairs, p)
    idx = np.sort(rng.choice(n_pairs, size=k, replace=False))
    # pair index -> (i, j), i < j, rows of the strict upper triangle
    i = (s - 2 - np.floor(np.sqrt(-8 * idx + 4 * s * (s - 1) - 7) / 2.0 - 0.5)).astype(np.int64)
    j = idx + i + 1 - s * (s - 1) // 2 + (s - i) * ((s - i) - 1) // 2
    return np.stack([nodes[i], nodes[j]], axis=1)


def _sample_between(a, b, p, rng):
    n_pairs = len(a) * len(b)
    if n_pairs == 0 or p <= 0:
        return np.zeros((0, 2), np.int64)
    k = rng.binomial(n_pairs, p)
    idx = np.sort(rng.choice(n_pairs, size=k, replace=False))
    return np.stack([a[idx // len(b)], b[idx % len(b)]], axis=1)


def sbm_generate(sizes, p_in, p_out, feature_dim=16, separation=3.0, overlap=0.0, seed=0, noise=1.0):
    """Planted-partition graph.

    Returns ``(graph, labels)`` where ``labels[v]`` is the tuple of blocks of
    node v. With ``overlap > 0`` that fraction of nodes (rounded) joins a
    second block; a pair is then linked with probability
    ``1 - prod(1 - p(a, b))`` over all block pairs of its endpoints.
    Features are the mean of the node's block centers plus Gaussian noise.
    """
    sizes = [int(s) for s in sizes]
    if not sizes or min(sizes) < 1:
        raise InvalidArgument("block sizes must be positive")
    if not (0 <= p_out <= 1 and 0 <= p_in <= 1):
        raise InvalidArgument("edge probabilities must lie in [0, 1]")
    if not 0 <= overlap <= 1:
        raise InvalidArgument("overlap fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    blocks = len(sizes)
    n = sum(sizes)
    primary = np.repeat(np.arange(blocks), sizes)
    labels = [(int(b),) for b in primary]
    n_shared = int(round(overlap * n)) if blocks > 1 else 0
    if n_shared:
        shared = rng.choice(n, size=n_shared, replace=False)
        for v in np.sort(shared):
            other = int(rng.integers(blocks - 1))
            other += other >= primary[v]
            labels[v] = tuple(sorted((int(primary[v]), other)))

    if n_shared:
        member = np.zeros((n, blocks))
        for v, ls in enumerate(labels):
            member[v, list(ls)] = 1
        pb = np.full((blocks, blocks), p_out)
        np.fill_diagonal(pb, p_in)
        # log prob of no edge = sum over block pairs of log(1 - p)
        with np.errstate(divide="ignore"):
            lq = np.log1p(-pb)
        lq = np.where(np.isfinite(lq), lq, -1e300)
        prob = 1.0 - np.exp(member @ lq @ member.T)
        iu, ju = np.triu_indices(n, 1)
        keep = rng.random(iu.size) < prob[iu, ju]
        edges = np.stack([iu[keep], ju[keep]], axis=1)
    else:
        starts = np.concatenate([[0], np.cumsum(sizes)])
        groups = [np.arange(starts[b], starts[b + 1]) for b in range(blocks)]
        parts = []
        for a in range(blocks):
            parts.append(_sample_within(groups[a], p_in, rng))
            for b in range(a + 1, blocks):
                parts.append(_sample_between(groups[a], groups[b], p_out, rng))
        edges = np.concatenate(parts) if parts else np.zeros((0, 2), np.int64)

    means = _block_means(blocks, feature_dim, separation, rng)
    centers = np.stack([means[list(ls)].mean(0) for ls in labels])
    x = centers + noise * rng.normal(size=(n, feature_dim))
    return Graph.from_edges(n, edges, x.astype(np.float32)), labels
