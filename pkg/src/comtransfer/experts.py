"""Task experts (search, disjoint and overlapping detection) and fusion."""
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .cluster import kmeans
from .errors import InvalidArgument


@dataclass
class CommunityResult:
    """Output of one expert or of a fusion step.

    cs: ``query_ids``, ``communities`` (ranked node tuples) and ``scores``
    (one probability vector over all nodes per query). dcd: ``labels``.
    ocd: ``soft`` (n, K) and ``memberships`` (tuple per node).
    """

    task: str
    query_ids: list = None
    communities: list = None
    scores: list = None
    labels: np.ndarray = None
    soft: np.ndarray = None
    memberships: list = None
    meta: dict = field(default_factory=dict)


def node_representation(node_emb, com_emb):
    """concat(node_emb, com_emb); works on arrays and tensors alike."""
    if isinstance(node_emb, ag.Tensor) or isinstance(com_emb, ag.Tensor):
        return ag.concat([node_emb, com_emb], axis=-1)
    return np.concatenate([node_emb, com_emb], axis=-1)


# --------------------------------------------------------------------- search


def cs_logits(query, rep):
    """Cross-attention logits of every node against the mean query representation."""
    query = np.asarray(query, np.int64)
    if query.size == 0:
        raise InvalidArgument("query has no nodes")
    scale = 1.0 / np.sqrt(rep.shape[-1])
    if isinstance(rep, ag.Tensor):
        q = ag.mean(rep[query], axis=0)
        return ag.mul(ag.matmul(rep, ag.reshape(q, (-1, 1)))[:, 0], scale)
    q = rep[query].astype(np.float64).mean(0)
    return rep.astype(np.float64) @ q * scale


def softmax_np(x):
    z = np.asarray(x, np.float64)
    z = np.exp(z - z.max())
    return z / z.sum()


def top_r(scores, r, query=()):
    """Query nodes first (ascending id), then the best-scored rest; ties by id."""
    scores = np.asarray(scores)
    n = scores.shape[0]
    query = sorted({int(v) for v in query})
    if not 1 <= r <= n:
        raise InvalidArgument(f"community size r={r} outside [1, {n}]")
    if len(query) > r:
        raise InvalidArgument(f"query has {len(query)} nodes but r={r}")
    order = np.lexsort((np.arange(n), -scores))
    qset = set(query)
    rest = [int(v) for v in order if int(v) not in qset]
    return tuple(query + rest[: r - len(query)])


def cs_expert(query, node_emb, com_emb, r):
    """Ranked community of size ``r`` and the softmax score vector."""
    rep = node_representation(node_emb, com_emb)
    scores = softmax_np(cs_logits(query, rep))
    return top_r(scores, r, query), scores


# --------------------------------------------------------------------- detection


def dcd_expert(embeddings, k, seed=0):
    return kmeans(embeddings, k, seed=seed).labels


def init_ocd_decoder(d_in, hidden, k, seed=0, dtype=np.float32):
    rng = np.random.default_rng(seed)

    def xavier(a, b):
        lim = np.sqrt(6.0 / (a + b))
        return rng.uniform(-lim, lim, (a, b)).astype(dtype)

    return {
        "dec_w1": xavier(d_in, hidden),
        "dec_b1": np.zeros(hidden, dtype),
        "dec_w2": xavier(hidden, k),
        "dec_b2": np.zeros(k, dtype),
    }


def ocd_forward(rep, params):
    """softplus(relu(LN(rep) W1 + b1) W2 + b2); tensors in, tensor out.

    LN is a parameter-free layer norm so the decoder sees unit-scale inputs
    whatever the embedding norm of the frozen encoder.
    """
    d = rep.shape[-1]
    rep = ag.layer_norm(rep, ag.Tensor(np.ones(d, rep.dtype)), ag.Tensor(np.zeros(d, rep.dtype)))
    h = ag.relu(ag.linear(rep, params["dec_w1"], params["dec_b1"]))
    return ag.softplus(ag.linear(h, params["dec_w2"], params["dec_b2"]))


def ocd_expert(embeddings, params):
    """Soft affiliation matrix Y >= 0 from a trained decoder."""
    with ag.no_grad():
        tensors = {k: ag.as_tensor(v) for k, v in params.items()}
        return ocd_forward(ag.Tensor(np.asarray(embeddings, np.float32)), tensors).data


def memberships(soft, threshold=0.5):
    """Columns at or above ``threshold``; a node with none keeps its argmax column."""
    soft = np.asarray(soft)
    out = []
    for row in soft:
        cols = np.flatnonzero(row >= threshold)
        out.append(tuple(int(c) for c in cols) if cols.size else (int(np.argmax(row)),))
    return out


# --------------------------------------------------------------------- fusion


def fuse_cs(score_sets, r, query=()):
    """Average per-node probabilities over experts, then :func:`top_r`."""
    if not score_sets:
        raise InvalidArgument("nothing to fuse")
    shapes = {np.shape(s) for s in score_sets}
    if len(shapes) != 1:
        raise InvalidArgument(f"experts scored different node sets: {sorted(shapes)}")
    # fixed summation order keeps the result independent of expert order
    stacked = np.sort(np.stack([np.asarray(s, np.float64) for s in score_sets]), axis=0)
    mean = stacked.sum(0) / len(score_sets)
    return top_r(mean, r, query), mean


def fuse_dcd(embedding_sets, k, seed=0):
    if not embedding_sets:
        raise InvalidArgument("nothing to fuse")
    return dcd_expert(np.concatenate([np.asarray(e, np.float64) for e in embedding_sets], axis=1), k, seed)


def hungarian(costs):
    """Minimum-cost perfect matching on a square matrix.

    Returns ``perm`` with row ``i`` assigned to column ``perm[i]``. Shortest
    augmenting paths with dual potentials, O(K^3).
    """
    c = np.asarray(costs, np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise InvalidArgument(f"cost matrix must be square, got shape {c.shape}")
    if not np.isfinite(c).all():
        raise InvalidArgument("cost matrix must be finite")
    n = c.shape[0]
    # 1-based arrays; column 0 is the virtual start
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    owner = np.zeros(n + 1, np.int64)  # owner[j] = row matched to column j
    way = np.zeros(n + 1, np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            cur = c[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    perm = np.empty(n, np.int64)
    perm[owner[1:] - 1] = np.arange(n)
    return perm


def _column_cosine(a, b):
    an = a / np.maximum(np.linalg.norm(a, axis=0, keepdims=True), 1e-12)
    bn = b / np.maximum(np.linalg.norm(b, axis=0, keepdims=True), 1e-12)
    return an.T @ bn


def align_columns(reference, soft):
    """Permute the columns of ``soft`` onto ``reference`` by cosine similarity."""
    perm = hungarian(1.0 - _column_cosine(reference, soft))
    return soft[:, perm]


def fuse_ocd(soft_sets, threshold=0.5):
    """Align every matrix to the first, average, threshold.

    Returns ``(memberships, averaged matrix)``.
    """
    if not soft_sets:
        raise InvalidArgument("nothing to fuse")
    mats = [np.asarray(s, np.float64) for s in soft_sets]
    if len({m.shape for m in mats}) != 1:
        raise InvalidArgument("affiliation matrices differ in shape")
    ref = mats[0]
    aligned = [ref] + [align_columns(ref, m) for m in mats[1:]]
    mean = np.mean(aligned, axis=0)
    return memberships(mean, threshold), mean
