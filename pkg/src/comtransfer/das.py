"""Target-domain adaptation of a frozen pre-trained encoder.

Only the adaptation prompt bank, the input projector and (for overlapping
detection) the affiliation decoder are trained; encoder weights never move.
"""
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .cluster import kmeans
from .config import RunConfig
from .encoder import gt_forward
from .errors import InvalidArgument, NumericalError
from .experts import (
    CommunityResult,
    cs_logits,
    dcd_expert,
    init_ocd_decoder,
    memberships,
    node_representation,
    ocd_expert,
    ocd_forward,
    softmax_np,
    top_r,
)
from .graph import sample_non_edges
from .prompts import preprocess
from .storage import read_arrays, write_arrays
from .ugl import margin_loss, recon_loss, sample_negatives

log = logging.getLogger(__name__)

TASKS = ("cs", "dcd", "ocd")
BCE_CLAMP = 1e-7


# --------------------------------------------------------------------- prompt + projector


def init_adapter(d_tar, d_src, n_prompts, seed=0, dtype=np.float32):
    """Small random prompt bank and an identity-like (possibly rectangular) projector."""
    rng = np.random.default_rng(seed)
    return {
        "basis": (0.01 * rng.normal(size=(n_prompts, d_tar))).astype(dtype),
        "keys": (0.1 * rng.normal(size=(n_prompts, d_tar))).astype(dtype),
        "proj_w": np.eye(d_tar, d_src, dtype=dtype),
        "proj_b": np.zeros(d_src, dtype),
    }


def prompt_weights(tokens, keys):
    """omega[v, t, i] = softmax_i <tokens[v, t], keys[i]>."""
    return ag.softmax(ag.matmul(tokens, ag.transpose(keys, (1, 0))), axis=-1)


def adaptation_prompt(tokens, mask, basis, keys):
    """Add a softmax-weighted mix of basis vectors to every valid token."""
    tokens = ag.as_tensor(tokens)
    if tokens.shape[-1] != basis.shape[-1]:
        raise InvalidArgument(f"token width {tokens.shape[-1]} != prompt width {basis.shape[-1]}")
    prompt = ag.matmul(prompt_weights(tokens, keys), basis)
    valid = np.asarray(mask, bool)[..., None].astype(tokens.dtype)
    return ag.add(tokens, ag.mul(prompt, valid))


def project(x, weight, bias):
    return ag.linear(x, weight, bias)


def adapted_forward(tokens, mask, adapter, params, enc):
    """Returns ``(z, node_emb, com_emb)`` with the encoder in evaluation mode."""
    x = adaptation_prompt(tokens, mask, adapter["basis"], adapter["keys"])
    z = project(x, adapter["proj_w"], adapter["proj_b"])
    node, com = gt_forward(z, mask, params, enc, training=False)
    return z, node, com


# --------------------------------------------------------------------- alignment


def select_challenging_nodes(anchors, pooled, count):
    """The ``count`` target nodes least cosine-similar to any anchor; ties by node id."""
    pooled = np.asarray(pooled, np.float64)
    anchors = np.asarray(anchors, np.float64)
    n = pooled.shape[0]
    if not 0 < count <= n:
        raise InvalidArgument(f"count={count} outside [1, {n}]")
    pn = pooled / np.maximum(np.linalg.norm(pooled, axis=1, keepdims=True), 1e-12)
    an = anchors / np.maximum(np.linalg.norm(anchors, axis=1, keepdims=True), 1e-12)
    score = (pn @ an.T).max(axis=1)
    return np.lexsort((np.arange(n), score))[:count]


def _sq_dists(a, b):
    aa = ag.tsum(ag.mul(a, a), axis=1)
    bb = ag.tsum(ag.mul(b, b), axis=1)
    cross = ag.matmul(a, ag.transpose(b, (1, 0)))
    return ag.sub(ag.add(ag.reshape(aa, (-1, 1)), ag.reshape(bb, (1, -1))), ag.mul(cross, 2.0))


def median_bandwidth(a, b):
    """Median pairwise distance over the union of both sets (1 if degenerate)."""
    pts = np.concatenate([np.asarray(a, np.float64), np.asarray(b, np.float64)])
    sq = (pts * pts).sum(1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * pts @ pts.T, 0.0)
    off = d2[np.triu_indices(len(pts), 1)]
    med = float(np.sqrt(np.median(off))) if off.size else 0.0
    return med if med > 0 else 1.0


def cmmd_loss(tar, src, bandwidth=None):
    """Gaussian-kernel MMD^2 between target and source representations."""
    tar = ag.as_tensor(tar)
    src = ag.as_tensor(src, like=tar)
    if tar.shape[0] == 0 or src.shape[0] == 0:
        raise InvalidArgument("CMMD needs two non-empty sets")
    if bandwidth is None:
        bandwidth = median_bandwidth(tar.data, src.data)
    gamma = np.asarray(-0.5 / bandwidth**2, tar.dtype)

    def kmean(a, b):
        return ag.mean(ag.exp(ag.mul(_sq_dists(a, b), gamma)))

    return ag.add(ag.sub(kmean(tar, tar), ag.mul(kmean(tar, src), 2.0)), kmean(src, src))


# --------------------------------------------------------------------- task losses


def cs_loss(scores, labels):
    """Mean over queries of the mean binary cross-entropy on labeled nodes.

    ``scores[q]`` is a tensor of probabilities, ``labels[q]`` the 0/1 targets.
    """
    if not scores:
        raise InvalidArgument("cs_loss needs at least one query")
    total = None
    for s, y in zip(scores, labels):
        s = ag.clip(s, BCE_CLAMP, 1.0 - BCE_CLAMP)
        y = np.asarray(y, s.dtype)
        bce = ag.add(ag.mul(ag.log(s), y), ag.mul(ag.log(ag.sub(1.0, s)), 1.0 - y))
        term = ag.neg(ag.mean(bce))
        total = term if total is None else ag.add(total, term)
    return ag.mul(total, 1.0 / len(scores))


def cs_loss_logits(logits, labels):
    """:func:`cs_loss` on ``sigmoid(logits)`` via log-sigmoid, without the clamp.

    Equal to the clamped form whenever the clamp is inactive; saturated
    wrong predictions keep a gradient instead of a flat zero.
    """
    if not logits:
        raise InvalidArgument("cs_loss needs at least one query")
    total = None
    for x, y in zip(logits, labels):
        y = np.asarray(y, x.dtype)
        # -[y log s(x) + (1 - y) log(1 - s(x))] = softplus(x) - y x
        term = ag.mean(ag.sub(ag.softplus(x), ag.mul(x, y)))
        total = term if total is None else ag.add(total, term)
    return ag.mul(total, 1.0 / len(logits))


def confident_nodes(node, com, labels, k, tau):
    """Per cluster, the top ``tau`` fraction (at least one) by cos(node, com)."""
    node = np.asarray(node, np.float64)
    com = np.asarray(com, np.float64)
    cos = (node * com).sum(1) / np.maximum(np.linalg.norm(node, axis=1) * np.linalg.norm(com, axis=1), 1e-12)
    picked = []
    for i in range(k):
        members = np.flatnonzero(labels == i)
        if members.size == 0:
            picked.append(members)
            continue
        take = max(1, int(np.ceil(tau * members.size)))
        order = np.lexsort((members, -cos[members]))
        picked.append(np.sort(members[order[:take]]))
    return picked


def _normalize_rows(t):
    norm = ag.sqrt(ag.add(ag.tsum(ag.mul(t, t), axis=1, keepdims=True), np.asarray(1e-16, t.dtype)))
    return ag.div(t, norm)


def dcd_loss(node, com, k, tau=0.5, labels=None, seed=0):
    """Pseudo-label refinement: pull confident nodes' two views together and
    push cluster centers of the two views apart.

    ``labels`` defaults to K-means on ``node``. Returns ``(loss, labels)``.
    """
    if k < 2:
        raise InvalidArgument("dcd_loss needs K >= 2")
    if labels is None:
        labels = kmeans(node.data, k, seed=seed).labels
    labels = np.asarray(labels, np.int64)
    picked = confident_nodes(node.data, com.data, labels, k, tau)
    idx = np.concatenate(picked)
    cos = ag.cosine_similarity(node[idx], com[idx], axis=-1)
    pull = ag.mul(ag.tsum(ag.sub(2.0, ag.mul(cos, 2.0))), 1.0 / k)

    assign = np.zeros((k, node.shape[0]), node.dtype)
    assign[labels, np.arange(node.shape[0])] = 1.0
    assign /= np.maximum(assign.sum(1, keepdims=True), 1.0)
    cn = _normalize_rows(ag.matmul(ag.Tensor(assign), node))
    cc = _normalize_rows(ag.matmul(ag.Tensor(assign), com))
    s = ag.matmul(cn, ag.transpose(cc, (1, 0)))
    off = ag.mul(s, (1.0 - np.eye(k)).astype(node.dtype))
    return ag.add(pull, ag.tsum(ag.mul(off, off))), labels


def _neg_log_one_minus_exp(x):
    """-log(1 - exp(-x)) for x > 0, evaluated with expm1 for accuracy near 0."""
    d = x.data
    out = -np.log(-np.expm1(-d))
    return ag._make(out.astype(d.dtype), (x,), lambda g: (-g * np.exp(-d) / -np.expm1(-d),))


def ocd_loss(soft, edges, non_edges, eps=1e-5):
    """Bernoulli-Poisson negative log-likelihood over edges and sampled non-edges."""
    edges = np.asarray(edges, np.int64).reshape(-1, 2)
    non_edges = np.asarray(non_edges, np.int64).reshape(-1, 2)
    if len(edges) == 0:
        raise InvalidArgument("ocd_loss needs at least one edge")
    eps = np.asarray(eps, soft.dtype)
    dot_e = ag.tsum(ag.mul(soft[edges[:, 0]], soft[edges[:, 1]]), axis=-1)
    loss = ag.mean(_neg_log_one_minus_exp(ag.add(dot_e, eps)))
    if len(non_edges):
        dot_n = ag.tsum(ag.mul(soft[non_edges[:, 0]], soft[non_edges[:, 1]]), axis=-1)
        loss = ag.add(loss, ag.mean(dot_n))
    return loss


# --------------------------------------------------------------------- adapted expert


@dataclass
class AdaptedExpert:
    checkpoint: object  # ExpertCheckpoint
    task: str
    params: dict  # adapter (+ decoder) arrays
    config: RunConfig
    k: int = None
    history: list = field(default_factory=list)
    task_history: list = field(default_factory=list)

    def n_trainable(self):
        return int(sum(v.size for v in self.params.values()))

    def tensors(self, requires_grad=False):
        return {k: ag.Tensor(v, requires_grad=requires_grad) for k, v in self.params.items()}

    def encode(self, tokens):
        with ag.no_grad():
            _, node, com = adapted_forward(
                tokens.tokens, tokens.mask, self.tensors(), self.checkpoint.tensors(), self.checkpoint.encoder
            )
        return node.data, com.data

    def predict(self, tokens, queries=None, r=None):
        node, com = self.encode(tokens)
        return predict_from_embeddings(self.task, node, com, self.params, self.config, self.k, queries, r)


def predict_from_embeddings(task, node, com, params, cfg, k=None, queries=None, r=None):
    rep = node_representation(node, com)
    if task == "cs":
        if not queries:
            raise InvalidArgument("community search needs queries")
        scores = [softmax_np(cs_logits(q.nodes, rep)) for q in queries]
        comms = None if r is None else [top_r(s, r, q.nodes) for s, q in zip(scores, queries)]
        return CommunityResult("cs", [q.qid for q in queries], comms, scores)
    if task == "dcd":
        labels = dcd_expert(rep, k, seed=cfg.seed)
        return CommunityResult("dcd", labels=labels, meta={"embeddings": rep})
    soft = ocd_expert(rep, {n: v for n, v in params.items() if n.startswith("dec_")})
    return CommunityResult("ocd", soft=soft, memberships=memberships(soft, cfg.threshold))


def _task_loss(task, node, com, trainable, g, cfg, k, queries, rng):
    if task == "cs":
        rep = node_representation(node, com)
        logits, labels = [], []
        for q in queries:
            sup = np.asarray(q.positives + q.negatives, np.int64)
            logits.append(cs_logits(q.nodes, rep)[sup])
            labels.append(np.r_[np.ones(len(q.positives)), np.zeros(len(q.negatives))])
        return cs_loss_logits(logits, labels)
    if task == "dcd":
        refine, _ = dcd_loss(node, com, k, cfg.tau, seed=cfg.seed)
        mar = margin_loss(node, com, cfg.margin, sample_negatives(g.n_nodes, cfg.neg_per_node, rng))
        edges = g.edge_array()
        rec = recon_loss(node, edges, sample_non_edges(g, cfg.non_edge_ratio * len(edges), rng))
        return ag.add(refine, ag.add(mar, ag.mul(rec, cfg.beta)))
    soft = ocd_forward(node_representation(node, com), trainable)
    edges = g.edge_array()
    return ocd_loss(soft, edges, sample_non_edges(g, cfg.non_edge_ratio * len(edges), rng), cfg.eps_bp)


def _check_task(task, g, queries, k):
    if task not in TASKS:
        raise InvalidArgument(f"task must be one of {TASKS}, got {task!r}")
    if task == "cs":
        if not queries:
            raise InvalidArgument("community search adaptation needs training queries")
        for q in queries:
            if not q.positives or not q.negatives:
                raise InvalidArgument(f"query {q.qid} lacks positive or negative labels")
    elif k is None or not 2 <= k <= g.n_nodes:
        raise InvalidArgument(f"{task} needs 2 <= K <= n, got K={k}")
    if task != "cs" and g.n_edges == 0:
        raise InvalidArgument(f"{task} needs a graph with edges")


def das_train(g, checkpoint, task, cfg=None, queries=None, k=None, tokens=None, eval_queries=None, r=None):
    """Adapt one frozen expert to target graph ``g``.

    Every epoch: prompt, project, reselect challenging nodes, compute
    ``L_task + alpha * L_cmmd`` and step the adapter. Tokenization follows the
    checkpoint's settings. Returns ``(AdaptedExpert, CommunityResult)``; the
    prediction for search uses ``eval_queries`` (default: ``queries``).
    """
    cfg = cfg or checkpoint.config
    _check_task(task, g, queries, k)
    src_cfg = checkpoint.config
    if tokens is None:
        tokens = preprocess(g, src_cfg.h_max, src_cfg.pe_dim, k_feat=cfg.k_feat or k, seed=src_cfg.seed)
    d_tar = tokens.tokens.shape[2]
    digest = checkpoint.digest()
    params = checkpoint.tensors(requires_grad=False)
    enc = checkpoint.encoder

    arrays = init_adapter(d_tar, checkpoint.d_src, cfg.n_prompts, seed=cfg.seed)
    if task == "ocd":
        arrays.update(init_ocd_decoder(2 * enc.hidden, cfg.ocd_hidden, k, seed=cfg.seed))
    trainable = {n: ag.Tensor(v, requires_grad=True) for n, v in arrays.items()}
    opt = ag.Adam(trainable.values(), lr=cfg.lr)
    anchors = checkpoint.anchors
    count = min(len(anchors), g.n_nodes)
    rng = np.random.default_rng(cfg.seed + 3)

    history, task_history = [], []
    best, wait = np.inf, 0
    for epoch in range(cfg.das_epochs):
        opt.zero_grad()
        z, node, com = adapted_forward(tokens.tokens, tokens.mask, trainable, params, enc)
        pooled = ag.masked_mean(z, tokens.mask, axis=1)
        chosen = select_challenging_nodes(anchors, pooled.data, count)
        align = cmmd_loss(pooled[chosen], anchors)
        task_term = _task_loss(task, node, com, trainable, g, cfg, k, queries, rng)
        loss = ag.add(task_term, ag.mul(align, cfg.alpha))
        value = loss.item()
        if not np.isfinite(value):
            raise NumericalError(f"adaptation loss became {value} at epoch {epoch}")
        ag.backward(loss)
        opt.step()
        history.append(value)
        task_history.append(task_term.item())
        if value < best - cfg.min_delta:
            best, wait = value, 0
        else:
            wait += 1
            if wait >= cfg.patience:
                log.info("adaptation early stop at epoch %d (loss %.5f)", epoch, value)
                break

    if checkpoint.digest() != digest:
        raise NumericalError("encoder parameters changed during adaptation")
    expert = AdaptedExpert(
        checkpoint=checkpoint,
        task=task,
        params={n: t.data.copy() for n, t in trainable.items()},
        config=cfg,
        k=k,
        history=history,
        task_history=task_history,
    )
    return expert, expert.predict(tokens, eval_queries or queries, r)


# --------------------------------------------------------------------- persistence


def save_adapter(expert, path):
    meta = {
        "kind": "adapter",
        "task": expert.task,
        "k": expert.k,
        "config": expert.config.to_dict(),
        "history": [float(x) for x in expert.history],
        "backbone_sha256": expert.checkpoint.digest(),
    }
    write_arrays(path, expert.params, meta)


def load_adapter(path, checkpoint):
    arrays, meta = read_arrays(path)
    if meta.get("kind") != "adapter":
        raise InvalidArgument(f"{path}: not an adapter")
    if meta["backbone_sha256"] != checkpoint.digest():
        raise InvalidArgument(f"{path}: adapter was trained against a different checkpoint")
    return AdaptedExpert(
        checkpoint=checkpoint,
        task=meta["task"],
        params=arrays,
        config=RunConfig.from_dict(meta["config"]),
        k=meta.get("k"),
        history=meta.get("history", []),
    )


def adapter_dir(ckpt_path, task):
    return os.path.join(ckpt_path, "adapter", task)
