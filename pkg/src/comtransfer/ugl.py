"""Per-domain pre-training of the encoder and checkpoint persistence."""
import hashlib
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .cluster import kmeans
from .config import RunConfig
from .encoder import EncoderConfig, count_params, gt_forward, init_params
from .errors import InvalidArgument, NumericalError
from .graph import sample_non_edges
from .prompts import preprocess
from .storage import read_arrays, write_arrays

log = logging.getLogger(__name__)


def sample_negatives(n, per_node, rng):
    """``(n, per_node)`` node ids, row v drawn uniformly from ``V \\ {v}``."""
    if n < 2:
        raise InvalidArgument("negative sampling needs at least two nodes")
    r = rng.integers(0, n - 1, size=(n, per_node))
    return r + (r >= np.arange(n)[:, None])


def margin_loss(node, com, margin, negatives=None):
    """Mean over (u, v) of -max(s(h_v . c_v) - s(h_u . c_v) + margin, 0), s = sigmoid.

    ``negatives[v]`` lists the sampled u for node v. With ``negatives=None``
    every ordered pair (u, v), u = v included, is used.
    """
    pos = ag.sigmoid(ag.tsum(ag.mul(node, com), axis=-1))
    n = node.shape[0]
    if negatives is None:
        scores = ag.sigmoid(ag.matmul(node, ag.transpose(com, (1, 0))))  # [u, v]
        hinge = ag.relu(ag.add(ag.sub(ag.reshape(pos, (1, n)), scores), margin))
    else:
        negatives = np.asarray(negatives, dtype=np.int64)
        neg_node = node[negatives]  # (n, s, d)
        neg = ag.sigmoid(ag.tsum(ag.mul(neg_node, ag.reshape(com, (n, 1, com.shape[1]))), axis=-1))
        hinge = ag.relu(ag.add(ag.sub(ag.reshape(pos, (n, 1)), neg), margin))
    return ag.neg(ag.mean(hinge))


def recon_loss(node, edges=None, non_edges=None, adjacency=None):
    """Mean of (1 - A_uv) h_u.h_v - A_uv h_u.h_v over sampled pairs.

    Pass ``edges`` (A=1) and ``non_edges`` (A=0) as ``(k, 2)`` arrays, or a
    dense ``adjacency`` to sum over every ordered pair.
    """
    if adjacency is not None:
        a = np.asarray(adjacency, dtype=node.dtype)
        dots = ag.matmul(node, ag.transpose(node, (1, 0)))
        return ag.mean(ag.mul(dots, 1.0 - 2.0 * a))
    edges = np.zeros((0, 2), np.int64) if edges is None else np.asarray(edges, np.int64)
    non_edges = np.zeros((0, 2), np.int64) if non_edges is None else np.asarray(non_edges, np.int64)
    pairs = np.concatenate([edges, non_edges])
    if len(pairs) == 0:
        raise InvalidArgument("recon_loss needs at least one pair")
    sign = np.concatenate([-np.ones(len(edges)), np.ones(len(non_edges))]).astype(node.dtype)
    dots = ag.tsum(ag.mul(node[pairs[:, 0]], node[pairs[:, 1]]), axis=-1)
    return ag.mean(ag.mul(dots, sign))


@dataclass
class ExpertCheckpoint:
    params: dict  # name -> float32 array
    encoder: EncoderConfig
    config: RunConfig
    anchors: np.ndarray  # (K_a, d_src) source-domain anchors
    history: list = field(default_factory=list)

    @property
    def d_src(self):
        return self.encoder.d_in

    def tensors(self, requires_grad=False):
        return {k: ag.Tensor(v, requires_grad=requires_grad) for k, v in self.params.items()}

    def n_params(self):
        return int(sum(v.size for v in self.params.values()))

    def digest(self):
        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.params[k]).tobytes())
        return h.hexdigest()

    def encode(self, tokens, mask):
        """Evaluation-mode forward; returns numpy ``(node_emb, com_emb)``."""
        with ag.no_grad():
            node, com = gt_forward(tokens, mask, self.tensors(), self.encoder)
        return node.data, com.data


def save_checkpoint(ckpt, path):
    arrays = {f"param.{k}": v for k, v in ckpt.params.items()}
    arrays["anchors"] = ckpt.anchors
    meta = {
        "kind": "expert_checkpoint",
        "encoder": asdict(ckpt.encoder),
        "config": ckpt.config.to_dict(),
        "history": [float(x) for x in ckpt.history],
        "n_params": ckpt.n_params(),
    }
    write_arrays(path, arrays, meta)


def load_checkpoint(path):
    arrays, meta = read_arrays(path)
    if meta.get("kind") != "expert_checkpoint":
        raise InvalidArgument(f"{path}: not an expert checkpoint")
    params = {k[len("param."):]: v for k, v in arrays.items() if k.startswith("param.")}
    return ExpertCheckpoint(
        params=params,
        encoder=EncoderConfig(**meta["encoder"]),
        config=RunConfig.from_dict(meta["config"]),
        anchors=arrays["anchors"],
        history=meta.get("history", []),
    )


def select_anchor_nodes(src_features, k_anchors, seed=0):
    """K-means centroids of the pooled source features serve as anchors."""
    k = min(int(k_anchors), src_features.shape[0])
    return kmeans(src_features, k, seed=seed).centroids.astype(np.float32)


def ugl_loss(node, com, g, cfg, rng):
    if cfg.full_pair_losses:
        mar = margin_loss(node, com, cfg.margin)
        rec = recon_loss(node, adjacency=g.adjacency().toarray())
    else:
        mar = margin_loss(node, com, cfg.margin, sample_negatives(g.n_nodes, cfg.neg_per_node, rng))
        edges = g.edge_array()
        non_edges = sample_non_edges(g, cfg.non_edge_ratio * len(edges), rng)
        rec = recon_loss(node, edges, non_edges)
    return ag.add(mar, ag.mul(rec, cfg.beta))


def pretrain(g, cfg, k_feat=None, tokens=None):
    """Train a fresh encoder on one source graph; returns an :class:`ExpertCheckpoint`.

    Stops early once the loss has not improved by ``cfg.min_delta`` for
    ``cfg.patience`` epochs.
    """
    if not cfg.beta > 0:
        raise InvalidArgument("beta must be > 0")
    if tokens is None:
        tokens = preprocess(g, cfg.h_max, cfg.pe_dim, k_feat=k_feat or cfg.k_feat, seed=cfg.seed)
    enc = EncoderConfig(
        d_in=tokens.tokens.shape[2],
        hidden=cfg.hidden,
        heads=cfg.heads,
        layers=cfg.layers,
        ffn_mult=cfg.ffn_mult,
        dropout=cfg.dropout,
    )
    params = init_params(enc, seed=cfg.seed)
    opt = ag.Adam(params.values(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed + 1)
    drop_rng = np.random.default_rng(cfg.seed + 2)
    history = []
    best, wait = np.inf, 0
    for epoch in range(cfg.pretrain_epochs):
        opt.zero_grad()
        node, com = gt_forward(tokens.tokens, tokens.mask, params, enc, training=True, rng=drop_rng)
        loss = ugl_loss(node, com, g, cfg, rng)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericalError(f"pre-training loss became {value} at epoch {epoch}")
        ag.backward(loss)
        opt.step()
        history.append(value)
        if value < best - cfg.min_delta:
            best, wait = value, 0
        else:
            wait += 1
            if wait >= cfg.patience:
                log.info("early stop at epoch %d (loss %.5f)", epoch, value)
                break
    anchors = select_anchor_nodes(tokens.pooled(), cfg.k_anchors, seed=cfg.seed)
    ckpt = ExpertCheckpoint(
        params={k: v.data.copy() for k, v in params.items()},
        encoder=enc,
        config=cfg,
        anchors=anchors,
        history=history,
    )
    log.info("pre-trained expert: %d parameters, %d epochs", count_params(params), len(history))
    return ckpt
