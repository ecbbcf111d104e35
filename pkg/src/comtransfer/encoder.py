"""Pre-norm graph transformer over per-node token sequences."""
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from . import autograd as ag
from .errors import InvalidArgument
from .graph import normalize_adjacency

DENSE_EIGEN_LIMIT = 2000


def laplacian_pe(g, k):
    """Eigenvectors of I - D^-1/2 A D^-1/2 for the k smallest nontrivial eigenvalues.

    Each column is sign-fixed so its largest-magnitude entry is positive.
    """
    n = g.n_nodes
    if k < 0 or k >= n:
        raise InvalidArgument(f"positional encoding size {k} must be < n_nodes={n}")
    if k == 0:
        return np.zeros((n, 0), np.float32)
    a_hat = normalize_adjacency(g)
    if n <= DENSE_EIGEN_LIMIT:
        lap = np.eye(n) - a_hat.toarray()
        _, vecs = np.linalg.eigh(lap)
        vecs = vecs[:, 1 : k + 1]
    else:
        v0 = np.full(n, 1.0 / np.sqrt(n))
        vals, vecs = spla.eigsh(a_hat, k=k + 1, which="LA", v0=v0, tol=1e-8)
        order = np.argsort(-vals, kind="stable")
        vecs = vecs[:, order[1 : k + 1]]
    return _fix_signs(vecs).astype(np.float32)


def _fix_signs(vecs):
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


@dataclass(frozen=True)
class EncoderConfig:
    d_in: int
    hidden: int = 512
    heads: int = 8
    layers: int = 1
    ffn_mult: int = 2
    dropout: float = 0.1

    def __post_init__(self):
        if self.hidden % self.heads:
            raise InvalidArgument(f"hidden={self.hidden} not divisible by heads={self.heads}")


LAYER_KEYS = (
    "ln1_g", "ln1_b", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
    "ln2_g", "ln2_b", "ff1_w", "ff1_b", "ff2_w", "ff2_b",
)


def init_params(cfg, seed=0, dtype=np.float32):
    """Xavier-uniform weights, zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(seed)

    def xavier(fan_in, fan_out):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, (fan_in, fan_out)).astype(dtype)

    h, f = cfg.hidden, cfg.hidden * cfg.ffn_mult
    p = {"in_w": xavier(cfg.d_in, h), "in_b": np.zeros(h, dtype)}
    for l in range(cfg.layers):
        pre = f"layer{l}."
        p[pre + "ln1_g"] = np.ones(h, dtype)
        p[pre + "ln1_b"] = np.zeros(h, dtype)
        for name in ("q", "k", "v", "o"):
            p[pre + "w" + name] = xavier(h, h)
            p[pre + "b" + name] = np.zeros(h, dtype)
        p[pre + "ln2_g"] = np.ones(h, dtype)
        p[pre + "ln2_b"] = np.zeros(h, dtype)
        p[pre + "ff1_w"] = xavier(h, f)
        p[pre + "ff1_b"] = np.zeros(f, dtype)
        p[pre + "ff2_w"] = xavier(f, h)
        p[pre + "ff2_b"] = np.zeros(h, dtype)
    return {k: ag.Tensor(v, requires_grad=True) for k, v in p.items()}


def layer_params(params, l):
    pre = f"layer{l}."
    return {k: params[pre + k] for k in LAYER_KEYS}


def mha(x, mask, p, heads):
    """Multi-head scaled dot-product attention; invalid tokens are never attended."""
    n, m, h = x.shape
    if h % heads:
        raise InvalidArgument(f"hidden={h} not divisible by heads={heads}")
    dh = h // heads

    def split(t):
        return ag.transpose(ag.reshape(t, (n, m, heads, dh)), (0, 2, 1, 3))

    q = split(ag.linear(x, p["wq"], p["bq"]))
    k = split(ag.linear(x, p["wk"], p["bk"]))
    v = split(ag.linear(x, p["wv"], p["bv"]))
    scores = ag.mul(ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    key_mask = np.asarray(mask, bool)[:, None, None, :]
    attn = ag.softmax(scores, axis=-1, mask=key_mask)
    ctx = ag.reshape(ag.transpose(ag.matmul(attn, v), (0, 2, 1, 3)), (n, m, h))
    out = ag.linear(ctx, p["wo"], p["bo"])
    has_key = np.asarray(mask, bool).any(axis=1)
    if not has_key.all():
        out = ag.mul(out, has_key[:, None, None].astype(out.dtype))
    return out


def encoder_layer(x, mask, p, heads, dropout=0.0, rng=None, training=False):
    """x + MHA(LN(x)), then + FFN(LN(.)) with FFN = linear, GELU, linear."""
    a = mha(ag.layer_norm(x, p["ln1_g"], p["ln1_b"]), mask, p, heads)
    x = ag.add(x, ag.dropout(a, dropout, rng, training))
    f = ag.layer_norm(x, p["ln2_g"], p["ln2_b"])
    f = ag.linear(ag.gelu(ag.linear(f, p["ff1_w"], p["ff1_b"])), p["ff2_w"], p["ff2_b"])
    return ag.add(x, ag.dropout(f, dropout, rng, training))


def gt_forward(z, mask, params, cfg, training=False, rng=None):
    """Encode tokens ``z`` (n, m, d_in); returns ``(node_emb, com_emb)``.

    ``node_emb`` is the output at token 0, ``com_emb`` the masked mean over
    tokens ``1..m-1``.
    """
    z = ag.as_tensor(z)
    mask = np.asarray(mask, bool)
    if z.shape[-1] != params["in_w"].shape[0]:
        raise InvalidArgument(f"encoder expects width {params['in_w'].shape[0]}, got {z.shape[-1]}")
    if training and rng is None:
        rng = np.random.default_rng(0)
    h = ag.linear(z, params["in_w"], params["in_b"])
    for l in range(cfg.layers):
        h = encoder_layer(h, mask, layer_params(params, l), cfg.heads, cfg.dropout, rng, training)
    node = h[:, 0, :]
    if z.shape[1] < 2:
        warnings.warn("token sequence has no community tokens; community embedding is zero", stacklevel=2)
        com = ag.mul(node, 0.0)
    else:
        com = ag.masked_mean(h[:, 1:, :], mask[:, 1:], axis=1)
    return node, com


def count_params(params):
    return int(sum(p.data.size for p in params.values()))
