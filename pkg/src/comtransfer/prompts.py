"""Cohesive-subgraph prompts and full node tokenization."""
import math

import numpy as np

from .cluster import kmeans, louvain
from .encoder import laplacian_pe
from .errors import InvalidArgument
from .graph import TokenTensor, build_aug_tokens, propagate, select_local_hops


def cluster_mean_prompt(x, assignment):
    """Row v = mean of ``x`` over the members of v's cluster (v included)."""
    x = np.asarray(x)
    labels = np.asarray(assignment.labels, dtype=np.int64)
    if labels.shape[0] != x.shape[0]:
        raise InvalidArgument("assignment must label every node")
    k = int(labels.max()) + 1 if labels.size else 0
    sums = np.zeros((k, x.shape[1]), np.float64)
    np.add.at(sums, labels, x.astype(np.float64))
    counts = np.bincount(labels, minlength=k)
    means = (sums / np.maximum(counts, 1)[:, None]).astype(np.float32)
    return means[labels]


def feature_prompt(x, assignment):
    return cluster_mean_prompt(x, assignment)


def structure_prompt(x, assignment):
    return cluster_mean_prompt(x, assignment)


def assemble_cohesive_tokens(aug, feat_prompt, strc_prompt):
    """Write the two prompts into the last two token slots and mark them valid."""
    n, m, d = aug.tokens.shape
    for name, p in (("feature", feat_prompt), ("structure", strc_prompt)):
        if p.shape != (n, d):
            raise InvalidArgument(f"{name} prompt shape {p.shape} != {(n, d)}")
    if aug.mask[:, m - 2 :].any():
        raise InvalidArgument("prompt slots already filled")
    tokens = aug.tokens.copy()
    mask = aug.mask.copy()
    tokens[:, m - 2] = feat_prompt
    tokens[:, m - 1] = strc_prompt
    mask[:, m - 2 :] = True
    return TokenTensor(tokens, mask, aug.selected_hop.copy())


def default_k_feat(n_nodes, n_communities=None):
    if n_communities:
        return int(n_communities)
    return max(1, math.ceil(math.sqrt(n_nodes)))


def tokenize(g, h_max, k_feat=None, seed=0):
    """Hop-adaptive tokens plus cohesive prompts for every node of ``g``.

    Returns ``(tokens, feat_assignment, strc_assignment)``. Prompts are means
    of the raw features, not of propagated ones.
    """
    stack = propagate(g, h_max)
    hops = select_local_hops(g, h_max)
    aug = build_aug_tokens(stack, hops)
    k_feat = min(default_k_feat(g.n_nodes, k_feat), g.n_nodes)
    feat = kmeans(g.features, k_feat, seed=seed)
    strc = louvain(g)
    return (
        assemble_cohesive_tokens(aug, feature_prompt(g.features, feat), structure_prompt(g.features, strc)),
        feat,
        strc,
    )


def preprocess(g, h_max, pe_dim, k_feat=None, seed=0):
    """Append Laplacian positional features to X, then :func:`tokenize`.

    Returns the :class:`TokenTensor` only.
    """
    pe_dim = min(pe_dim, max(g.n_nodes - 1, 0))
    x = np.concatenate([g.features, laplacian_pe(g, pe_dim)], axis=1)
    tokens, _, _ = tokenize(g.with_features(x), h_max, k_feat=k_feat, seed=seed)
    return tokens
