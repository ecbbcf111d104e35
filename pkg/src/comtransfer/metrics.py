"""Evaluation metrics for community search and detection."""
import numpy as np

from .errors import InvalidArgument


def set_f1(pred, truth):
    pred, truth = set(map(int, pred)), set(map(int, truth))
    hit = len(pred & truth)
    if hit == 0:
        return 0.0
    precision = hit / len(pred)
    recall = hit / len(truth)
    return 2 * precision * recall / (precision + recall)


def set_jaccard(pred, truth):
    pred, truth = set(map(int, pred)), set(map(int, truth))
    union = len(pred | truth)
    return len(pred & truth) / union if union else 1.0


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(a, b):
    """Mutual information over the arithmetic mean of the two entropies.

    Returns 0 when both partitions have zero entropy.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise InvalidArgument("partitions must label the same nodes")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    joint = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(joint, (ai, bi), 1)
    ha = _entropy(joint.sum(1))
    hb = _entropy(joint.sum(0))
    denom = 0.5 * (ha + hb)
    if denom <= 0:
        return 0.0
    mi = ha + hb - _entropy(joint.ravel())
    return float(np.clip(mi / denom, 0.0, 1.0))


def cs_nmi(pred, truth, n_nodes):
    """NMI between the in/out indicator partitions of two node sets."""
    a = np.zeros(n_nodes, np.int64)
    b = np.zeros(n_nodes, np.int64)
    a[list(pred)] = 1
    b[list(truth)] = 1
    return nmi(a, b)


def _cover_matrix(cover):
    """Boolean (n, k) membership matrix from ``cover[v] = iterable of ids``."""
    ids = sorted({int(c) for ls in cover for c in ls})
    col = {c: j for j, c in enumerate(ids)}
    m = np.zeros((len(cover), len(ids)), bool)
    for v, ls in enumerate(cover):
        for c in ls:
            m[v, col[int(c)]] = True
    return m


def _h(p):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p > 0, -p * np.log2(np.where(p > 0, p, 1)), 0.0)


def _cond_entropy_norm(x, y):
    """Average over communities of X of the best normalized H(X_k | Y_l)."""
    n = x.shape[0]
    xi = x.astype(np.float64)
    yi = y.astype(np.float64)
    n11 = xi.T @ yi
    nx = xi.sum(0)[:, None]
    ny = yi.sum(0)[None, :]
    p11 = n11 / n
    p10 = (nx - n11) / n
    p01 = (ny - n11) / n
    p00 = 1.0 - p11 - p10 - p01
    hx = _h(nx[:, 0] / n) + _h(1 - nx[:, 0] / n)
    hy = _h(ny[0] / n) + _h(1 - ny[0] / n)
    joint = _h(p11) + _h(p10) + _h(p01) + _h(p00)
    cond = joint - hy[None, :]
    admissible = _h(p11) + _h(p00) > _h(p01) + _h(p10)
    cond = np.where(admissible, cond, hx[:, None])
    best = cond.min(axis=1) if cond.shape[1] else hx
    with np.errstate(divide="ignore", invalid="ignore"):
        normed = np.where(hx > 0, best / np.where(hx > 0, hx, 1), 0.0)
    return float(normed.mean()) if normed.size else 0.0


def onmi(a, b):
    """Overlapping NMI of Lancichinetti, Fortunato and Kertesz (2009).

    ``a`` and ``b`` are covers: ``a[v]`` is the iterable of communities of v.
    """
    if len(a) != len(b):
        raise InvalidArgument("covers must label the same nodes")
    x, y = _cover_matrix(a), _cover_matrix(b)
    if x.shape[1] == 0 or y.shape[1] == 0:
        return 0.0
    value = 1.0 - 0.5 * (_cond_entropy_norm(x, y) + _cond_entropy_norm(y, x))
    return float(np.clip(value, 0.0, 1.0))


def overlap_rate(labels):
    """Fraction of nodes with more than one community."""
    return float(np.mean([len(set(ls)) > 1 for ls in labels])) if len(labels) else 0.0


def max_label_affiliation(labels):
    return max((len(set(ls)) for ls in labels), default=0)


def modularity(g, labels):
    """Newman modularity at resolution 1 for a hard partition."""
    labels = np.asarray(labels)
    m = g.n_edges
    if m == 0:
        return 0.0
    _, li = np.unique(labels, return_inverse=True)
    deg = g.degrees.astype(np.float64)
    edges = g.edge_array()
    internal = np.bincount(li[edges[:, 0]][li[edges[:, 0]] == li[edges[:, 1]]], minlength=li.max() + 1)
    dsum = np.bincount(li, weights=deg, minlength=li.max() + 1)
    return float((internal / m - (dsum / (2.0 * m)) ** 2).sum())
