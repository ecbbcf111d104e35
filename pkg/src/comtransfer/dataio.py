"""Dataset bundles, result files and query sampling.

A bundle is a directory::

    edges.tsv      one ``u<TAB>v`` pair per line, undirected, 0-based
    features.csv   one comma-separated row per node (or ``features/`` in the
                   raw-array format for large graphs)
    labels.tsv     optional, ``node<TAB>comm[,comm...]``
    queries.tsv    optional, ``q_id<TAB>nodes;positives;negatives``
    meta.json      ``n_nodes`` plus free-form split metadata
"""
import csv
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument
from .graph import Graph
from .storage import read_arrays, write_arrays

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Query:
    qid: str
    nodes: tuple
    positives: tuple = ()
    negatives: tuple = ()


@dataclass
class DatasetBundle:
    graph: Graph
    labels: list = None  # labels[v] is a tuple of community ids
    queries: list = None
    meta: dict = field(default_factory=dict)

    @property
    def n_communities(self):
        if not self.labels:
            return None
        return len({c for ls in self.labels for c in ls})

    def communities(self):
        """``{community id: sorted node array}``."""
        members = {}
        for v, ls in enumerate(self.labels or ()):
            for c in ls:
                members.setdefault(c, []).append(v)
        return {c: np.array(vs, np.int64) for c, vs in sorted(members.items())}

    def hard_labels(self):
        """First community of each node, for disjoint data."""
        return np.array([ls[0] for ls in self.labels], np.int64)


# ------------------------------------------------------------------ text helpers


def _fmt_ids(ids):
    return ",".join(str(int(i)) for i in ids)


def _parse_ids(text, path, lineno):
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(int(t) for t in text.split(","))
    except ValueError:
        raise InvalidArgument(f"{path}:{lineno}: malformed id list {text!r}") from None


def write_edges(path, graph):
    with open(path, "w") as fh:
        for u, v in graph.edge_array():
            fh.write(f"{u}\t{v}\n")


def read_edges(path):
    edges = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise InvalidArgument(f"{path}:{lineno}: expected 'u<TAB>v', got {line!r}")
            try:
                edges.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise InvalidArgument(f"{path}:{lineno}: non-integer node id in {line!r}") from None
    return edges


def write_features(path, x):
    np.savetxt(path, np.asarray(x, np.float32), fmt="%.9g", delimiter=",")


def read_features(path, n_rows=None):
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), 1):
            if not rec:
                continue
            if width is None:
                width = len(rec)
            elif len(rec) != width:
                raise InvalidArgument(f"{path}:{lineno}: expected {width} values, got {len(rec)}")
            try:
                rows.append([float(t) for t in rec])
            except ValueError:
                raise InvalidArgument(f"{path}:{lineno}: non-numeric feature value") from None
    if n_rows is not None and len(rows) != n_rows:
        raise InvalidArgument(
            f"{path}: expected {n_rows} rows, file ends after line {len(rows)}"
        )
    return np.asarray(rows, np.float32).reshape(len(rows), width or 0)


def write_labels(path, labels):
    with open(path, "w") as fh:
        for v, ls in enumerate(labels):
            fh.write(f"{v}\t{_fmt_ids(ls)}\n")


def read_labels(path, n_nodes=None):
    with open(path) as fh:
        return _parse_labels(fh, path, n_nodes)


def _parse_labels(lines, path, n_nodes=None, first_lineno=1):
    found = {}
    for lineno, line in enumerate(lines, first_lineno):
        line = line.strip()
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise InvalidArgument(f"{path}:{lineno}: expected 'node<TAB>comm[,comm...]'")
        try:
            v = int(parts[0])
        except ValueError:
            raise InvalidArgument(f"{path}:{lineno}: bad node id {parts[0]!r}") from None
        comms = _parse_ids(parts[1], path, lineno)
        if not comms or min(comms) < 0:
            raise InvalidArgument(f"{path}:{lineno}: community ids must be non-negative")
        if n_nodes is not None and not 0 <= v < n_nodes:
            raise InvalidArgument(f"{path}:{lineno}: node {v} out of range [0, {n_nodes})")
        found[v] = tuple(sorted(set(comms)))
    n = n_nodes if n_nodes is not None else (max(found) + 1 if found else 0)
    missing = [v for v in range(n) if v not in found]
    if missing:
        raise InvalidArgument(f"{path}: no label for node {missing[0]}")
    return [found[v] for v in range(n)]


def write_queries(path, queries):
    with open(path, "w") as fh:
        for q in queries:
            fh.write(f"{q.qid}\t{_fmt_ids(q.nodes)};{_fmt_ids(q.positives)};{_fmt_ids(q.negatives)}\n")


def read_queries(path, n_nodes=None):
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or parts[1].count(";") != 2:
                raise InvalidArgument(f"{path}:{lineno}: expected 'q_id<TAB>nodes;positives;negatives'")
            nodes, pos, neg = (_parse_ids(t, path, lineno) for t in parts[1].split(";"))
            if not nodes:
                raise InvalidArgument(f"{path}:{lineno}: query has no nodes")
            for v in nodes + pos + neg:
                if v < 0 or (n_nodes is not None and v >= n_nodes):
                    raise InvalidArgument(f"{path}:{lineno}: node {v} out of range")
            out.append(Query(parts[0], nodes, pos, neg))
    return out


# ------------------------------------------------------------------ bundles


def save_bundle(path, bundle, binary_features=False):
    os.makedirs(path, exist_ok=True)
    g = bundle.graph
    write_edges(os.path.join(path, "edges.tsv"), g)
    if binary_features:
        write_arrays(os.path.join(path, "features"), {"x": g.features})
    else:
        write_features(os.path.join(path, "features.csv"), g.features)
    if bundle.labels is not None:
        write_labels(os.path.join(path, "labels.tsv"), bundle.labels)
    if bundle.queries is not None:
        write_queries(os.path.join(path, "queries.tsv"), bundle.queries)
    meta = dict(bundle.meta)
    meta["n_nodes"] = g.n_nodes
    with open(os.path.join(path, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_bundle(path):
    if not os.path.isdir(path):
        raise InvalidArgument(f"{path}: not a dataset directory")
    meta = {}
    mpath = os.path.join(path, "meta.json")
    if os.path.exists(mpath):
        with open(mpath) as fh:
            meta = json.load(fh)
    n = meta.get("n_nodes")
    if os.path.isdir(os.path.join(path, "features")):
        x = read_arrays(os.path.join(path, "features"))[0]["x"]
        if n is not None and x.shape[0] != n:
            raise InvalidArgument(f"{path}/features: expected {n} rows, found {x.shape[0]}")
    else:
        x = read_features(os.path.join(path, "features.csv"), n)
    n = x.shape[0] if n is None else n
    g = Graph.from_edges(n, read_edges(os.path.join(path, "edges.tsv")), x)
    lpath = os.path.join(path, "labels.tsv")
    labels = read_labels(lpath, n) if os.path.exists(lpath) else None
    qpath = os.path.join(path, "queries.tsv")
    queries = read_queries(qpath, n) if os.path.exists(qpath) else None
    return DatasetBundle(g, labels, queries, meta)


# ------------------------------------------------------------------ results


def save_result(path, result):
    """Write a :class:`~comtransfer.experts.CommunityResult` as text."""
    with open(path, "w") as fh:
        fh.write(f"# task={result.task}\n")
        if result.task == "cs":
            for qid, nodes in zip(result.query_ids, result.communities):
                fh.write(f"{qid}\t{_fmt_ids(nodes)}\n")
        elif result.task == "dcd":
            for v, c in enumerate(result.labels):
                fh.write(f"{v}\t{int(c)}\n")
        else:
            for v, ls in enumerate(result.memberships):
                fh.write(f"{v}\t{_fmt_ids(ls)}\n")


def load_result(path):
    """Returns ``(task, payload)``: cs -> {qid: node tuple}; dcd/ocd -> labels list."""
    with open(path) as fh:
        header = fh.readline().strip()
    if not header.startswith("# task="):
        raise InvalidArgument(f"{path}: missing '# task=' header")
    task = header.split("=", 1)[1]
    if task == "cs":
        out = {}
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if lineno == 1 or not line.strip():
                    continue
                qid, ids = line.rstrip("\n").split("\t")
                out[qid] = _parse_ids(ids, path, lineno)
        return task, out
    if task in ("dcd", "ocd"):
        with open(path) as fh:
            next(fh)
            return task, _parse_labels(fh, path, first_lineno=2)
    raise InvalidArgument(f"{path}: unknown task {task!r}")


# ------------------------------------------------------------------ queries


def sample_queries(bundle, per_community=20, sizes=(1, 2, 3), n_pos=3, n_neg=3, seed=0):
    """Queries drawn inside ground-truth communities with disjoint weak labels.

    Query ids are ``c<community>_q<i>``. Communities with fewer than
    ``max(sizes) + n_pos + n_neg`` members are skipped with a warning.
    """
    if bundle.labels is None:
        raise InvalidArgument("query sampling needs community labels")
    rng = np.random.default_rng(seed)
    n = bundle.graph.n_nodes
    need = max(sizes) + n_pos + n_neg
    out = []
    for c, members in bundle.communities().items():
        if members.size < need:
            log.warning("community %s has %d members (< %d); skipped", c, members.size, need)
            continue
        outside = np.setdiff1d(np.arange(n), members)
        if outside.size < n_neg:
            log.warning("community %s leaves too few outside nodes; skipped", c)
            continue
        for i in range(per_community):
            size = int(rng.choice(sizes))
            picked = rng.choice(members, size=size + n_pos, replace=False)
            neg = rng.choice(outside, size=n_neg, replace=False)
            out.append(
                Query(
                    f"c{c}_q{i}",
                    tuple(sorted(int(v) for v in picked[:size])),
                    tuple(sorted(int(v) for v in picked[size:])),
                    tuple(sorted(int(v) for v in neg)),
                )
            )
    return out


def query_community(query, labels):
    """Ground-truth community of a query: parsed from ``c<id>_`` ids, else shared by all query nodes."""
    if query.qid.startswith("c") and "_" in query.qid:
        try:
            return int(query.qid[1 : query.qid.index("_")])
        except ValueError:
            pass
    common = set(labels[query.nodes[0]])
    for v in query.nodes[1:]:
        common &= set(labels[v])
    if not common:
        raise InvalidArgument(f"query {query.qid}: nodes share no community")
    return min(common)
