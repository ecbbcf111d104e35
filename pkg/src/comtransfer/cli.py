"""Command-line entry point.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""
import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .config import RunConfig
from .das import adapter_dir, das_train, load_adapter, predict_from_embeddings, save_adapter
from .dataio import (
    DatasetBundle,
    load_bundle,
    load_result,
    read_queries,
    sample_queries,
    save_bundle,
    save_result,
    query_community,
)
from .errors import InvalidArgument, NumericalError
from .experts import CommunityResult, fuse_cs, fuse_dcd, fuse_ocd
from .graph import TokenTensor
from .metrics import cs_nmi, max_label_affiliation, nmi, onmi, overlap_rate, set_f1, set_jaccard
from .prompts import preprocess
from .sbm import sbm_generate
from .storage import read_arrays, write_arrays
from .ugl import load_checkpoint, pretrain, save_checkpoint

log = logging.getLogger("comtransfer")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


# --------------------------------------------------------------------- helpers


def _config(args):
    cfg = RunConfig.from_json(args.config) if args.config else RunConfig()
    return cfg.with_(seed=args.seed) if args.seed is not None else cfg


def _int_list(text):
    try:
        return [int(t) for t in text.split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _parallel(fn, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _save_tokens(path, tokens, meta):
    write_arrays(
        path,
        {"tokens": tokens.tokens, "mask": tokens.mask, "selected_hop": tokens.selected_hop},
        dict(meta, kind="token_cache"),
    )


def _load_tokens(path, h_max, pe_dim):
    arrays, meta = read_arrays(path)
    if meta.get("kind") != "token_cache":
        raise InvalidArgument(f"{path}: not a token cache")
    if (meta["h_max"], meta["pe_dim"]) != (h_max, pe_dim):
        raise InvalidArgument(
            f"{path}: cached with h_max={meta['h_max']}, pe_dim={meta['pe_dim']}; need {h_max}, {pe_dim}"
        )
    return TokenTensor(arrays["tokens"], arrays["mask"], arrays["selected_hop"])


def _target_tokens(args, bundle, ckpt, k_feat):
    c = ckpt.config
    if getattr(args, "tokens", None):
        return _load_tokens(args.tokens, c.h_max, c.pe_dim)
    return preprocess(bundle.graph, c.h_max, c.pe_dim, k_feat=k_feat, seed=c.seed)


def _queries(args, bundle):
    if getattr(args, "queries", None):
        return read_queries(args.queries, bundle.graph.n_nodes)
    if bundle.queries:
        return bundle.queries
    raise InvalidArgument("no queries: pass --queries or add queries.tsv to the target bundle")


def _k(args, bundle):
    if getattr(args, "k", None):
        return args.k
    if bundle.n_communities:
        return bundle.n_communities
    raise InvalidArgument("number of communities unknown: pass --k")


def _write_prediction(path, result):
    if result.task == "cs":
        arrays = {"scores": np.stack(result.scores)}
    elif result.task == "dcd":
        arrays = {"embeddings": result.meta["embeddings"], "labels": result.labels}
    else:
        arrays = {"soft": result.soft}
    write_arrays(path, arrays, {"kind": "prediction", "task": result.task, "query_ids": result.query_ids})


def _read_prediction(path, task):
    if not os.path.exists(os.path.join(path, "manifest.json")):
        raise InvalidArgument(f"{path}: no stored prediction; run 'adapt --task {task}' first")
    return read_arrays(path)


def _fuse(task, preds, args, cfg, queries=None, k=None):
    """Join per-expert predictions ``preds`` (list of dicts of arrays)."""
    if task == "cs":
        comms, scores = [], []
        for i, q in enumerate(queries):
            ranked, mean = fuse_cs([p["scores"][i] for p in preds], args.size, q.nodes)
            comms.append(ranked)
            scores.append(mean)
        return CommunityResult("cs", [q.qid for q in queries], comms, scores)
    if task == "dcd":
        labels = fuse_dcd([p["embeddings"] for p in preds], k, seed=cfg.seed)
        return CommunityResult("dcd", labels=labels)
    threshold = args.threshold if getattr(args, "threshold", None) is not None else cfg.threshold
    members, mean = fuse_ocd([p["soft"] for p in preds], threshold)
    return CommunityResult("ocd", soft=mean, memberships=members)


# --------------------------------------------------------------------- commands


def cmd_gen_sbm(args, cfg):
    g, labels = sbm_generate(
        args.sizes,
        args.p_in,
        args.p_out,
        feature_dim=args.dim,
        separation=args.separation,
        overlap=args.overlap,
        seed=cfg.seed,
    )
    bundle = DatasetBundle(g, labels, meta={"generator": "sbm", "seed": cfg.seed})
    if args.queries_per_community:
        bundle.queries = sample_queries(bundle, per_community=args.queries_per_community, seed=cfg.seed)
    save_bundle(args.out, bundle)
    print(f"wrote {args.out}: {g.n_nodes} nodes, {g.n_edges} edges")


def cmd_preprocess(args, cfg):
    bundle = load_bundle(args.graph)
    k_feat = cfg.k_feat or bundle.n_communities
    tokens = preprocess(bundle.graph, cfg.h_max, cfg.pe_dim, k_feat=k_feat, seed=cfg.seed)
    _save_tokens(args.out, tokens, {"h_max": cfg.h_max, "pe_dim": cfg.pe_dim})
    print(f"wrote {args.out}: tokens {tokens.tokens.shape}")


def cmd_pretrain(args, cfg):
    if len(args.source) != len(args.out):
        raise InvalidArgument("--source and --out need the same number of paths")

    def run(pair):
        src, out = pair
        bundle = load_bundle(src)
        tokens = _load_tokens(args.tokens, cfg.h_max, cfg.pe_dim) if args.tokens else None
        ckpt = pretrain(bundle.graph, cfg, k_feat=cfg.k_feat or bundle.n_communities, tokens=tokens)
        save_checkpoint(ckpt, out)
        return out, len(ckpt.history), ckpt.history[-1]

    for out, epochs, loss in _parallel(run, list(zip(args.source, args.out)), args.threads):
        print(f"wrote {out}: {epochs} epochs, final loss {loss:.6f}")


def cmd_adapt(args, cfg):
    bundle = load_bundle(args.target)
    task = args.task
    queries = _queries(args, bundle) if task == "cs" else None
    k = _k(args, bundle) if task != "cs" else None

    def run(path):
        ckpt = load_checkpoint(path)
        run_cfg = cfg.with_(h_max=ckpt.config.h_max, pe_dim=ckpt.config.pe_dim)
        tokens = _target_tokens(args, bundle, ckpt, run_cfg.k_feat or k or bundle.n_communities)
        expert, result = das_train(bundle.graph, ckpt, task, run_cfg, queries=queries, k=k, tokens=tokens)
        out = adapter_dir(path, task)
        save_adapter(expert, out)
        _write_prediction(os.path.join(out, "prediction"), result)
        return out, len(expert.history), expert.history[-1]

    for out, epochs, loss in _parallel(run, args.ckpt, args.threads):
        print(f"wrote {out}: {epochs} epochs, final loss {loss:.6f}")


def _predict_all(args, cfg, task, bundle, queries=None, k=None):
    def run(path):
        ckpt = load_checkpoint(path)
        adir = adapter_dir(path, task)
        if not os.path.isdir(adir):
            raise InvalidArgument(f"{path}: no {task} adapter; run 'adapt --task {task}' first")
        expert = load_adapter(adir, ckpt)
        tokens = _target_tokens(args, bundle, ckpt, expert.config.k_feat or k or bundle.n_communities)
        node, com = expert.encode(tokens)
        result = predict_from_embeddings(task, node, com, expert.params, expert.config, expert.k, queries)
        if task == "cs":
            return {"scores": np.stack(result.scores)}
        if task == "dcd":
            return {"embeddings": result.meta["embeddings"]}
        return {"soft": result.soft}

    return _parallel(run, args.ckpt, args.threads)


def cmd_search(args, cfg):
    bundle = load_bundle(args.target)
    queries = _queries(args, bundle)
    preds = _predict_all(args, cfg, "cs", bundle, queries=queries)
    save_result(args.out, _fuse("cs", preds, args, cfg, queries=queries))
    print(f"wrote {args.out}: {len(queries)} communities of size {args.size}")


def cmd_detect(args, cfg):
    bundle = load_bundle(args.target)
    task = "ocd" if args.overlap else "dcd"
    k = _k(args, bundle)
    preds = _predict_all(args, cfg, task, bundle, k=k)
    save_result(args.out, _fuse(task, preds, args, cfg, k=k))
    print(f"wrote {args.out}: {task} with K={k}")


def cmd_fuse(args, cfg):
    task = args.task
    preds = []
    query_ids = None
    for path in args.ckpt:
        arrays, meta = _read_prediction(os.path.join(adapter_dir(path, task), "prediction"), task)
        if task == "cs":
            if query_ids is not None and meta["query_ids"] != query_ids:
                raise InvalidArgument(f"{path}: stored prediction covers different queries")
            query_ids = meta["query_ids"]
        preds.append(arrays)
    queries = k = None
    if task == "cs":
        if args.size is None:
            raise InvalidArgument("fuse --task cs needs --size")
        bundle = load_bundle(args.target)
        by_id = {q.qid: q for q in _queries(args, bundle)}
        missing = [qid for qid in query_ids if qid not in by_id]
        if missing:
            raise InvalidArgument(f"query {missing[0]} not found in the query file")
        queries = [by_id[qid] for qid in query_ids]
    elif task == "dcd":
        k = args.k or int(preds[0]["labels"].max()) + 1
    save_result(args.out, _fuse(task, preds, args, cfg, queries=queries, k=k))
    print(f"wrote {args.out}: fused {len(preds)} experts")


def cmd_eval(args, cfg):
    bundle = load_bundle(args.target)
    if bundle.labels is None:
        raise InvalidArgument(f"{args.target}: evaluation needs labels.tsv")
    task, payload = load_result(args.result)
    metric = args.metric
    if metric in ("or", "mla"):
        if task == "cs":
            raise InvalidArgument(f"metric {metric} applies to detection results")
        value = overlap_rate(payload) if metric == "or" else max_label_affiliation(payload)
    elif task == "cs":
        if metric == "onmi":
            raise InvalidArgument("onmi applies to detection results")
        by_id = {q.qid: q for q in _queries(args, bundle)}
        comms = bundle.communities()
        n = bundle.graph.n_nodes
        fn = {
            "f1": set_f1,
            "jac": set_jaccard,
            "nmi": lambda p, t: cs_nmi(p, t, n),
        }[metric]
        values = []
        for qid, nodes in payload.items():
            if qid not in by_id:
                raise InvalidArgument(f"query {qid} not found in the query file")
            values.append(fn(nodes, comms[query_community(by_id[qid], bundle.labels)]))
        value = float(np.mean(values))
    elif metric == "nmi":
        value = nmi([ls[0] for ls in payload], bundle.hard_labels())
    elif metric == "onmi":
        value = onmi(payload, bundle.labels)
    else:
        raise InvalidArgument(f"metric {metric} applies to search results")
    print(json.dumps({"metric": metric, "task": task, "value": value}))


# --------------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(prog="comtransfer", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--config", help="JSON run configuration (unknown keys rejected)")
    p.add_argument("--threads", type=int, default=1, help="parallel expert runs")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-sbm", help="generate a planted-partition bundle")
    s.add_argument("--out", required=True)
    s.add_argument("--sizes", type=_int_list, required=True, help="block sizes, e.g. 50,50,50,50")
    s.add_argument("--p-in", type=float, required=True)
    s.add_argument("--p-out", type=float, required=True)
    s.add_argument("--dim", type=int, default=16)
    s.add_argument("--separation", type=float, default=3.0)
    s.add_argument("--overlap", type=float, default=0.0)
    s.add_argument("--queries-per-community", type=int, default=0)
    s.set_defaults(fn=cmd_gen_sbm)

    s = sub.add_parser("preprocess", help="hop tokens + cohesive prompts -> token cache")
    s.add_argument("--graph", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_preprocess)

    s = sub.add_parser("pretrain", help="pre-train one expert per source bundle")
    s.add_argument("--source", nargs="+", required=True)
    s.add_argument("--out", nargs="+", required=True)
    s.add_argument("--tokens", help="token cache for a single source")
    s.set_defaults(fn=cmd_pretrain)

    s = sub.add_parser("adapt", help="adapt frozen experts to a target bundle")
    s.add_argument("--task", choices=("cs", "dcd", "ocd"), required=True)
    s.add_argument("--ckpt", nargs="+", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--queries", help="training queries with labels (default: bundle queries)")
    s.add_argument("--k", type=int)
    s.add_argument("--tokens")
    s.set_defaults(fn=cmd_adapt)

    s = sub.add_parser("search", help="community search with fused adapted experts")
    s.add_argument("--ckpt", nargs="+", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--size", type=int, required=True, help="community size r")
    s.add_argument("--out", required=True)
    s.add_argument("--tokens")
    s.set_defaults(fn=cmd_search)

    s = sub.add_parser("detect", help="community detection with fused adapted experts")
    s.add_argument("--ckpt", nargs="+", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--k", type=int)
    s.add_argument("--overlap", action="store_true")
    s.add_argument("--threshold", type=float)
    s.add_argument("--out", required=True)
    s.add_argument("--tokens")
    s.set_defaults(fn=cmd_detect)

    s = sub.add_parser("fuse", help="fuse the predictions stored by 'adapt'")
    s.add_argument("--task", choices=("cs", "dcd", "ocd"), required=True)
    s.add_argument("--ckpt", nargs="+", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--target", help="needed for cs (query file lookup)")
    s.add_argument("--queries")
    s.add_argument("--size", type=int)
    s.add_argument("--k", type=int)
    s.add_argument("--threshold", type=float)
    s.set_defaults(fn=cmd_fuse)

    s = sub.add_parser("eval", help="score a result file against bundle labels")
    s.add_argument("--metric", choices=("f1", "nmi", "jac", "onmi", "or", "mla"), required=True)
    s.add_argument("--result", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--queries")
    s.set_defaults(fn=cmd_eval)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.threads < 1:
            raise InvalidArgument("--threads must be >= 1")
        args.fn(args, _config(args))
    except InvalidArgument as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
