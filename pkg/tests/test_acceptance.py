"""Acceptance criteria 1-13, one PASS/FAIL line each.

Lines are printed as each test runs and repeated in the terminal summary.
"""
import itertools
import json
import time

import numpy as np
import pytest

from comtransfer import autograd as ag
from comtransfer.cli import main
from comtransfer.cluster import louvain
from comtransfer.config import RunConfig
from comtransfer.das import (
    adaptation_prompt,
    cmmd_loss,
    cs_loss,
    cs_loss_logits,
    das_train,
    dcd_loss,
    median_bandwidth,
    ocd_loss,
    project,
)
from comtransfer.dataio import DatasetBundle, query_community, sample_queries
from comtransfer.encoder import EncoderConfig, gt_forward, init_params
from comtransfer.experts import fuse_cs, fuse_dcd, fuse_ocd, hungarian
from comtransfer.graph import Graph, conductance, khop_neighborhood, select_local_hops
from comtransfer.metrics import modularity, nmi, onmi, set_f1
from comtransfer.prompts import preprocess
from comtransfer.sbm import sbm_generate
from comtransfer.ugl import margin_loss, pretrain, recon_loss, sample_negatives, ugl_loss
from conftest import DESK, EXAMPLE_EDGES, all_subsets, brute_hops, fraction_conductance, random_graph, to_nx

REPORT = {}
TOL = 1e-3


def report(n, ok, detail):
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    REPORT[n] = line
    print(line)
    assert ok, line


def smooth(x, w=3):
    return np.convolve(x, np.ones(w) / w, mode="valid")


# ------------------------------------------------------------------ 1


def gradient_cases():
    rng = np.random.default_rng(0)
    r = lambda *s: rng.normal(size=s)
    neg = sample_negatives(5, 3, rng)
    edges, non = np.array([[0, 1], [1, 2], [3, 4]]), np.array([[0, 3], [2, 4]])
    labels = np.array([0, 0, 1, 1, 1])
    g = random_graph(5, 0.6, np.random.default_rng(1))
    ugl_cfg = DESK.with_(neg_per_node=2, non_edge_ratio=1)
    enc_cfg = EncoderConfig(d_in=4, hidden=8, heads=2, layers=1, dropout=0.0)
    enc = init_params(enc_cfg, seed=0, dtype=np.float64)
    names = list(enc)
    mask = np.array([[1, 1, 0, 1], [1, 0, 1, 1], [1, 1, 1, 1]], bool)

    def encoder(z, *vals):
        node, com = gt_forward(z, mask, dict(zip(names, vals)), enc_cfg)
        return ag.add(ag.tsum(ag.mul(node, com)), ag.tsum(ag.sigmoid(node)))

    def prompt_projector(x, basis, keys, w, b):
        z = project(adaptation_prompt(x, mask, basis, keys), w, b)
        return ag.tsum(ag.mul(z, z))

    src = r(6, 4)
    return {
        "cmmd": (lambda x: cmmd_loss(x, src, bandwidth=median_bandwidth(src, src + 1)), [r(5, 4)]),
        "cs_bce": (lambda a: cs_loss([ag.sigmoid(a)], [np.array([1, 0, 1, 0, 0])]), [r(5)]),
        "cs_bce_logits": (lambda a: cs_loss_logits([a], [np.array([1, 0, 1, 0, 0])]), [r(5)]),
        "dcd": (lambda n, c: dcd_loss(n, c, 2, labels=labels)[0], [r(5, 4), r(5, 4)]),
        "ocd": (lambda y: ocd_loss(y, edges, non), [np.abs(r(5, 3)) + 0.1]),
        "ugl_margin": (lambda h, c: margin_loss(h, c, 0.5, neg), [r(5, 4), r(5, 4)]),
        "ugl_recon": (lambda h: recon_loss(h, edges, non), [r(5, 4)]),
        "ugl_combined": (lambda h, c: ugl_loss(h, c, g, ugl_cfg, np.random.default_rng(3)), [r(5, 4), r(5, 4)]),
        "prompt_projector": (prompt_projector, [r(3, 4, 4), r(3, 4), r(3, 4), r(4, 5), r(5)]),
        "encoder": (encoder, [r(3, 4, 4)] + [enc[k].data for k in names]),
    }


def test_criterion_01_gradients():
    t0 = time.perf_counter()
    errors = {name: ag.gradcheck(fn, args, h=1e-3) for name, (fn, args) in gradient_cases().items()}
    elapsed = time.perf_counter() - t0
    worst = max(errors, key=errors.get)
    ok = errors[worst] < TOL and elapsed < 30
    report(1, ok, f"{len(errors)} gradchecks, worst {worst} rel err {errors[worst]:.2e} (< 1e-3), {elapsed:.1f}s (< 30s)")


# ------------------------------------------------------------------ 2


def test_criterion_02_conductance():
    rng = np.random.default_rng(2)
    checked = mismatches = 0
    for _ in range(25):
        g = random_graph(8, float(rng.uniform(0.2, 0.7)), rng)
        edges = [tuple(e) for e in g.edge_array()]
        for s in all_subsets(8):
            checked += 1
            mismatches += conductance(g, list(s)) != float(fraction_conductance(edges, 8, s))
    ex = Graph.from_edges(8, EXAMPLE_EDGES)
    example = conductance(ex, khop_neighborhood(ex, 0, 1))
    ok = mismatches == 0 and example == 1 / 3
    report(2, ok, f"{checked} subsets, {mismatches} mismatches; example 1-hop conductance {example:.6f} (1/3)")


# ------------------------------------------------------------------ 3


def test_criterion_03_hop_selection():
    rng = np.random.default_rng(3)
    nodes = bad = 0
    for _ in range(20):
        n = int(rng.integers(5, 51))
        g = random_graph(n, float(rng.uniform(1.5, 4.0)) / n, rng)
        got, want = select_local_hops(g, 5), brute_hops(g, 5)
        nodes += n
        bad += int(np.sum(got != want))
    report(3, bad == 0, f"20 graphs, {nodes} nodes, {bad} disagreements with exhaustive recomputation")


# ------------------------------------------------------------------ 4


def test_criterion_04_louvain():
    from networkx.algorithms.community import modularity as nx_mod

    worst_gain, qs = np.inf, []
    for seed in range(10):
        g, _ = sbm_generate([30, 30], 0.5, 0.02, seed=seed)
        res = louvain(g, trace=True)
        G = to_nx(g)
        for level in res.trace:
            member = level["membership"]
            cur = np.arange(member.max() + 1)
            q_of = lambda: nx_mod(G, [set(np.flatnonzero(cur[member] == c)) for c in np.unique(cur[member])])
            before = q_of()
            for v, b in zip(level["moves"][0], level["moves"][2]):
                cur[v] = b
                after = q_of()
                worst_gain = min(worst_gain, after - before)
                before = after
        qs.append(modularity(g, res.labels))
    ok = worst_gain > 0 and min(qs) >= 0.3
    report(4, ok, f"smallest replayed move gain {worst_gain:.2e} (> 0); min final Q over 10 seeds {min(qs):.3f} (>= 0.3)")


# ------------------------------------------------------------------ 5


def test_criterion_05_cmmd():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(12, 4))
    same = abs(cmmd_loss(ag.Tensor(x), x).item())
    shifted = cmmd_loss(ag.Tensor(x), x + 10.0).item()
    worst = 0.0
    for _ in range(30):
        a = rng.normal(size=(int(rng.integers(1, 21)), 3))
        b = rng.normal(size=(int(rng.integers(1, 21)), 3)) + rng.uniform(0, 3)
        s = median_bandwidth(a, b)
        k = lambda u, v: np.exp(-np.sum((u - v) ** 2) / (2 * s * s))
        mean_k = lambda p, q: np.mean([k(u, v) for u, v in itertools.product(p, q)])
        oracle = mean_k(a, a) + mean_k(b, b) - 2 * mean_k(a, b)
        worst = max(worst, abs(cmmd_loss(ag.Tensor(a), b).item() - oracle))
    ok = same <= 1e-6 and shifted > 0 and worst <= 1e-6
    report(5, ok, f"identical {same:.1e}; translated {shifted:.3f} (> 0); max oracle gap {worst:.1e} over 30 set pairs")


# ------------------------------------------------------------------ 6


def test_criterion_06_fusion_risk():
    rng = np.random.default_rng(6)
    violations = 0
    for _ in range(1000):
        dists = [rng.dirichlet(np.ones(8)) for _ in range(3)]
        y = int(rng.integers(8))
        _, fused = fuse_cs(dists, 1)
        violations += -np.log(fused[y]) > np.mean([-np.log(d[y]) for d in dists]) + 1e-12

    def pair_loss(sim):
        y = np.full((2, 1), np.sqrt(sim))
        return ocd_loss(ag.Tensor(y), np.array([[0, 1]]), np.zeros((0, 2), np.int64)).item()

    ocd_violations = 0
    for _ in range(200):
        s = rng.uniform(0.01, 5.0, 2)
        ocd_violations += pair_loss(s.mean()) > np.mean([pair_loss(v) for v in s]) + 1e-12
    ok = violations == 0 and ocd_violations == 0
    report(6, ok, f"CS NLL violations {violations}/1000; OCD positive-pair convexity violations {ocd_violations}/200")


# ------------------------------------------------------------------ 7


def test_criterion_07_hungarian():
    rng = np.random.default_rng(7)
    bad = 0
    for i in range(100):
        k = 1 + i % 6
        c = rng.random((k, k))
        best = min(sum(c[r, p[r]] for r in range(k)) for p in itertools.permutations(range(k)))
        bad += not np.isclose(c[np.arange(k), hungarian(c)].sum(), best, rtol=0, atol=1e-12)
    report(7, bad == 0, f"100 matrices, K = 1..6, {bad} differ from the brute-force minimum")


# ------------------------------------------------------------------ 8-11


@pytest.fixture(scope="module")
def source():
    g, _ = sbm_generate([50] * 4, 0.3, 0.02, feature_dim=16, seed=0)
    t0 = time.perf_counter()
    ckpt = pretrain(g, DESK, k_feat=4)
    return ckpt, time.perf_counter() - t0


@pytest.fixture(scope="module")
def target():
    g, labels = sbm_generate([50] * 4, 0.3, 0.02, feature_dim=12, seed=1)
    return DatasetBundle(g, labels)


DIGESTS = []


def test_criterion_08_dcd_end_to_end(source, target):
    ckpt, t_pre = source
    before = ckpt.digest()
    t0 = time.perf_counter()
    _, result = das_train(target.graph, ckpt, "dcd", DESK, k=4)
    labels = fuse_dcd([result.meta["embeddings"]], 4, seed=DESK.seed)
    wall = t_pre + time.perf_counter() - t0
    score = nmi(labels, target.hard_labels())
    DIGESTS.append(before == ckpt.digest())
    report(8, score >= 0.7 and wall <= 300, f"fused NMI {score:.3f} (>= 0.7); pretrain + DAS {wall:.1f}s (<= 300s)")


def test_criterion_09_cs_end_to_end(source, target):
    ckpt, _ = source
    before = ckpt.digest()
    train = sample_queries(target, per_community=10, seed=0)
    evaluate = sample_queries(target, per_community=5, seed=1)
    _, result = das_train(target.graph, ckpt, "cs", DESK, queries=train, eval_queries=evaluate, r=50)
    comms = target.communities()
    f1 = [set_f1(c, comms[query_community(q, target.labels)]) for q, c in zip(evaluate, result.communities)]
    DIGESTS.append(before == ckpt.digest())
    report(9, len(f1) == 20 and np.mean(f1) >= 0.8, f"mean F1 over {len(f1)} queries {np.mean(f1):.3f} (>= 0.8)")


def test_criterion_10_ocd_end_to_end(source):
    ckpt, _ = source
    before = ckpt.digest()
    g, labels = sbm_generate([60, 60], 0.3, 0.02, feature_dim=10, overlap=0.2, seed=2)
    # patience = epochs so the first 50 epochs are always observed
    cfg = DESK.with_(patience=DESK.das_epochs)
    expert, result = das_train(g, ckpt, "ocd", cfg, k=2)
    members, _ = fuse_ocd([result.soft], cfg.threshold)
    score = onmi(members, labels)
    s = smooth(expert.task_history[:50])
    DIGESTS.append(before == ckpt.digest())
    ok = score >= 0.3 and len(expert.task_history) >= 50 and s[-1] < s[0]
    report(
        10,
        ok,
        f"ONMI {score:.3f} (>= 0.3); smoothed OCD loss {s[0]:.3f} -> {s[-1]:.3f} over 50 epochs, "
        f"{np.mean(np.diff(s) < 0):.0%} of steps down",
    )


def test_criterion_11_frozen_backbone():
    cfg = RunConfig(pretrain_epochs=1, das_epochs=1)
    gs, _ = sbm_generate([20, 20], 0.3, 0.05, feature_dim=16, seed=0)
    ckpt = pretrain(gs, cfg, k_feat=2)
    g, labels = sbm_generate([20, 20], 0.3, 0.05, feature_dim=12, seed=1)
    before = ckpt.digest()
    fractions = {}
    for task in ("cs", "dcd", "ocd"):
        queries = sample_queries(DatasetBundle(g, labels), per_community=2) if task == "cs" else None
        expert, _ = das_train(g, ckpt, task, cfg, queries=queries, k=2)
        fractions[task] = expert.n_trainable() / ckpt.n_params()
    frozen = before == ckpt.digest() and all(DIGESTS) and len(DIGESTS) == 3
    worst = max(fractions, key=fractions.get)
    ok = frozen and fractions[worst] < 0.05
    report(
        11,
        ok,
        f"backbone bytes unchanged across {len(DIGESTS) + 3} DAS runs: {frozen}; "
        f"largest trainable share {worst} {fractions[worst]:.2%} of {ckpt.n_params()} (< 5%)",
    )


# ------------------------------------------------------------------ 12


def fixed_degree_sbm(n, seed):
    blocks = max(2, n // 100)
    size = n // blocks
    g, _ = sbm_generate([size] * blocks, 5.0 / size, 1.0 / n, feature_dim=16, seed=seed)
    return g


def test_criterion_12_scaling():
    small, large = fixed_degree_sbm(1000, 0), fixed_degree_sbm(10000, 1)
    preprocess(small, 5, 3, seed=0)  # JIT warm-up

    def best(g):
        times = []
        for _ in range(2):
            t0 = time.perf_counter()
            preprocess(g, 5, 3, seed=0)
            times.append(time.perf_counter() - t0)
        return min(times)

    t_small, t_large = best(small), best(large)
    ratio = t_large / t_small
    report(12, ratio <= 15, f"preprocess {t_small:.3f}s at n=1000, {t_large:.3f}s at n=10000, ratio {ratio:.1f} (<= 15)")


# ------------------------------------------------------------------ 13


def pipeline(root, cfg_path):
    base = ["--config", str(cfg_path), "--seed", "0"]
    run = lambda *a: main(base + [str(x) for x in a])
    gen = ["gen-sbm", "--sizes", "25,25", "--p-in", "0.3", "--p-out", "0.02"]
    codes = [
        run(*gen, "--dim", 8, "--out", root / "src"),
        run(*gen, "--dim", 6, "--overlap", 0.1, "--queries-per-community", 5, "--out", root / "tar"),
        run("pretrain", "--source", root / "src", "--out", root / "ck"),
    ]
    for task in ("cs", "dcd", "ocd"):
        codes.append(run("adapt", "--task", task, "--ckpt", root / "ck", "--target", root / "tar"))
    q = root / "tar" / "queries.tsv"
    codes += [
        run("search", "--ckpt", root / "ck", "--target", root / "tar", "--queries", q, "--size", 25, "--out", root / "cs.tsv"),
        run("detect", "--ckpt", root / "ck", "--target", root / "tar", "--out", root / "dcd.tsv"),
        run("detect", "--ckpt", root / "ck", "--target", root / "tar", "--overlap", "--out", root / "ocd.tsv"),
    ]
    return codes


def test_criterion_13_reproducibility(tmp_path):
    cfg_path = tmp_path / "desk.json"
    cfg_path.write_text(json.dumps(DESK.to_dict()))
    codes = [pipeline(tmp_path / name, cfg_path) for name in ("a", "b")]
    files = ["cs.tsv", "dcd.tsv", "ocd.tsv"]
    same = [(tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files]
    ok = all(c == 0 for run in codes for c in run) and all(same)
    report(13, ok, f"two seeded CLI pipelines, result files identical: {dict(zip(files, same))}")
