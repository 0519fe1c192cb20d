"""Acceptance suite: one test per criterion, each printing a PASS line.

Communication-accounting criteria run on a structure-exact citation-graph
stand-in (2708 nodes, 5283 undirected edges, 1433 features, 7 classes)
unless FDGNN_CORA_BUNDLE points at a real bundle, in which case the full
published-accuracy comparison replaces the synthetic property fallback.
"""

import json
import os
import time

import numpy as np
import pytest

from fdgnn.endtoend import train_endtoend
from fdgnn.fedsgd import RunSettings, sample_round_clients
from fdgnn.graphs import SamplerConfig, full_view, sample_neighbors
from fdgnn.harness import ExperimentConfig, run_experiment
from fdgnn.kernels import grad_check, load_model, to_vec, from_vec, init_gnn, save_model
from fdgnn.synth import SynthSpec, synth_graph

CORA_ENV = "FDGNN_CORA_BUNDLE"
REAL_CORA = os.environ.get(CORA_ENV)

FALLBACK_SYNTH = {"nodes": 500, "classes": 5, "homophily": 0.85,
                  "feature_dim": 32, "avg_degree": 10, "seed": 11,
                  "class_sep": 2.4}


def cora_dataset() -> dict:
    if REAL_CORA:
        return {"bundle": REAL_CORA}
    return {"synthetic": {"preset": "cora-like", "seed": 7, "class_sep": 1.4}}


def cora_split() -> dict:
    return {"train_per_class": 40, "val_total": 280}


@pytest.fixture(scope="session")
def run_cache():
    cache: dict = {}
    times: dict = {}

    def get(doc: dict):
        key = json.dumps(doc, sort_keys=True)
        if key not in cache:
            t0 = time.time()
            cache[key] = run_experiment(ExperimentConfig.from_dict(doc))
            times[key] = time.time() - t0
        return cache[key]

    get.times = times
    return get


def cora_gcn_e2e_doc() -> dict:
    return {"arch": "gcn", "mode": "gnn", **cora_dataset(), **cora_split(),
            "rounds": 400, "lr": 0.075, "hidden": 128, "seed": 1}


def cora_gcn_lw_doc() -> dict:
    return {"arch": "gcn", "mode": "layerwise", **cora_dataset(),
            **cora_split(), "rounds": 400, "lr": 0.005, "hidden": 256,
            "seed": 1}


def fallback_doc(arch, mode, lr, rounds=400, **kw) -> dict:
    doc = {"arch": arch, "mode": mode,
           "synthetic": dict(FALLBACK_SYNTH), "rounds": rounds, "lr": lr,
           "hidden": 64, "pool_dim": 128, "seed": 100,
           "train_frac": 0.2, "val_frac": 0.2}
    doc.update(kw)
    return doc


# ---------------------------------------------------------------------------
# 1. Gradient suite
# ---------------------------------------------------------------------------

def test_criterion_1_gradient_suite():
    t0 = time.time()
    worst = 0.0
    for arch in ("mlp", "gcn", "sage", "gat"):
        for seed in range(10):
            err = grad_check(arch, (5, 4, 3), seed=seed, heads=2)
            worst = max(worst, err)
    elapsed = time.time() - t0
    assert worst < 1e-4
    assert elapsed < 60
    print(f"\n[acceptance] criterion 1 PASS: max rel err {worst:.2e} "
          f"over 4 archs x 10 seeds in {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. Cost-formula exactness
# ---------------------------------------------------------------------------

def test_criterion_2_cost_formula_exactness():
    from conftest import star_bundle
    I, H, d = 1000, 256, 10
    b = star_bundle(d, feature_dim=I, classes=2)
    s = RunSettings(arch="gcn", k=2, rounds=1, lr=0.05, hidden=H, seed=0)
    one = train_endtoend(b, full_view(b), np.array([0]), np.array([]), s)
    per_round = one.ledger.kind_payload["model-share"]
    assert per_round == 20_480_000  # 2 * I * H * d floats, 4 bytes each

    s400 = RunSettings(arch="gcn", k=2, rounds=400, lr=0.05, hidden=H, seed=0)
    full = train_endtoend(b, full_view(b), np.array([0]), np.array([]), s400)
    cumulative = full.ledger.kind_payload["model-share"]
    assert cumulative == 8_192_000_000
    print(f"\n[acceptance] criterion 2 PASS: model-share payload "
          f"{per_round} B/round, {cumulative} B over 400 rounds (exact)")


# ---------------------------------------------------------------------------
# 3. Magnitude gap
# ---------------------------------------------------------------------------

def test_criterion_3_magnitude_gap(run_cache):
    t0 = time.time()
    e2e = run_cache(cora_gcn_e2e_doc())
    lw = run_cache(cora_gcn_lw_doc())
    elapsed = time.time() - t0
    c2c_e2e = e2e.ledger_summary["channels"]["c2c_bytes"]
    c2c_lw = lw.ledger_summary["channels"]["c2c_bytes"]
    ratio = c2c_e2e / c2c_lw
    assert ratio >= 1e5
    assert elapsed < 45 * 60
    print(f"\n[acceptance] criterion 3 PASS: c2c gap "
          f"{c2c_e2e / 1e6:.1f} MB vs {c2c_lw / 1e6:.4f} MB "
          f"(ratio {ratio:.2e}) in {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 4. Layerwise c2c absolute value and arch independence
# ---------------------------------------------------------------------------

def test_criterion_4_layerwise_c2c_absolute(run_cache):
    lw_gcn = run_cache(cora_gcn_lw_doc())
    mb = lw_gcn.ledger_summary["channels"]["c2c_bytes"] / 1e6
    assert 0.56 <= mb <= 2.26
    # c2c traffic is embedding-only and round-budget independent, so the
    # cheaper 25-round runs of the other aggregators must match exactly
    others = []
    for arch in ("sage", "gat"):
        doc = {**cora_gcn_lw_doc(), "arch": arch, "rounds": 25}
        others.append(run_cache(doc).ledger_summary["channels"]["c2c_bytes"])
    assert others[0] == others[1] == lw_gcn.ledger_summary["channels"]["c2c_bytes"]
    print(f"\n[acceptance] criterion 4 PASS: layerwise c2c {mb:.4f} MB in "
          f"[0.56, 2.26], identical across gcn/sage/gat")


# ---------------------------------------------------------------------------
# 5. Accuracy regression
# ---------------------------------------------------------------------------

TABLE_TARGETS = {  # mode, arch, lr, hidden, published micro-F1
    ("mlp", "layerwise"): (0.1, 256, 0.644),
    ("gcn", "gnn"): (0.075, 128, 0.814),
    ("gcn", "layerwise"): (0.005, 256, 0.763),
    ("sage", "gnn"): (0.025, 256, 0.805),
    ("sage", "layerwise"): (0.005, 256, 0.785),
    ("gat", "gnn"): (0.1, 256, 0.813),
    ("gat", "layerwise"): (0.005, 256, 0.802),
}

FALLBACK_LR = {("mlp", "layerwise"): 0.05,
               ("gcn", "gnn"): 0.05, ("sage", "gnn"): 0.025,
               ("gat", "gnn"): 0.05,
               ("gcn", "layerwise"): 0.01, ("sage", "layerwise"): 0.01,
               ("gat", "layerwise"): 0.01}


@pytest.mark.skipif(not REAL_CORA, reason="real bundle not mounted; "
                    "synthetic property fallback runs instead")
def test_criterion_5_accuracy_published_values(run_cache):
    t0 = time.time()
    for (arch, mode), (lr, hidden, target) in TABLE_TARGETS.items():
        doc = {"arch": arch, "mode": mode, **cora_dataset(), **cora_split(),
               "rounds": 400, "lr": lr, "hidden": hidden, "seed": 1,
               "repeats": 5}
        if arch == "mlp":
            doc.pop("k", None)
        got = run_cache(doc).micro_f1_mean
        assert abs(got - target) <= 0.03, (arch, mode, got, target)
    assert time.time() - t0 < 2 * 3600
    print("\n[acceptance] criterion 5 PASS: all seven configs within 0.03")


@pytest.mark.skipif(bool(REAL_CORA), reason="real bundle mounted; published "
                    "values are checked instead")
def test_criterion_5_accuracy_property_fallback(run_cache):
    t0 = time.time()
    scores = {}
    for (arch, mode), lr in FALLBACK_LR.items():
        doc = fallback_doc(arch, mode, lr, repeats=5)
        scores[(arch, mode)] = run_cache(doc).micro_f1_mean
    mlp = scores[("mlp", "layerwise")]
    for arch in ("gcn", "sage", "gat"):
        base = scores[(arch, "gnn")]
        lw = scores[(arch, "layerwise")]
        assert abs(base - lw) <= 0.05, (arch, base, lw)
        assert base >= mlp - 0.01 and lw >= mlp - 0.01, (arch, base, lw, mlp)
    elapsed = time.time() - t0
    assert elapsed < 2 * 3600
    detail = ", ".join(f"{a}:{scores[(a, 'gnn')]:.3f}/{scores[(a, 'layerwise')]:.3f}"
                       for a in ("gcn", "sage", "gat"))
    print(f"\n[acceptance] criterion 5 PASS (fallback): mlp {mlp:.3f}, "
          f"base/layerwise {detail} in {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 6. Robustness to missing neighbors
# ---------------------------------------------------------------------------

def test_criterion_6_robustness_half_neighbors(run_cache):
    if REAL_CORA:
        base_doc = {"arch": "gat", "mode": "layerwise", **cora_dataset(),
                    **cora_split(), "rounds": 400, "lr": 0.005,
                    "hidden": 256, "seed": 1, "repeats": 5}
    else:
        base_doc = fallback_doc("gat", "layerwise",
                                FALLBACK_LR[("gat", "layerwise")], repeats=5)
    full = run_cache(base_doc).micro_f1_mean
    half = run_cache({**base_doc, "edge_keep": 0.5}).micro_f1_mean
    drop = full - half
    assert drop <= 0.02
    print(f"\n[acceptance] criterion 6 PASS: keep=1.0 {full:.3f} vs "
          f"keep=0.5 {half:.3f} (drop {drop:+.3f} <= 0.02)")


# ---------------------------------------------------------------------------
# 7. Round-budget independence / linearity
# ---------------------------------------------------------------------------

def test_criterion_7_round_budget_scaling(run_cache):
    lw = {r: run_cache(fallback_doc("gcn", "layerwise", 0.01, rounds=r))
          for r in (100, 400)}
    c2c_lw = {r: v.ledger_summary["channels"]["c2c_bytes"]
              for r, v in lw.items()}
    assert c2c_lw[100] == c2c_lw[400]

    e2e = {r: run_cache(fallback_doc("gcn", "gnn", 0.05, rounds=r))
           for r in (100, 200, 400)}
    c2c = {r: v.ledger_summary["channels"]["c2c_bytes"]
           for r, v in e2e.items()}
    inc1 = c2c[200] - c2c[100]
    inc2 = c2c[400] - c2c[200]
    assert inc1 > 0
    assert inc2 == 2 * inc1  # exact integer arithmetic
    print(f"\n[acceptance] criterion 7 PASS: layerwise c2c constant "
          f"({c2c_lw[400]} B), end-to-end affine in R "
          f"(+{inc1} B per 100 rounds)")


# ---------------------------------------------------------------------------
# 8. Determinism
# ---------------------------------------------------------------------------

def test_criterion_8_determinism(tmp_path):
    for doc in (fallback_doc("gcn", "gnn", 0.05, rounds=60),
                fallback_doc("gcn", "layerwise", 0.01, rounds=60)):
        cfg = ExperimentConfig.from_dict(doc)
        a = run_experiment(cfg, save_models_dir=tmp_path / "a")
        b = run_experiment(cfg, save_models_dir=tmp_path / "b")
        assert a.to_json() == b.to_json()
        for fa in sorted((tmp_path / "a").iterdir()):
            fb = tmp_path / "b" / fa.name
            assert fa.read_bytes() == fb.read_bytes()
    print("\n[acceptance] criterion 8 PASS: reports and checkpoints "
          "bit-identical across reruns")


# ---------------------------------------------------------------------------
# 9. Early stopping strictly reduces both channels
# ---------------------------------------------------------------------------

def test_criterion_9_early_stopping_lowers_totals(run_cache):
    fixed = run_cache(cora_gcn_e2e_doc())
    es = run_cache({**cora_gcn_e2e_doc(), "patience": 30})
    chf = fixed.ledger_summary["channels"]
    che = es.ledger_summary["channels"]
    assert es.rounds_run[0] < 400
    assert che["c2c_bytes"] < chf["c2c_bytes"]
    assert che["c2s_bytes"] < chf["c2s_bytes"]
    print(f"\n[acceptance] criterion 9 PASS: patience-30 stopped at round "
          f"{es.rounds_run[0]}, c2c {che['c2c_mb']:.0f} < {chf['c2c_mb']:.0f} MB, "
          f"c2s {che['c2s_mb']:.0f} < {chf['c2s_mb']:.0f} MB")


# ---------------------------------------------------------------------------
# 10. Centralized-equivalence oracle
# ---------------------------------------------------------------------------

def test_criterion_10_centralized_equivalence():
    b = synth_graph(SynthSpec(nodes=20, classes=3, homophily=0.8,
                              feature_dim=6, avg_degree=4, seed=21,
                              class_sep=1.5))
    view = full_view(b)
    train = np.arange(0, 20, 3)
    s = RunSettings(arch="gcn", k=2, rounds=3, lr=0.05, hidden=8, seed=17)
    run = train_endtoend(b, view, train, np.array([]), s)

    # plain centralized FedSGD trainer: same sampling seeds, same kernels,
    # no protocol machinery and no ledger
    from fdgnn.endtoend import backward_levels, build_levels, forward_levels
    from fdgnn.kernels import softmax_xent
    cfg = SamplerConfig(max_neighbors_per_hop=s.neighbor_cap,
                        edge_keep_fraction=1.0, seed=s.seed)
    params = init_gnn("gcn", 6, 8, 3, K=2, seed=s.seed)
    theta = to_vec(params)
    vel = np.zeros_like(theta)
    cached_levels = cached_x1 = None
    for r in range(3):
        tr_s, _ = sample_round_clients(train, np.array([]), s.batch_cap,
                                       s.seed, 0, r)
        if cached_levels is None:
            nbrs = {}

            def nbrs_of(u):
                if u not in nbrs:
                    nbrs[u] = sample_neighbors(view, u, cfg, r)
                return nbrs[u]

            hops = {}
            for c in tr_s:
                lv = [np.array([c])]
                seen = {int(c)}
                for _ in range(2):
                    nxt = sorted({int(w) for u in lv[-1]
                                  for w in nbrs_of(int(u))} - seen)
                    seen |= set(nxt)
                    lv.append(np.array(nxt, np.int64))
                hops[int(c)] = lv
            cached_levels = build_levels(nbrs, hops, 2)
            from fdgnn.endtoend import _segment_mean
            ls = cached_levels[0]
            cached_x1 = np.concatenate(
                [b.features[ls.nodes], _segment_mean(b.features, ls)], axis=1)
        cur = from_vec(params, theta)
        reps, tapes = forward_levels(cur, b.features, cached_levels,
                                     static_x1=cached_x1)
        logits = reps[2][tr_s]
        _, dlog = softmax_xent(logits, b.labels[tr_s])
        g = backward_levels(cur, cached_levels, reps, tapes, tr_s,
                            dlog / np.asarray(len(tr_s), theta.dtype))
        vel = s.momentum * vel + (g + s.weight_decay * theta)
        theta = theta - np.asarray(s.lr, theta.dtype) * vel

    assert np.array_equal(to_vec(run.model), theta)
    print("\n[acceptance] criterion 10 PASS: protocol model bit-identical "
          "to the plain centralized trainer over 3 rounds")
