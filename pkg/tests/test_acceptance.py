"""Acceptance gate: one test per release criterion, each printing a
single PASS/FAIL line (run with -s to see them all).

Numeric criteria use independent oracles computed inside this module
(direct-summation divergence, brute-force confusion counting, central
finite differences); calibration and learning criteria run the real
pipeline end to end on synthetic cohorts.
"""

import json
import time

import numpy as np
import pytest

from earlysd.augment import AugmentConfig, train_link_predictor
from earlysd.cli import main as cli_main
from earlysd.detector import metrics_from_predictions
from earlysd.experiment import ExperimentConfig, run_ablation, seed_sweep
from earlysd.baselines import run_baseline
from earlysd.detector import features_matrix
from earlysd.graph import Label, UuEdge, EdgeOrigin, UtEdge, build_graph, \
    stratified_split
from earlysd.nn import (
    ConvStructure,
    FfnLayer,
    HeteroConvLayer,
    KanEdgeModule,
    bce,
    cosine_with_grad,
    cross_entropy,
)
from earlysd.stats import anova_oneway, jsd
from earlysd.synth import GROUPS, PAIRS, CohortConfig, generate_cohort
from conftest import make_topics, make_user
from test_augment import planted_block_graph
from test_stats import FIXTURES as ANOVA_FIXTURES

GROUP_LABEL = {"non_sfva": Label.NON_SFVA, "sfva": Label.SFVA,
               "potential_sfva": Label.POTENTIAL_SFVA}


def report(num, name, ok, detail=""):
    print(f"\n[criterion {num:02d}] {name}: {'PASS' if ok else 'FAIL'}"
          f"{' (' + detail + ')' if detail else ''}", flush=True)
    assert ok, f"criterion {num} ({name}): {detail}"


def cohort_graph(signal, seed=0):
    users, topics, ut_edges, _ = generate_cohort(
        CohortConfig(seed=seed, signal_strength=signal))
    return build_graph(users, topics, (), ut_edges)


@pytest.fixture(scope="module")
def signal1_graph():
    return cohort_graph(1.0)


@pytest.fixture(scope="module")
def ablation_rows(signal1_graph, tmp_path_factory):
    cfg = ExperimentConfig(seeds=list(range(10)))
    rows = run_ablation(signal1_graph, cfg)
    out = tmp_path_factory.mktemp("ablation")
    from earlysd.experiment import write_ablation
    write_ablation(rows, out)
    return rows, out


# -- 1. gradient correctness -------------------------------------------------

H = 1e-5
TOL = 1e-4


def _rel(a, n):
    return abs(a - n) / max(abs(a), abs(n), 1.0)


def _numeric(param_values, flat_idx, loss_fn):
    flat = param_values.reshape(-1)
    keep = flat[flat_idx]
    flat[flat_idx] = keep + H
    up = loss_fn()
    flat[flat_idx] = keep - H
    down = loss_fn()
    flat[flat_idx] = keep
    return (up - down) / (2.0 * H)


def _check_params(rng, params, loss_and_backward, loss_only, n_entries=2):
    """Analytic vs central-difference grads on random entries; max rel err."""
    for p in params:
        p.grad[...] = 0.0
    loss_and_backward()
    worst = 0.0
    for p in params:
        for _ in range(n_entries):
            idx = int(rng.integers(p.values.size))
            num = _numeric(p.values, idx, loss_only)
            worst = max(worst, _rel(p.grad.reshape(-1)[idx], num))
    return worst


def test_criterion_01_gradient_checks():
    rng = np.random.default_rng(0)
    t0 = time.time()
    worst = 0.0

    for trial in range(50):
        # feed-forward layer, both activations, plus input gradients
        act = "relu" if trial % 2 == 0 else "identity"
        ffn = FfnLayer(3, 4, act, rng)
        x = rng.normal(size=(5, 3))
        r = rng.normal(size=(5, 4))

        def f_loss():
            return float(np.sum(ffn.forward(x) * r))

        def f_back():
            ffn.forward(x)
            ffn._dx = ffn.backward(r)

        worst = max(worst, _check_params(rng, ffn.params, f_back, f_loss))
        idx = int(rng.integers(x.size))
        worst = max(worst, _rel(ffn._dx.reshape(-1)[idx],
                                _numeric(x, idx, f_loss)))

        # heterogeneous convolution: parameters and u-u edge weights
        users = [make_user(f"u{i}", 40, seed=i) for i in range(4)]
        topics = make_topics(["a", "b"])
        uu = [UuEdge("u0", "u1", 0.6, EdgeOrigin.AUGMENTED, 0.5, 0.7),
              UuEdge("u1", "u2", 0.3, EdgeOrigin.AUGMENTED, 0.2, 0.4)]
        ut = [UtEdge("u0", "t0000"), UtEdge("u2", "t0001"),
              UtEdge("u3", "t0000")]
        g = build_graph(users, topics, uu, ut)
        structure = ConvStructure.from_graph(g)
        agg = "sum" if trial % 2 == 0 else "degree_mean"
        conv = HeteroConvLayer(3, 3, 2, agg, rng)
        h_u = rng.normal(size=(4, 3))
        h_t = rng.normal(size=(2, 3))
        n_uu = structure.n_uu_edges()
        w_uu = rng.uniform(0.1, 0.9, size=n_uu)
        rc = rng.normal(size=(4, 2))

        def c_loss():
            structure.set_uu_weights(w_uu)
            return float(np.sum(conv.forward(h_u, h_t, structure) * rc))

        def c_back():
            structure.set_uu_weights(w_uu)
            conv.forward(h_u, h_t, structure)
            _, _, conv._dw = conv.backward(rc)

        worst = max(worst, _check_params(rng, conv.params, c_back, c_loss))
        for k in range(n_uu):
            worst = max(worst, _rel(conv._dw[k], _numeric(w_uu, k, c_loss)))

        # spline blend-weight head
        kan = KanEdgeModule(rng=rng)
        sf = rng.uniform(-0.9, 0.9, size=6)
        st = rng.uniform(-0.9, 0.9, size=6)
        rk = rng.normal(size=6)

        def k_loss():
            return float(np.sum(kan.forward(sf, st) * rk))

        def k_back():
            kan.forward(sf, st)
            kan.backward(rk)

        worst = max(worst, _check_params(rng, kan.params, k_back, k_loss))

        # cosine similarity input gradients
        a = rng.normal(size=4)
        b = rng.normal(size=4)
        _, da, db = cosine_with_grad(a, b)
        for vec, grad in ((a, da), (b, db)):
            idx = int(rng.integers(4))
            num = _numeric(vec, idx, lambda: cosine_with_grad(a, b)[0])
            worst = max(worst, _rel(grad[idx], num))

        # losses
        p = rng.uniform(0.05, 0.95, size=5)
        yb = rng.integers(0, 2, size=5).astype(float)
        _, dp = bce(p, yb)
        idx = int(rng.integers(5))
        worst = max(worst, _rel(dp[idx], _numeric(p, idx,
                                                  lambda: bce(p, yb)[0])))

        logits = rng.normal(size=(4, 2))
        yc = rng.integers(0, 2, size=4)
        _, dl = cross_entropy(logits, yc)
        idx = int(rng.integers(logits.size))
        worst = max(worst, _rel(dl.reshape(-1)[idx],
                                _numeric(logits, idx,
                                         lambda: cross_entropy(logits, yc)[0])))

    elapsed = time.time() - t0
    ok = worst < TOL and elapsed < 30.0
    report(1, "gradient checks", ok,
           f"max rel err {worst:.2e}, {elapsed:.1f}s")


# -- 2. divergence oracle ----------------------------------------------------

def _jsd_oracle(p, q):
    m = 0.5 * (p + q)
    total = 0.0
    for pi, qi, mi in zip(p, q, m):
        if pi > 0.0:
            total += 0.5 * pi * np.log2(pi / mi)
        if qi > 0.0:
            total += 0.5 * qi * np.log2(qi / mi)
    return total


def test_criterion_02_jsd_oracle():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(1000):
        k = int(rng.integers(2, 12))
        p = rng.dirichlet(np.ones(k))
        q = rng.dirichlet(np.ones(k))
        worst = max(worst, abs(jsd(p, q) - _jsd_oracle(p, q)))
    p = rng.dirichlet(np.ones(6))
    self_zero = jsd(p, p)
    disjoint = jsd(np.array([0.5, 0.5, 0.0, 0.0]),
                   np.array([0.0, 0.0, 0.25, 0.75]))
    ok = worst <= 1e-12 and self_zero == 0.0 and abs(disjoint - 1.0) <= 1e-12
    report(2, "JSD vs direct-summation oracle", ok,
           f"max |diff| {worst:.2e}, self {self_zero}, disjoint {disjoint}")


# -- 3. ANOVA oracle ---------------------------------------------------------

def test_criterion_03_anova_fixtures():
    worst = 0.0
    for fx in ANOVA_FIXTURES:
        r = anova_oneway(fx["groups"])
        worst = max(worst, abs(r.f_stat - fx["f"]), abs(r.p_value - fx["p"]))
    ok = worst <= 1e-6 and len(ANOVA_FIXTURES) == 20
    report(3, "ANOVA frozen fixtures", ok,
           f"{len(ANOVA_FIXTURES)} fixtures, max |diff| {worst:.2e}")


# -- 4. generator calibration ------------------------------------------------

def test_criterion_04_generator_calibration():
    t0 = time.time()
    cfg = CohortConfig()
    users, topics, ut_edges, _ = generate_cohort(cfg)
    counts = {g: sum(1 for u in users if u.label is GROUP_LABEL[g])
              for g in GROUPS}
    counts_ok = counts == {"non_sfva": 259, "sfva": 134, "potential_sfva": 75}
    bounds_ok = all(
        cfg.score_stats[g].lo <= u.score <= cfg.score_stats[g].hi
        for g in GROUPS for u in users if u.label is GROUP_LABEL[g])
    pos = {t.id: i for i, t in enumerate(topics)}
    hist = {g: np.zeros(len(topics)) for g in GROUPS}
    label_of = {u.id: u.label for u in users}
    group_of = {v: k for k, v in GROUP_LABEL.items()}
    for e in ut_edges:
        hist[group_of[label_of[e.user]]][pos[e.topic]] += 1.0
    jsd_err = max(
        abs(jsd(hist[a] / hist[a].sum(), hist[b] / hist[b].sum())
            - cfg.jsd_targets[(a, b)])
        for a, b in PAIRS)
    elapsed = time.time() - t0
    ok = counts_ok and bounds_ok and jsd_err <= 0.03 and elapsed < 30.0
    report(4, "cohort calibration", ok,
           f"counts {counts}, max JSD err {jsd_err:.4f}, {elapsed:.1f}s")


# -- 5-7. learning behaviour -------------------------------------------------

def test_criterion_05_null_signal():
    graph = cohort_graph(0.0)
    cfg = ExperimentConfig(seeds=list(range(10)))
    results = seed_sweep(graph, cfg)
    mean_acc = float(np.mean([r["metrics"]["acc"] for r in results]))
    ok = 0.43 <= mean_acc <= 0.57
    report(5, "null-signal accuracy near chance", ok,
           f"10-seed mean acc {mean_acc:.4f}")


def test_criterion_06_learnability(signal1_graph, ablation_rows):
    rows, _ = ablation_rows
    full = next(r for r in rows if r["refinement"] == "All")
    mlp_accs = []
    y = np.asarray([1 if u.binary_label.value == "positive" else 0
                    for u in signal1_graph.users])
    feats = features_matrix(signal1_graph, "PCTSI")
    ids = [u.id for u in signal1_graph.users]
    for seed in range(10):
        split = stratified_split(signal1_graph.users, (0.7, 0.15, 0.15), seed)
        mlp_accs.append(run_baseline("mlp", feats, y, ids, split, seed).acc)
    mlp_mean = float(np.mean(mlp_accs))
    ok = full["f1_mean"] > 0.70 and full["acc_mean"] >= mlp_mean + 0.05
    report(6, "signal-1 learnability vs MLP", ok,
           f"F1 {full['f1_mean']:.4f}, acc {full['acc_mean']:.4f}, "
           f"MLP acc {mlp_mean:.4f}")


def test_criterion_07_augmentation_value(ablation_rows):
    rows, out = ablation_rows
    by_label = {r["refinement"]: r for r in rows}
    full = by_label["All"]["acc_mean"]
    none = by_label["w/o u-u & u-t"]["acc_mean"]
    table_ok = (out / "ablation.csv").exists() and \
        (out / "ablation.md").exists() and len(rows) == 4
    ok = full >= none and table_ok
    report(7, "augmentation value + 4-row table", ok,
           f"full {full:.4f} vs none {none:.4f}, table rows {len(rows)}")


# -- 8. link predictor -------------------------------------------------------

def test_criterion_08_link_predictor():
    t0 = time.time()
    graph = planted_block_graph(seed=0)
    lp = train_link_predictor(graph, AugmentConfig(seed=0, lp_epochs=150))
    elapsed = time.time() - t0
    ok = lp.holdout_auc is not None and lp.holdout_auc > 0.8 and elapsed < 60.0
    report(8, "planted-block link prediction", ok,
           f"holdout AUC {lp.holdout_auc:.4f}, {elapsed:.1f}s")


# -- 9. metrics oracle -------------------------------------------------------

def test_criterion_09_metrics_oracle():
    rng = np.random.default_rng(9)
    ok = True
    for _ in range(1000):
        n = int(rng.integers(1, 50))
        y = rng.integers(0, 2, size=n)
        p = rng.integers(0, 2, size=n)
        tp = sum(1 for a, b in zip(y, p) if a == 1 and b == 1)
        tn = sum(1 for a, b in zip(y, p) if a == 0 and b == 0)
        fp = sum(1 for a, b in zip(y, p) if a == 0 and b == 1)
        fn = sum(1 for a, b in zip(y, p) if a == 1 and b == 0)
        m = metrics_from_predictions(y, p)
        acc = (tp + tn) / n
        pre = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * pre * rec / (pre + rec) if pre + rec else 0.0
        if (m.tp, m.tn, m.fp, m.fn) != (tp, tn, fp, fn) or \
                (m.acc, m.pre, m.rec, m.f1) != (acc, pre, rec, f1):
            ok = False
            break
    report(9, "confusion metrics vs brute force", ok, "1000 matrices")


# -- 10-11. pipeline determinism and runtime ---------------------------------

def test_criterion_10_determinism(tmp_path):
    data = tmp_path / "data"
    assert cli_main(["generate", "--seed", "0", "--out", str(data)]) == 0
    outs = []
    for name in ("a", "b"):
        run = tmp_path / name
        assert cli_main(["train", str(data), "--seed", "0",
                         "--out", str(run)]) == 0
        outs.append((run / "metrics.json").read_bytes())
    ok = outs[0] == outs[1]
    report(10, "byte-identical seeded runs", ok,
           f"{len(outs[0])} bytes each")


def test_criterion_11_end_to_end_runtime(tmp_path):
    t0 = time.time()
    data = tmp_path / "data"
    refined = tmp_path / "refined"
    run = tmp_path / "run"
    steps = [
        ["generate", "--seed", "0", "--out", str(data)],
        ["analyze", str(data), "--out", str(run)],
        ["augment", str(data), "--seed", "0", "--out", str(refined)],
        ["train", str(data), "--seed", "0", "--out", str(run)],
        ["evaluate", str(data), "--seed", "0",
         "--model", str(run / "model.esd"), "--out", str(run)],
    ]
    codes = [cli_main(argv) for argv in steps]
    elapsed = time.time() - t0
    ok = codes == [0] * 5 and elapsed < 120.0
    report(11, "end-to-end pipeline runtime", ok,
           f"468 users in {elapsed:.1f}s")
