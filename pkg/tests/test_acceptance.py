"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 6 and 7 train models and take several minutes each.
"""
import itertools
import time

import numpy as np
import pytest
from scipy import stats

from afnet import evaluation as ev
from afnet import synthetic as syn
from afnet.dsu import DsuConfig, dsu_forward, instance_stats
from afnet.qrs_sqi import detect_qrs_differential, detect_qrs_energy, match_beats, segment_bsqi
from afnet.rawecgnet import ModelSpec, RawECGNet
from afnet.signal_io import RhythmLabel
from afnet.windowing import CELL_S, align_to_grid

from benchmarks import desk_benchmark, dsu_ablation
from gradcheck import LAYER_CHECKS, check_bigru, numeric_grad, rel_error

RESULTS = []


@pytest.fixture(scope="module", autouse=True)
def summary(request):
    yield
    tr = request.config.pluginmanager.get_plugin("terminalreporter")
    if tr is not None and RESULTS:
        tr.write_line("")
        tr.write_line("acceptance summary")
        for line in RESULTS:
            tr.write_line(line)


def verdict(capsys, number, name, ok, detail):
    line = f"criterion {number:>2} {name:<22} {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


# --- 1 ------------------------------------------------------------------------------------

def check_bce(rng):
    from afnet.nn import weighted_bce_with_logits
    z = rng.standard_normal(int(rng.integers(1, 10)))
    y = rng.integers(0, 2, z.shape)
    pw = float(rng.uniform(0.5, 4))
    _, g = weighted_bce_with_logits(z, y, pw)
    return rel_error(g, numeric_grad(lambda: weighted_bce_with_logits(z, y, pw)[0], z))


def test_criterion_1_gradients(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = {name: max(fn(rng) for _ in range(100)) for name, fn in sorted(LAYER_CHECKS.items())}
    worst["bce_logits"] = max(check_bce(rng) for _ in range(100))
    gru = max(check_bigru(rng) for _ in range(100))
    secs = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-4 and gru < 1e-3 and secs < 120
    verdict(capsys, 1, "gradient checks", ok,
            f"max layer err {max(worst.values()):.1e}, GRU {gru:.1e}, {len(worst) + 1} layers, {secs:.0f}s")


# --- 2 ------------------------------------------------------------------------------------

def test_criterion_2_dsu_laws(capsys):
    rng = np.random.default_rng(7)
    x = rng.standard_normal((6, 3, 40))
    inactive = dsu_forward(x, DsuConfig(apply_prob=1.0, active=False), rng)[0] is x
    closed = all(dsu_forward(x, DsuConfig(apply_prob=0.0), rng)[0] is x for _ in range(20))
    same = np.repeat(x[:1], 5, axis=0)
    degenerate = float(np.max(np.abs(dsu_forward(same, DsuConfig(apply_prob=1.0), rng)[0] - same)))

    xs = rng.standard_normal((5, 2, 64)) * rng.uniform(0.5, 2, (5, 2, 1)) + rng.standard_normal((5, 2, 1))
    mu, _ = instance_stats(xs)
    spread_mu = mu.std(axis=0)
    n = 10_000
    out_mu = np.empty((n,) + mu.shape)
    for i in range(n):
        y, _ = dsu_forward(xs, DsuConfig(apply_prob=1.0), rng)
        out_mu[i] = y.mean(axis=2, keepdims=True)
    se_mu = np.broadcast_to(spread_mu, mu.shape) / np.sqrt(n)
    mean_ok = np.all(np.abs(out_mu.mean(0) - mu) <= 3 * se_mu)
    var_ratio = out_mu.var(0) / np.broadcast_to(spread_mu**2, mu.shape)
    var_ok = np.all(np.abs(var_ratio - 1) < 0.10)
    ok = inactive and closed and degenerate < 1e-5 and mean_ok and var_ok
    verdict(capsys, 2, "DSU identity laws", ok,
            f"degenerate dev {degenerate:.1e}, var ratio {var_ratio.min():.3f}..{var_ratio.max():.3f}")


# --- 3 ------------------------------------------------------------------------------------

def oracle_auroc(scores, targets):
    pos = [s for s, t in zip(scores, targets) if t]
    neg = [s for s, t in zip(scores, targets) if not t]
    return sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg) / (len(pos) * len(neg))


def oracle_metrics(tp, fp, fn, tn):
    nan = float("nan")
    se = tp / (tp + fn) if tp + fn else nan
    sp = tn / (tn + fp) if tn + fp else nan
    ppv = tp / (tp + fp) if tp + fp else nan
    if tp == 0:
        f1 = 0.0 if fp + fn else nan
    else:
        f1 = 2 * se * ppv / (se + ppv)
    return se, sp, ppv, f1


def close(a, b, tol=1e-12):
    return (np.isnan(a) and np.isnan(b)) or abs(a - b) <= tol


def test_criterion_3_metric_oracles(capsys):
    rng = np.random.default_rng(3)
    bad_auc = bad_metric = bad_burden = 0
    for _ in range(1000):
        n = int(rng.integers(2, 80))
        y = rng.integers(0, 2, n)
        y[0], y[1] = 0, 1
        s = rng.integers(0, 10, n) / 9.0 if rng.random() < 0.5 else rng.random(n)
        bad_auc += ev.auroc(s, y) != oracle_auroc(s, y)

        tp, fp, fn, tn = (int(v) for v in rng.integers(0, 50, 4))
        got = ev.basic_metrics(ev.ConfusionCounts(tp, fp, tn, fn))
        bad_metric += not all(close(g, w) for g, w in zip(got, oracle_metrics(tp, fp, fn, tn)))

        lengths = rng.uniform(0.1, 30.0, n)
        truth, pred = rng.integers(0, 2, n), rng.integers(0, 2, n)
        total = sum(lengths)
        b = sum(l * i for l, i in zip(lengths, truth)) / total
        e = 100.0 * sum(l * (p - t) for l, p, t in zip(lengths, pred, truth)) / total
        bad_burden += not (close(ev.af_burden(lengths, truth), b) and close(ev.eaf(pred, truth, lengths), e))
    ok = bad_auc == bad_metric == bad_burden == 0
    verdict(capsys, 3, "metric oracles", ok,
            f"mismatches auroc {bad_auc}, metrics {bad_metric}, burden/eaf {bad_burden} of 1000 each")


# --- 4 ------------------------------------------------------------------------------------

def oracle_align(preds, duration):
    out = []
    for c in range(int(duration // CELL_S)):
        c0, c1 = c * CELL_S, (c + 1) * CELL_S
        best = None
        for i, ((t0, t1), _, binary) in enumerate(preds):
            ov = min(t1, c1) - max(t0, c0)
            if ov > 0 and (best is None or (ov, -t0, -i) > best[0]):
                best = ((ov, -t0, -i), binary)
        out.append(None if best is None else best[1])
    return out


def test_criterion_4_alignment(capsys):
    rng = np.random.default_rng(4)
    bad = ties = gaps = 0
    for _ in range(500):
        duration = float(rng.integers(1, 30) * 5 + rng.choice([0.0, 2.5]))
        preds = []
        for _ in range(int(rng.integers(0, 10))):
            t0 = float(rng.integers(0, int(duration * 2) + 1)) / 2.0
            preds.append(((t0, t0 + float(rng.integers(1, 80)) / 2.0), float(rng.random()), int(rng.integers(0, 2))))
        want = oracle_align(preds, duration)
        got = [c.prediction for c in align_to_grid(preds, duration)]
        bad += got != want
        gaps += None in want
        ties += any(len({min(t1, c1) - max(t0, c0) for (t0, t1), _, _ in preds
                         if min(t1, c1) - max(t0, c0) > 0}) <
                    sum(min(t1, c1) - max(t0, c0) > 0 for (t0, t1), _, _ in preds)
                    for c0, c1 in ((k * 5.0, k * 5.0 + 5.0) for k in range(int(duration // 5))))
    ok = bad == 0 and ties > 0 and gaps > 0
    verdict(capsys, 4, "grid alignment", ok, f"{bad} mismatches in 500 layouts ({ties} with ties, {gaps} with gaps)")


# --- 5 ------------------------------------------------------------------------------------

def test_criterion_5_bsqi(capsys):
    clean_ok = 0
    for seed in range(10):
        rhythm = [RhythmLabel.NSR, RhythmLabel.AF][seed % 2]
        rec = syn.generate(syn.SynthConfig(seed=seed, duration_s=30.0, noise_std_mv=0.01,
                                           rhythm_segments=[(rhythm, 30.0)]))
        x = rec.lead("CM5")
        e, d = detect_qrs_energy(x, 200.0), detect_qrs_differential(x, 200.0)
        clean_ok += match_beats(e, d, 0.15) >= 0.95 * max(len(e), len(d)) and segment_bsqi(x, 200.0) == 1.0
    noisy = sum(segment_bsqi(np.random.default_rng(s).standard_normal(6000), 200.0) < 0.8 for s in range(100))
    ok = clean_ok == 10 and noisy >= 90
    verdict(capsys, 5, "bSQI behaviour", ok, f"clean bsqi=1 on {clean_ok}/10, noise < 0.8 on {noisy}/100")


# --- 6 ------------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_6_desk_benchmark(capsys):
    report, _, secs = desk_benchmark(seed=0)
    med_eaf = report.abs_eaf[0]
    ok = report.f1 >= 0.90 and med_eaf < 5.0 and secs < 1800
    verdict(capsys, 6, "desk benchmark", ok,
            f"test F1 {report.f1:.3f}, |E_AF| median {med_eaf:.2f}%, AUROC {report.auroc:.3f}, {secs:.0f}s")


# --- 7 ------------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_7_dsu_ablation(capsys):
    pairs = [dsu_ablation(seed) for seed in range(5)]
    wins = sum(a >= b for a, b in pairs)
    detail = ", ".join(f"{a:.3f}/{b:.3f}" for a, b in pairs)
    verdict(capsys, 7, "DSU ablation direction", wins >= 3, f"DSU >= no-DSU on {wins}/5 seeds (F1 dsu/no-dsu: {detail})")


# --- 8 ------------------------------------------------------------------------------------

def test_criterion_8_parameter_count(capsys):
    n = RawECGNet.build(ModelSpec()).n_params()
    verdict(capsys, 8, "parameter count", 2_000_000 <= n <= 3_000_000, f"{n:,} parameters")


# --- 9 ------------------------------------------------------------------------------------

def test_criterion_9_determinism(capsys, tmp_path):
    from afnet import cli

    def run(root):
        argv = [["synth", "--out", root / "data", "--n-recordings", 5, "--train", 3, "--val", 1, "--test", 1,
                 "--duration", 120],
                ["preprocess", "--data", root / "data", "--out", root / "cache"],
                ["train", "--cache", root / "cache", "--out", root / "model", "--tiny", "--max-epochs", 2,
                 "--set", "train.step2_max_epochs=2"],
                ["predict", "--model", root / "model", "--data", root / "data" / "test", "--out", root / "p.csv"],
                ["evaluate", "--pred", root / "p.csv", "--data", root / "data", "--json", root / "r.json",
                 "--table", root / "r.txt"]]
        codes = [cli.main([str(a) for a in args] + ["--seed", "11"]) for args in argv]
        return codes, [(root / f).read_bytes() for f in ("model/params.bin", "model/model.json", "p.csv", "r.json")]

    codes_a, a = run(tmp_path / "a")
    codes_b, b = run(tmp_path / "b")
    ok = codes_a == codes_b == [0] * 5 and a == b
    verdict(capsys, 9, "determinism", ok, "checkpoint, predictions and report byte-identical across two runs"
            if ok else f"exit codes {codes_a} {codes_b}")


# --- 10 -----------------------------------------------------------------------------------

def test_criterion_10_statistics(capsys):
    rng = np.random.default_rng(10)
    cells = [ev.GridCell(5.0 * i, 5.0 * (i + 1), int(t), int(p))
             for i, (t, p) in enumerate(zip(rng.integers(0, 2, 30), rng.integers(0, 2, 30)))]
    med, q1, q3 = ev.bootstrap_f1([cells] * 9, 100, np.random.default_rng(0))
    zero_width = med == q1 == q3

    checked = bad = 0
    for n in range(2, 9):
        for values in itertools.product(range(3), repeat=n):
            for na in range(1, n):
                a, b = values[:na], values[na:]
                u, p = ev.mann_whitney(a, b)
                u_rev, _ = ev.mann_whitney(b, a)
                brute = sum(1.0 if x > y else 0.5 if x == y else 0.0 for x in a for y in b)
                good = u == brute and u + u_rev == na * len(b) and 0.0 <= p <= 1.0
                if good and len(set(values)) > 1 and n % 3 == 0:
                    ref = stats.mannwhitneyu(a, b, alternative="two-sided", method="asymptotic")
                    good = abs(ref.pvalue - p) < 1e-12
                bad += not good
                checked += 1
    ok = zero_width and bad == 0
    verdict(capsys, 10, "statistical harness", ok,
            f"bootstrap CI width {q3 - q1:.1e}; U identities on {checked} samples (n <= 8), {bad} failures")
