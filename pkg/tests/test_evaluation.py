import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from afnet.evaluation import (
    BurdenGroup, ConfusionCounts, ErrorTag, MetricsReport, RecordingCells, af_burden, auroc,
    basic_metrics, bootstrap_f1, bootstrap_f1_samples, burden_group, categorize_errors, confusion,
    eaf, evaluate, f1_from_counts, format_table, mann_whitney, mean_heart_rate, summarize_errors,
)
from afnet.signal_io import BeatAnnotation, RhythmLabel
from afnet.windowing import GridCell, Window

R = RhythmLabel


def cells_from(truth, pred, prob=None):
    prob = prob if prob is not None else [None] * len(truth)
    return [GridCell(5.0 * i, 5.0 * (i + 1), t, p, q) for i, (t, p, q) in enumerate(zip(truth, pred, prob))]


# --- independent oracles -------------------------------------------------------------

def pairs_auroc(scores, targets):
    pos = [s for s, t in zip(scores, targets) if t]
    neg = [s for s, t in zip(scores, targets) if not t]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def pairs_u(a, b):
    return sum(1.0 if x > y else 0.5 if x == y else 0.0 for x in a for y in b)


def direct_metrics(tp, fp, fn, tn):
    se = tp / (tp + fn) if tp + fn else None
    sp = tn / (tn + fp) if tn + fp else None
    ppv = tp / (tp + fp) if tp + fp else None
    if se is None or ppv is None or se + ppv == 0:
        f1 = 0.0 if tp == 0 and fp + fn > 0 else None
    else:
        f1 = 2 * se * ppv / (se + ppv)
    return se, sp, ppv, f1


def same(a, b, tol=1e-12):
    if b is None:
        return math.isnan(a)
    return abs(a - b) <= tol


# --- confusion and ratios ------------------------------------------------------------

def test_confusion_example():
    c = confusion(cells_from([1, 1, 1, 0, 0], [1, 1, 0, 1, 0]))
    assert (c.tp, c.fn, c.fp, c.tn) == (2, 1, 1, 1)


def test_confusion_skips_empty_predictions():
    c = confusion(cells_from([1, 0, 1], [None, None, 1]))
    assert c == ConfusionCounts(tp=1)
    assert confusion(cells_from([1, 0], [1, 0])) == ConfusionCounts(1, 0, 1, 0)


def test_counts_reject_negative():
    with pytest.raises(ValueError):
        ConfusionCounts(-1, 0, 0, 0)


def test_basic_metrics_example():
    se, sp, ppv, f1 = basic_metrics(ConfusionCounts(tp=8, fp=2, tn=10, fn=4))
    assert se == pytest.approx(0.6667, abs=5e-5)
    assert ppv == pytest.approx(0.8)
    assert f1 == pytest.approx(0.7273, abs=5e-5)
    assert sp == pytest.approx(10 / 12)


def test_basic_metrics_guards():
    se, sp, ppv, f1 = basic_metrics(ConfusionCounts(tn=5))
    assert math.isnan(se) and math.isnan(ppv) and math.isnan(f1) and sp == 1.0
    assert basic_metrics(ConfusionCounts(fp=3, tn=1))[3] == 0.0
    assert basic_metrics(ConfusionCounts(fn=2))[3] == 0.0


def test_basic_metrics_match_direct_script():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        tp, fp, fn, tn = (int(v) for v in rng.integers(0, 6, 4))
        got = basic_metrics(ConfusionCounts(tp, fp, tn, fn))
        for g, w in zip(got, direct_metrics(tp, fp, fn, tn)):
            assert same(g, w)


def test_f1_equals_se_when_se_equals_ppv():
    se, _, ppv, f1 = basic_metrics(ConfusionCounts(tp=6, fp=3, fn=3, tn=1))
    assert se == ppv and f1 == pytest.approx(se, abs=1e-15)


def test_f1_vectorised():
    assert f1_from_counts(np.array([1, 0]), np.array([1, 0]), np.array([0, 0]))[0] == pytest.approx(2 / 3)


# --- AUROC -------------------------------------------------------------------------------

def test_auroc_examples():
    assert auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auroc([0.5] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    assert math.isnan(auroc([0.1, 0.2], [1, 1]))


def test_auroc_matches_pair_count():
    rng = np.random.default_rng(1)
    for _ in range(300):
        n = int(rng.integers(2, 60))
        y = rng.integers(0, 2, n)
        if y.min() == y.max():
            continue
        s = rng.integers(0, 8, n) / 7.0
        assert auroc(s, y) == pairs_auroc(s, y)


# --- burden -------------------------------------------------------------------------------

def test_burden_examples():
    assert af_burden([30, 30, 10], [1, 0, 1]) == pytest.approx(40 / 70)
    assert af_burden([5, 5], [0, 0]) == 0.0 and af_burden([5, 5], [1, 1]) == 1.0
    assert af_burden([5, 5, 5, 5], [1, 0, 1, 0]) == 0.5
    with pytest.raises(ValueError):
        af_burden([0, 0], [1, 0])


def test_eaf_examples():
    assert eaf([1, 0], [1, 0], [5, 5]) == 0.0
    assert eaf([1, 1], [0, 0], [5, 5]) == 100.0
    assert eaf([1, 0], [0, 1], [30, 30]) == 0.0


@settings(max_examples=200, deadline=None)
@given(data=st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=40))
def test_eaf_equal_lengths_is_burden_difference(data):
    pred, truth = zip(*data)
    lengths = [5.0] * len(pred)
    e = eaf(pred, truth, lengths)
    assert -100.0 <= e <= 100.0
    assert e == pytest.approx(100 * (af_burden(lengths, pred) - af_burden(lengths, truth)), abs=1e-9)


def test_burden_and_eaf_match_direct_script():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        n = int(rng.integers(1, 20))
        lengths = rng.uniform(0.5, 30, n)
        truth, pred = rng.integers(0, 2, n), rng.integers(0, 2, n)
        total = sum(lengths)
        want_b = sum(l * i for l, i in zip(lengths, truth)) / total
        want_e = sum(l * (p - t) for l, p, t in zip(lengths, pred, truth)) / total * 100
        assert abs(af_burden(lengths, truth) - want_b) <= 1e-12
        assert abs(eaf(pred, truth, lengths) - want_e) <= 1e-12


def test_burden_groups():
    assert burden_group(0.0) is BurdenGroup.NON_AF
    assert burden_group(0.04) is BurdenGroup.MILD
    assert burden_group(0.0401) is BurdenGroup.MODERATE
    assert burden_group(0.8) is BurdenGroup.MODERATE
    assert burden_group(0.81) is BurdenGroup.SEVERE
    assert burden_group(1.0) is BurdenGroup.SEVERE
    with pytest.raises(ValueError):
        burden_group(1.5)


# --- bootstrap and rank test ---------------------------------------------------------

def test_bootstrap_single_perfect_recording():
    cells = cells_from([1, 0, 1], [1, 0, 1])
    assert bootstrap_f1([cells], 100, np.random.default_rng(0)) == (1.0, 1.0, 1.0)


def test_bootstrap_identical_recordings_zero_width():
    cells = cells_from([1, 1, 0, 0, 1], [1, 0, 1, 0, 1])
    med, q1, q3 = bootstrap_f1([cells] * 7, 100, np.random.default_rng(1))
    assert med == q1 == q3 == pytest.approx(basic_metrics(confusion(cells))[3])


def test_bootstrap_deterministic_and_resamples_recordings():
    recs = [cells_from([1, 0], [1, 1]), cells_from([1, 1], [0, 1]), cells_from([0, 0], [0, 0])]
    a = bootstrap_f1_samples(recs, 50, np.random.default_rng(3))
    b = bootstrap_f1_samples(recs, 50, np.random.default_rng(3))
    assert np.array_equal(a, b, equal_nan=True)
    # oracle: redo the draw with the same generator
    rng = np.random.default_rng(3)
    idx = rng.integers(0, 3, size=(50, 3))
    for k in range(50):
        c = sum((confusion(recs[i]) for i in idx[k]), ConfusionCounts())
        assert same(a[k], direct_metrics(c.tp, c.fp, c.fn, c.tn)[3])


def test_mann_whitney_examples():
    u, p = mann_whitney([1, 2, 3], [4, 5, 6])
    assert u == 0.0 and 0 < p < 0.2
    u, p = mann_whitney([0.7, 0.8, 0.9, 0.85], [0.7, 0.8, 0.9, 0.85])
    assert u == 8.0 and p > 0.9
    assert mann_whitney([1.0, 1.0], [1.0, 1.0]) == (2.0, 1.0)
    with pytest.raises(ValueError):
        mann_whitney([], [1.0])


def test_mann_whitney_matches_scipy_and_pairs():
    rng = np.random.default_rng(4)
    for _ in range(300):
        a = rng.integers(0, 6, int(rng.integers(1, 9))).astype(float)
        b = rng.integers(0, 6, int(rng.integers(1, 9))).astype(float)
        u, p = mann_whitney(a, b)
        assert u == pairs_u(a, b)
        assert u + mann_whitney(b, a)[0] == len(a) * len(b)
        assert 0.0 <= p <= 1.0
        if np.unique(np.concatenate([a, b])).size > 1:
            ref = stats.mannwhitneyu(a, b, alternative="two-sided", method="asymptotic", use_continuity=True)
            assert u == ref.statistic
            assert p == pytest.approx(ref.pvalue, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(a=st.lists(st.floats(-50, 50), min_size=1, max_size=12),
       b=st.lists(st.floats(-50, 50), min_size=1, max_size=12))
def test_mann_whitney_monotone_invariance(a, b):
    u, p = mann_whitney(a, b)
    u2, p2 = mann_whitney(np.exp(np.array(a) / 10), np.exp(np.array(b) / 10))
    if len(set(np.exp(np.array(a + b) / 10))) == len(set(a + b)):
        assert u == u2 and p == p2


# --- reports -------------------------------------------------------------------------------

def toy_recordings():
    return [
        RecordingCells("a", cells_from([1, 1, 0, 0], [1, 1, 0, 1], [0.9, 0.8, 0.1, 0.6]), lead="CM5"),
        RecordingCells("b", cells_from([0, 0, 0, 0], [0, 0, 0, 0], [0.1, 0.2, 0.3, 0.1]), lead="CM5"),
        RecordingCells("c", cells_from([1, 1, 1, 1], [1, 0, 1, None], [0.7, 0.4, 0.9, None]), lead="CM5"),
    ]


def test_evaluate_fields():
    rep = evaluate(toy_recordings(), n_boot=100, seed=0, dataset="synthetic", lead="CM5", model="m")
    # pooled: tp 4, fp 1, fn 1, tn 5
    assert rep.se == pytest.approx(0.8) and rep.ppv == pytest.approx(0.8) and rep.f1 == pytest.approx(0.8)
    assert rep.n_cells == 11 and rep.n_recordings == 3
    assert rep.f1 == pytest.approx(2 * rep.se * rep.ppv / (rep.se + rep.ppv), abs=1e-12)
    assert rep.eaf_by_group["NonAF"]["n"] == 1 and rep.eaf_by_group["Severe"]["n"] == 1
    assert rep.eaf_by_group["Moderate"]["median_q1_q3"] == [25.0, 25.0, 25.0]
    assert len(rep.f1_samples) == 100
    assert evaluate(toy_recordings(), seed=0).to_json() == evaluate(toy_recordings(), seed=0).to_json()


def test_report_json_and_table():
    rep = evaluate(toy_recordings(), dataset="synthetic", lead="CM5", model="m")
    d = json.loads(rep.to_json())
    assert d["f1_pooling"] and d["dataset"] == "synthetic" and len(d["f1_ci"]) == 3
    table = format_table([rep, rep])
    lines = table.splitlines()
    assert lines[0].split()[:4] == ["dataset", "lead", "model", "F1"]
    assert len(lines) == 5 and lines[2].startswith("synthetic")


def test_report_nan_becomes_null():
    rep = evaluate([RecordingCells("z", cells_from([0, 0], [0, 0], [0.1, 0.2]))])
    d = rep.to_dict()
    assert d["se"] is None and d["auroc"] is None and isinstance(rep, MetricsReport)


# --- error categories -----------------------------------------------------------------

def window(t0, bsqi):
    return Window("r", "CM5", int(t0 // 30), t0, t0 + 30, np.zeros(1), R.NSR, bsqi)


def beats(t0, t1, step, rhythm):
    return [BeatAnnotation(float(t), rhythm) for t in np.arange(t0, t1, step)]


def test_low_quality_fn():
    ann = beats(0, 30, 1.0, R.AF)
    errs = categorize_errors([GridCell(0, 5, 1, 0)], ann, [window(0, 0.7)])
    assert errs[0].kind == "FN"
    assert set(errs[0].tags) == {ErrorTag.LOW_QUALITY, ErrorTag.FN_AF}


def test_fn_afl_and_other():
    ann = beats(0, 30, 1.0, R.AFL)
    errs = categorize_errors([GridCell(10, 15, 1, 0)], ann, [window(0, 0.95)])
    assert errs[0].tags == (ErrorTag.FN_AFL, ErrorTag.OTHER)


def test_mixed_labels_at_and_high_rate():
    ann = beats(0, 12, 1.0, R.NSR) + beats(12, 30, 1.0, R.AF)
    fp = categorize_errors([GridCell(0, 5, 0, 1)], ann, [window(0, 0.9)])
    assert fp[0].kind == "FP" and ErrorTag.MIXED_LABELS in fp[0].tags
    ann = beats(0, 30, 1.0, R.AT)
    assert ErrorTag.AT_OR_AB in categorize_errors([GridCell(0, 5, 0, 1)], ann, [window(0, 0.9)])[0].tags
    # 35 beats spanning 20 s: 60 * 34 / 20 = 102 bpm
    ann = [BeatAnnotation(5.0 + 20.0 * k / 34, R.NSR) for k in range(35)]
    assert mean_heart_rate(ann, 0, 30) == pytest.approx(102.0)
    errs = categorize_errors([GridCell(5, 10, 0, 1)], ann, [window(0, 0.9)])
    assert errs[0].tags == (ErrorTag.HIGH_HR,)


def test_correct_and_empty_cells_ignored():
    ann = beats(0, 30, 1.0, R.NSR)
    cells = [GridCell(0, 5, 0, 0), GridCell(5, 10, 1, 1), GridCell(10, 15, 1, None)]
    assert categorize_errors(cells, ann, [window(0, 0.9)]) == []
    errs = categorize_errors([GridCell(0, 5, 0, 1), GridCell(5, 10, 1, 0)], ann, [window(0, 0.9)])
    summary = summarize_errors(errs)
    assert summary["n_errors"] == 2 and summary["by_kind"] == {"FN": 1, "FP": 1}
    assert summary["by_tag"]["Other"] == 2
