"""Performance measures, AF burden, bootstrap intervals and error analysis.

All classification measures are computed on 5-s grid cells; cells whose
prediction is empty are ignored. Pooled figures sum confusion counts over
the cells of every recording before forming ratios.
"""
from __future__ import annotations

import enum
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .qrs_sqi import BSQI_THRESHOLD
from .signal_io import BeatAnnotation, RhythmLabel
from .windowing import GridCell, Window, majority_rhythm, rhythm_durations

MILD_MAX = 0.04
MODERATE_MAX = 0.8
HIGH_HR_BPM = 100.0


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)

    def as_array(self) -> np.ndarray:
        return np.array([self.tp, self.fp, self.tn, self.fn], dtype=np.int64)


def confusion(cells: Sequence[GridCell]) -> ConfusionCounts:
    """Counts over cells with a prediction; positive class is AF or AFL."""
    tp = fp = tn = fn = 0
    for c in cells:
        if c.prediction is None:
            continue
        if c.prediction:
            tp += c.truth == 1
            fp += c.truth == 0
        else:
            fn += c.truth == 1
            tn += c.truth == 0
    return ConfusionCounts(int(tp), int(fp), int(tn), int(fn))


def _ratio(num, den):
    return num / den if den > 0 else float("nan")


def f1_from_counts(tp, fp, fn):
    """2tp / (2tp + fp + fn); 0 when tp = 0 but errors exist, NaN with no cases at all."""
    tp, fp, fn = (np.asarray(v, dtype=np.float64) for v in (tp, fp, fn))
    den = 2 * tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(den > 0, 2 * tp / np.where(den > 0, den, 1), np.nan)
    return out if out.ndim else float(out)


def basic_metrics(c: ConfusionCounts) -> tuple[float, float, float, float]:
    """(se, sp, ppv, f1). Undefined ratios are NaN."""
    se = _ratio(c.tp, c.tp + c.fn)
    sp = _ratio(c.tn, c.tn + c.fp)
    ppv = _ratio(c.tp, c.tp + c.fp)
    return se, sp, ppv, f1_from_counts(c.tp, c.fp, c.fn)


def auroc(scores, targets) -> float:
    """P(score_pos > score_neg) + 0.5 P(equal), exact over all pairs.

    Computed from average ranks; NaN when either class is missing.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(targets).astype(bool)
    if s.shape != y.shape:
        raise ValueError("scores and targets differ in shape")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = stats.rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def af_burden(lengths, indicators) -> float:
    """Length-weighted fraction of positive segments."""
    w = np.asarray(lengths, dtype=np.float64)
    i = np.asarray(indicators, dtype=np.float64)
    if w.shape != i.shape:
        raise ValueError("lengths and indicators differ in shape")
    total = w.sum()
    if total <= 0:
        raise ValueError("total length must be positive")
    return float((w * i).sum() / total)


def eaf(pred, truth, lengths) -> float:
    """Signed burden estimation error in percent."""
    w = np.asarray(lengths, dtype=np.float64)
    d = np.asarray(pred, dtype=np.float64) - np.asarray(truth, dtype=np.float64)
    if w.shape != d.shape:
        raise ValueError("pred, truth and lengths must share a shape")
    total = w.sum()
    if total <= 0:
        raise ValueError("total length must be positive")
    return float((w * d).sum() / total * 100.0)


class BurdenGroup(enum.Enum):
    NON_AF = "NonAF"
    MILD = "Mild"
    MODERATE = "Moderate"
    SEVERE = "Severe"


def burden_group(b_af: float) -> BurdenGroup:
    if not 0.0 <= b_af <= 1.0:
        raise ValueError(f"burden {b_af} outside [0, 1]")
    if b_af == 0.0:
        return BurdenGroup.NON_AF
    if b_af <= MILD_MAX:
        return BurdenGroup.MILD
    if b_af <= MODERATE_MAX:
        return BurdenGroup.MODERATE
    return BurdenGroup.SEVERE


def group_by_burden(burdens: dict) -> dict:
    """``{recording_id: truth B_AF}`` to ``{recording_id: BurdenGroup}``."""
    return {rid: burden_group(b) for rid, b in burdens.items()}


# --- bootstrap and rank test ---------------------------------------------------------

def _count_matrix(per_recording_cells) -> np.ndarray:
    return np.stack([confusion(cells).as_array() for cells in per_recording_cells])


def bootstrap_f1_samples(per_recording_cells, n: int = 100, rng=None) -> np.ndarray:
    """Pooled F1 for ``n`` resamples of recordings drawn with replacement."""
    if len(per_recording_cells) == 0:
        raise ValueError("need at least one recording")
    rng = rng if rng is not None else np.random.default_rng(0)
    counts = _count_matrix(per_recording_cells)
    idx = rng.integers(0, len(counts), size=(n, len(counts)))
    pooled = counts[idx].sum(axis=1)
    return f1_from_counts(pooled[:, 0], pooled[:, 1], pooled[:, 3])


def quartiles(values) -> tuple[float, float, float]:
    """(median, Q1, Q3) ignoring NaN; all NaN when nothing is defined."""
    v = np.asarray(values, dtype=np.float64)
    v = v[~np.isnan(v)]
    if len(v) == 0:
        return float("nan"), float("nan"), float("nan")
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return float(med), float(q1), float(q3)


def bootstrap_f1(per_recording_cells, n: int = 100, rng=None) -> tuple[float, float, float]:
    """(median, Q1, Q3) of the bootstrapped pooled F1."""
    return quartiles(bootstrap_f1_samples(per_recording_cells, n, rng))


def mann_whitney(a, b) -> tuple[float, float]:
    """Two-sided rank test: ``(U_a, p)``.

    U counts pairs with a > b plus half the ties. The p-value uses the normal
    approximation with tie-corrected variance and continuity correction; it
    is 1 when the variance vanishes.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na, nb = len(a), len(b)
    if na == 0 or nb == 0:
        raise ValueError("both samples must be non-empty")
    ranks = stats.rankdata(np.concatenate([a, b]))
    u = float(ranks[:na].sum() - na * (na + 1) / 2)
    n = na + nb
    _, t = np.unique(ranks, return_counts=True)
    tie = float((t**3 - t).sum())
    var = na * nb / 12.0 * ((n + 1) - tie / (n * (n - 1))) if n > 1 else 0.0
    if var <= 0:
        return u, 1.0
    z = (abs(u - na * nb / 2.0) - 0.5) / np.sqrt(var)
    p = 2.0 * stats.norm.sf(z)
    return u, float(np.clip(p, 0.0, 1.0))


# --- reports -------------------------------------------------------------------------

@dataclass
class RecordingCells:
    """Aligned cells of one recording and lead plus its truth burden."""

    recording_id: str
    cells: list
    b_af_truth: Optional[float] = None
    lead: str = ""

    def truth_burden(self) -> float:
        if self.b_af_truth is not None:
            return float(self.b_af_truth)
        return af_burden([c.end_s - c.start_s for c in self.cells], [c.truth for c in self.cells])

    def eaf(self) -> float:
        used = [c for c in self.cells if c.prediction is not None]
        if not used:
            return float("nan")
        return eaf([c.prediction for c in used], [c.truth for c in used],
                   [c.end_s - c.start_s for c in used])


@dataclass
class MetricsReport:
    se: float
    sp: float
    ppv: float
    f1: float
    auroc: float
    f1_ci: tuple
    abs_eaf: tuple
    eaf_by_group: dict
    n_cells: int
    n_recordings: int
    dataset: str = ""
    lead: str = ""
    model: str = ""
    f1_samples: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, float) and np.isnan(v):
                return None
            if isinstance(v, (tuple, list)):
                return [clean(x) for x in v]
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            return v

        d = {k: getattr(self, k) for k in (
            "dataset", "lead", "model", "se", "sp", "ppv", "f1", "auroc", "f1_ci", "abs_eaf",
            "eaf_by_group", "n_cells", "n_recordings", "f1_samples")}
        d["f1_pooling"] = "cells pooled across recordings"
        return clean(d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def evaluate(recordings: Sequence[RecordingCells], n_boot: int = 100, seed: int = 0,
             dataset: str = "", lead: str = "", model: str = "") -> MetricsReport:
    if not recordings:
        raise ValueError("no recordings to evaluate")
    cells = [c for r in recordings for c in r.cells]
    counts = confusion(cells)
    se, sp, ppv, f1 = basic_metrics(counts)
    scored = [c for c in cells if c.prediction is not None and c.probability is not None]
    auc = auroc([c.probability for c in scored], [c.truth for c in scored]) if scored else float("nan")
    samples = bootstrap_f1_samples([r.cells for r in recordings], n_boot, np.random.default_rng(seed))
    errors = np.array([abs(r.eaf()) for r in recordings])
    by_group = {}
    for g in BurdenGroup:
        sel = [abs(r.eaf()) for r in recordings if burden_group(r.truth_burden()) is g]
        by_group[g.value] = {"n": len(sel), "median_q1_q3": list(quartiles(sel))}
    return MetricsReport(
        se=se, sp=sp, ppv=ppv, f1=f1, auroc=auc, f1_ci=quartiles(samples),
        abs_eaf=quartiles(errors), eaf_by_group=by_group,
        n_cells=counts.tp + counts.fp + counts.tn + counts.fn, n_recordings=len(recordings),
        dataset=dataset, lead=lead, model=model, f1_samples=[float(x) for x in samples],
    )


def _fmt(v, digits=3):
    return "n/a" if v is None or (isinstance(v, float) and np.isnan(v)) else f"{v:.{digits}f}"


def _fmt_ci(t, digits=3):
    med, q1, q3 = t
    return f"{_fmt(med, digits)} ({_fmt(q1, digits)}, {_fmt(q3, digits)})"


def format_table(reports: Sequence[MetricsReport]) -> str:
    """Aligned text table, one row per (dataset, lead, model)."""
    header = ["dataset", "lead", "model", "F1", "AUROC", "Se", "Sp", "|E_AF| %"]
    rows = [[r.dataset or "-", r.lead or "-", r.model or "-", _fmt_ci(r.f1_ci), _fmt(r.auroc),
             _fmt(r.se), _fmt(r.sp), _fmt_ci(r.abs_eaf, 2)] for r in reports]
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    lines = ["  ".join(str(x).ljust(w) for x, w in zip(line, widths)).rstrip()
             for line in [header] + rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    lines.append("F1: bootstrap median (Q1, Q3) over recordings, cells pooled per resample; "
                 "|E_AF|: median (Q1, Q3) over recordings")
    return "\n".join(lines) + "\n"


# --- error categorisation ---------------------------------------------------------------

class ErrorTag(str, enum.Enum):
    LOW_QUALITY = "LowQuality"
    FN_AFL = "FN-AFl"
    FN_AF = "FN-AF"
    MIXED_LABELS = "MixedLabels"
    AT_OR_AB = "AT_or_AB"
    HIGH_HR = "HighHR"
    OTHER = "Other"


CAUSE_TAGS = (ErrorTag.LOW_QUALITY, ErrorTag.MIXED_LABELS, ErrorTag.AT_OR_AB, ErrorTag.HIGH_HR)


@dataclass
class CellError:
    cell: GridCell
    kind: str  # "FP" or "FN"
    tags: tuple


def mean_heart_rate(annotations: Sequence[BeatAnnotation], t0: float, t1: float) -> float:
    """60 (n - 1) / span over the beats annotated in [t0, t1); NaN below two beats."""
    times = [a.time_s for a in annotations if t0 <= a.time_s < t1]
    if len(times) < 2 or times[-1] <= times[0]:
        return float("nan")
    return 60.0 * (len(times) - 1) / (times[-1] - times[0])


def _enclosing(windows, t):
    for w in windows:
        if w.start_s <= t < w.end_s:
            return w
    return None


def categorize_errors(cells: Sequence[GridCell], annotations: Sequence[BeatAnnotation],
                      windows: Sequence[Window]) -> list[CellError]:
    """Tag every FP and FN cell with all applicable categories.

    ``Other`` is added when none of the cause tags (quality, mixed labels,
    AT/AB, high rate) applies; FN cells also carry their AF/AFL subtype.
    """
    out = []
    for c in cells:
        if c.prediction is None or c.prediction == c.truth:
            continue
        kind = "FP" if c.prediction else "FN"
        tags = []
        w = _enclosing(windows, c.start_s)
        if w is not None and w.bsqi < BSQI_THRESHOLD:
            tags.append(ErrorTag.LOW_QUALITY)
        if kind == "FN":
            rhythm = majority_rhythm(annotations, c.start_s, c.end_s)
            tags.append(ErrorTag.FN_AFL if rhythm == RhythmLabel.AFL else ErrorTag.FN_AF)
        if w is not None:
            dur = rhythm_durations(annotations, w.start_s, w.end_s)
            pos = sum(v for r, v in dur.items() if r.is_afl_combined and v > 0)
            neg = sum(v for r, v in dur.items() if not r.is_afl_combined and v > 0)
            if pos > 0 and neg > 0:
                tags.append(ErrorTag.MIXED_LABELS)
        cell_dur = rhythm_durations(annotations, c.start_s, c.end_s)
        if cell_dur.get(RhythmLabel.AT, 0) > 0 or cell_dur.get(RhythmLabel.AB, 0) > 0:
            tags.append(ErrorTag.AT_OR_AB)
        if w is not None and mean_heart_rate(annotations, w.start_s, w.end_s) > HIGH_HR_BPM:
            tags.append(ErrorTag.HIGH_HR)
        if not any(t in CAUSE_TAGS for t in tags):
            tags.append(ErrorTag.OTHER)
        out.append(CellError(c, kind, tuple(tags)))
    return out


def summarize_errors(errors: Sequence[CellError]) -> dict:
    """Counts per tag and per error kind."""
    tags = Counter(t.value for e in errors for t in e.tags)
    kinds = Counter(e.kind for e in errors)
    return {"n_errors": len(errors), "by_kind": dict(sorted(kinds.items())),
            "by_tag": dict(sorted(tags.items()))}
