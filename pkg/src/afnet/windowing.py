"""30-s analysis windows, exclusion rules and the 5-s evaluation grid."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .qrs_sqi import BSQI_THRESHOLD, segment_bsqi
from .signal_io import CANONICAL_FS, BeatAnnotation, EcgRecording, RhythmLabel

WINDOW_S = 30.0
CELL_S = 5.0
WINDOW_SAMPLES = int(WINDOW_S * CANONICAL_FS)
POOR_QUALITY_FRACTION = 0.75
MIN_AGE_YEARS = 18.0


@dataclass
class Window:
    recording_id: str
    lead_name: str
    index: int
    start_s: float
    end_s: float
    samples: np.ndarray
    label: RhythmLabel
    bsqi: float = 1.0

    @property
    def target(self) -> int:
        return int(self.label.is_afl_combined)


@dataclass
class GridCell:
    start_s: float
    end_s: float
    truth: int
    prediction: Optional[int] = None
    probability: Optional[float] = None


def rhythm_durations(annotations: Sequence[BeatAnnotation], t0: float, t1: float) -> dict:
    """Seconds spent in each rhythm within ``[t0, t1)``.

    Rhythm is a step function: each annotation's rhythm holds until the
    next annotation; before the first annotation the first rhythm applies.
    """
    out: dict = {}
    if not annotations or t1 <= t0:
        return out
    times = [a.time_s for a in annotations]
    # index of the annotation governing t0
    k = int(np.searchsorted(times, t0, side="right")) - 1
    k = max(k, 0)
    cursor = t0
    while cursor < t1:
        nxt = times[k + 1] if k + 1 < len(times) else np.inf
        seg_end = min(nxt, t1)
        rhythm = annotations[k].rhythm
        if seg_end > cursor:
            out[rhythm] = out.get(rhythm, 0.0) + (seg_end - cursor)
        cursor = seg_end
        k += 1
        if k >= len(times):
            if cursor < t1:
                rhythm = annotations[-1].rhythm
                out[rhythm] = out.get(rhythm, 0.0) + (t1 - cursor)
            break
    return out


def majority_rhythm(annotations: Sequence[BeatAnnotation], t0: float, t1: float) -> RhythmLabel:
    """Rhythm with the greatest total time in ``[t0, t1)``; ties go to the lower enum value."""
    durations = rhythm_durations(annotations, t0, t1)
    if not durations:
        return RhythmLabel.OTHER
    return max(sorted(durations), key=lambda r: durations[r])


def segment(rec: EcgRecording, lead: str, compute_bsqi: bool = True) -> list[Window]:
    if rec.fs_hz != CANONICAL_FS:
        raise ValueError(f"segment expects a {CANONICAL_FS:g} Hz recording, got {rec.fs_hz:g} Hz")
    x = rec.lead(lead)
    n_windows = int(rec.n_samples // WINDOW_SAMPLES)
    windows = []
    for k in range(n_windows):
        samples = np.asarray(x[k * WINDOW_SAMPLES:(k + 1) * WINDOW_SAMPLES], dtype=np.float32)
        start = k * WINDOW_S
        label = majority_rhythm(rec.annotations, start, start + WINDOW_S)
        q = segment_bsqi(samples, CANONICAL_FS) if compute_bsqi else 1.0
        windows.append(Window(rec.recording_id, lead, k, start, start + WINDOW_S, samples, label, q))
    return windows


def exclude_for_training(windows: Iterable[Window], threshold: float = BSQI_THRESHOLD) -> list[Window]:
    """Keep windows with bsqi >= threshold. Never apply to test data."""
    return [w for w in windows if w.bsqi >= threshold]


def exclude_recording(rec: EcgRecording, windows: Sequence[Window]) -> tuple[bool, str]:
    """Return ``(keep, reason)``; reason is ``""`` when kept."""
    if rec.age_years is not None and rec.age_years < MIN_AGE_YEARS:
        return False, "age"
    if not rec.annotations:
        return False, "annotations"
    if windows:
        poor = sum(1 for w in windows if w.bsqi < BSQI_THRESHOLD)
        if poor / len(windows) > POOR_QUALITY_FRACTION:
            return False, "quality"
    return True, ""


def n_cells(duration_s: float) -> int:
    return int(np.floor(duration_s / CELL_S + 1e-9))


def align_to_grid(preds, duration_s: float) -> list[GridCell]:
    """Map interval predictions onto 5-s cells by greatest overlap.

    ``preds`` holds ``((t0, t1), prob, binary)`` tuples. A cell covered by no
    interval keeps ``prediction=None``. Equal overlaps go to the interval
    that starts first (then to the earlier entry). Cell ``truth`` is left 0;
    fill it with :func:`cell_truth`.
    """
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    order = sorted(range(len(preds)), key=lambda i: (preds[i][0][0], i))
    intervals = [(float(preds[i][0][0]), float(preds[i][0][1]), preds[i][1], preds[i][2]) for i in order]
    starts = np.array([iv[0] for iv in intervals])
    cells = []
    for c in range(n_cells(duration_s)):
        c0, c1 = c * CELL_S, (c + 1) * CELL_S
        cell = GridCell(c0, c1, 0)
        best = 0.0
        # intervals starting at or after c1 cannot overlap
        hi = int(np.searchsorted(starts, c1, side="left"))
        for t0, t1, prob, binary in intervals[:hi]:
            overlap = min(t1, c1) - max(t0, c0)
            if overlap > best:
                best = overlap
                cell.prediction = int(binary)
                cell.probability = None if prob is None else float(prob)
        cells.append(cell)
    return cells


def cell_truth(annotations: Sequence[BeatAnnotation], duration_s: float) -> list[int]:
    """Binary AF/AFL truth per 5-s cell by the majority-time rule."""
    return [
        int(majority_rhythm(annotations, c * CELL_S, (c + 1) * CELL_S).is_afl_combined)
        for c in range(n_cells(duration_s))
    ]


def label_cells(cells: list[GridCell], annotations, duration_s: float) -> list[GridCell]:
    for cell, truth in zip(cells, cell_truth(annotations, duration_s)):
        cell.truth = truth
    return cells


# window cache: u32 count, then per window f64 start_s, u8 label, f32 bsqi, 6000 f32 samples
_HEADER = struct.Struct("<I")
_RECORD = struct.Struct("<dBf")


def write_windows(windows: Sequence[Window], path) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(len(windows)))
        for w in windows:
            if len(w.samples) != WINDOW_SAMPLES:
                raise ValueError(f"window {w.index} has {len(w.samples)} samples")
            fh.write(_RECORD.pack(float(w.start_s), int(w.label), float(w.bsqi)))
            fh.write(np.asarray(w.samples, dtype="<f4").tobytes())


def read_windows(path, recording_id: Optional[str] = None, lead_name: Optional[str] = None) -> list[Window]:
    path = Path(path)
    if lead_name is None:
        stem = path.stem
        lead_name = stem[len("windows_"):] if stem.startswith("windows_") else stem
    if recording_id is None:
        recording_id = path.parent.name
    raw = path.read_bytes()
    (count,) = _HEADER.unpack_from(raw, 0)
    offset = _HEADER.size
    rec_size = _RECORD.size + 4 * WINDOW_SAMPLES
    if len(raw) != offset + count * rec_size:
        raise ValueError(f"{path}: size does not match window count {count}")
    out = []
    for k in range(count):
        start, label, q = _RECORD.unpack_from(raw, offset)
        offset += _RECORD.size
        samples = np.frombuffer(raw, dtype="<f4", count=WINDOW_SAMPLES, offset=offset).astype(np.float32)
        offset += 4 * WINDOW_SAMPLES
        out.append(Window(recording_id, lead_name, k, start, start + WINDOW_S, samples,
                          RhythmLabel(label), float(q)))
    return out
