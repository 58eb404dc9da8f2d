"""Recording data model, on-disk directory format and resampling.

A recording directory holds::

    header.json         recording_id, fs_hz, lead_names, age_years, sex
    lead_<name>.f32     raw little-endian float32 samples, one file per lead
    annotations.csv     header row ``time_s,rhythm``
"""
from __future__ import annotations

import csv
import enum
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

logger = logging.getLogger(__name__)

CANONICAL_FS = 200.0


class RhythmLabel(enum.IntEnum):
    NSR = 0
    AF = 1
    AFL = 2
    AT = 3
    AB = 4
    OTHER = 5

    @property
    def is_afl_combined(self) -> bool:
        """True for the combined AF/AFL positive class."""
        return self in (RhythmLabel.AF, RhythmLabel.AFL)

    @classmethod
    def parse(cls, text: str) -> "RhythmLabel":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            logger.warning("unknown rhythm label %r mapped to OTHER", text)
            return cls.OTHER


class RecordingFormatError(ValueError):
    """Raised when a recording directory is malformed.

    ``field`` names the offending part of the recording.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class BeatAnnotation:
    time_s: float
    rhythm: RhythmLabel


@dataclass
class EcgRecording:
    recording_id: str
    leads: list[tuple[str, np.ndarray]]
    fs_hz: float
    annotations: list[BeatAnnotation] = field(default_factory=list)
    age_years: Optional[float] = None
    sex: Optional[str] = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.fs_hz <= 0:
            raise RecordingFormatError("fs_hz", "sampling rate must be positive")
        if not self.leads:
            raise RecordingFormatError("leads", "recording has no leads")
        n = len(self.leads[0][1])
        for name, samples in self.leads:
            if len(samples) != n:
                raise RecordingFormatError(
                    "samples", f"sample-count mismatch across leads ({name}: {len(samples)} != {n})"
                )
        times = np.array([a.time_s for a in self.annotations], dtype=float)
        if times.size:
            if np.any(np.diff(times) <= 0):
                raise RecordingFormatError("annotations", "non-monotonic annotations")
            if times[0] < 0:
                raise RecordingFormatError("annotations", "negative annotation time")
            if times[-1] > self.duration_s + 1e-9:
                raise RecordingFormatError("annotations", "annotation beyond end of recording")
        if self.age_years is not None and self.age_years < 0:
            raise RecordingFormatError("age_years", "age must be non-negative")
        if self.sex not in (None, "F", "M"):
            raise RecordingFormatError("sex", f"expected F or M, got {self.sex!r}")

    @property
    def n_samples(self) -> int:
        return len(self.leads[0][1])

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.fs_hz

    @property
    def lead_names(self) -> list[str]:
        return [name for name, _ in self.leads]

    def lead(self, name: str) -> np.ndarray:
        for lead_name, samples in self.leads:
            if lead_name == name:
                return samples
        raise KeyError(f"recording {self.recording_id} has no lead {name!r}")

    def resampled(self, fs_out: float = CANONICAL_FS) -> "EcgRecording":
        if fs_out == self.fs_hz:
            return self
        leads = [(name, resample(x, self.fs_hz, fs_out)) for name, x in self.leads]
        duration = len(leads[0][1]) / fs_out
        annotations = [a for a in self.annotations if a.time_s <= duration]
        return EcgRecording(
            self.recording_id, leads, fs_out, annotations, self.age_years, self.sex
        )


def resample(samples, fs_in: float, fs_out: float) -> np.ndarray:
    """Linearly interpolate ``samples`` onto the grid ``k / fs_out``.

    Output length is ``round(len(samples) * fs_out / fs_in)``. Grid points
    past the last input sample take the last input value.
    """
    x = np.asarray(samples)
    if x.size == 0:
        raise ValueError("cannot resample an empty array")
    if fs_in <= 0 or fs_out <= 0:
        raise ValueError("sampling rates must be positive")
    if fs_in == fs_out:
        return x
    n_out = int(round(x.size * fs_out / fs_in))
    t_in = np.arange(x.size) / fs_in
    t_out = np.arange(n_out) / fs_out
    # np.interp clamps to the end values outside [t_in[0], t_in[-1]]
    return np.interp(t_out, t_in, x.astype(np.float64))


def _safe_lead_name(name: str) -> str:
    if not name or any(c in name for c in "/\\\0") or name in (".", ".."):
        raise RecordingFormatError("lead_names", f"invalid lead name {name!r}")
    return name


def write_recording(rec: EcgRecording, path) -> None:
    rec.validate()
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    header = {
        "recording_id": rec.recording_id,
        "fs_hz": float(rec.fs_hz),
        "lead_names": rec.lead_names,
        "age_years": None if rec.age_years is None else float(rec.age_years),
        "sex": rec.sex,
    }
    (path / "header.json").write_text(json.dumps(header, indent=2) + "\n", encoding="utf-8")
    for name, samples in rec.leads:
        data = np.asarray(samples, dtype="<f4")
        (path / f"lead_{_safe_lead_name(name)}.f32").write_bytes(data.tobytes())
    with open(path / "annotations.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["time_s", "rhythm"])
        for a in rec.annotations:
            writer.writerow([repr(float(a.time_s)), a.rhythm.name])


def read_recording(path) -> EcgRecording:
    path = Path(path)
    try:
        header = json.loads((path / "header.json").read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise RecordingFormatError("header", f"missing header.json in {path}") from exc
    except json.JSONDecodeError as exc:
        raise RecordingFormatError("header", f"malformed header.json: {exc}") from exc
    for key in ("recording_id", "fs_hz", "lead_names"):
        if key not in header:
            raise RecordingFormatError(key, "missing from header.json")
    if not isinstance(header["lead_names"], list) or not header["lead_names"]:
        raise RecordingFormatError("lead_names", "must be a non-empty list")
    try:
        fs_hz = float(header["fs_hz"])
    except (TypeError, ValueError) as exc:
        raise RecordingFormatError("fs_hz", f"not a number: {header['fs_hz']!r}") from exc

    leads = []
    for name in header["lead_names"]:
        fname = path / f"lead_{_safe_lead_name(name)}.f32"
        if not fname.exists():
            raise RecordingFormatError("samples", f"missing sample file {fname.name}")
        raw = fname.read_bytes()
        if len(raw) % 4:
            raise RecordingFormatError("samples", f"{fname.name} is not a whole number of float32")
        leads.append((name, np.frombuffer(raw, dtype="<f4").astype(np.float32)))
    n = {len(x) for _, x in leads}
    if len(n) > 1:
        raise RecordingFormatError("samples", "sample-count mismatch across leads")

    annotations = []
    ann_path = path / "annotations.csv"
    if ann_path.exists():
        with open(ann_path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            head = next(reader, None)
            if head != ["time_s", "rhythm"]:
                raise RecordingFormatError("annotations", f"bad header row {head!r}")
            for row in reader:
                if not row:
                    continue
                if len(row) != 2:
                    raise RecordingFormatError("annotations", f"bad row {row!r}")
                annotations.append(BeatAnnotation(float(row[0]), RhythmLabel.parse(row[1])))
    times = [a.time_s for a in annotations]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise RecordingFormatError("annotations", "non-monotonic annotations")

    return EcgRecording(
        recording_id=str(header["recording_id"]),
        leads=leads,
        fs_hz=fs_hz,
        annotations=annotations,
        age_years=header.get("age_years"),
        sex=header.get("sex"),
    )


def list_recordings(root) -> list[Path]:
    """Recording directories (those holding a header.json) below ``root``, sorted."""
    root = Path(root)
    found = sorted(p.parent for p in root.rglob("header.json"))
    return [p for p in found if os.path.isdir(p)]
