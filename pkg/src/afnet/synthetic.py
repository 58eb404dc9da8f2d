"""Deterministic synthetic Holter-like ECG with labelled rhythm episodes.

Not a physiological model. Beats are sums of Gaussian bumps, AF replaces
P-waves with a phase-jittered sinusoidal f-wave and irregular RR intervals,
and flutter adds a sawtooth atrial wave at about 300 cycles per minute.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .signal_io import BeatAnnotation, EcgRecording, RhythmLabel, write_recording


@dataclass(frozen=True)
class LeadProfile:
    """How one lead sees the ventricular and atrial sources."""

    name: str
    gain: float = 1.0
    polarity: float = 1.0
    atrial_gain: float = 1.0
    noise_scale: float = 1.0


DEFAULT_LEADS = (
    LeadProfile("CM5", gain=1.0, polarity=1.0, atrial_gain=1.0),
    LeadProfile("CC5", gain=0.8, polarity=1.0, atrial_gain=0.7, noise_scale=1.2),
    LeadProfile("CM5R", gain=0.9, polarity=1.0, atrial_gain=1.3),
)


@dataclass
class SynthConfig:
    seed: int = 0
    duration_s: float = 600.0
    fs_hz: float = 200.0
    rhythm_segments: list = field(default_factory=lambda: [(RhythmLabel.NSR, 600.0)])
    af_fwave_amp_mv: float = 0.1
    af_fwave_freq_hz: float = 6.0
    nsr_rr_s: float = 0.85
    nsr_rr_jitter: float = 0.03
    af_rr_mean_s: float = 0.65
    af_rr_irregularity: float = 0.25
    noise_std_mv: float = 0.02
    baseline_wander_mv: float = 0.05
    dropout_prob: float = 0.0
    leads: Sequence[LeadProfile] = DEFAULT_LEADS
    recording_id: str = "synth"
    age_years: Optional[float] = 60.0
    sex: Optional[str] = None

    def __post_init__(self):
        if self.duration_s <= 0 or self.fs_hz <= 0:
            raise ValueError("duration_s and fs_hz must be positive")
        if any(d <= 0 for _, d in self.rhythm_segments):
            raise ValueError("rhythm segment durations must be positive")
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise ValueError("dropout_prob must lie in [0, 1]")
        if self.af_rr_irregularity < 0:
            raise ValueError("af_rr_irregularity must be non-negative")


def _rhythm_at(segments, t):
    acc = 0.0
    for label, dur in segments:
        acc += dur
        if t < acc:
            return label
    return segments[-1][0]


def _beat_times(cfg: SynthConfig, rng):
    """QRS times (on the sample grid) and the rhythm of each beat."""
    times, rhythms = [], []
    t = 0.2 + 0.3 * rng.random()
    ab_phase = 0
    # slowly varying heart-rate modulation for sinus-like rhythms
    hr_mod_phase = rng.uniform(0, 2 * np.pi)
    flutter_ratio = {}
    while t < cfg.duration_s - 0.05:
        rhythm = _rhythm_at(cfg.rhythm_segments, t)
        n = round(t * cfg.fs_hz)
        if times and n <= round(times[-1] * cfg.fs_hz):
            n = round(times[-1] * cfg.fs_hz) + 1
        times.append(n / cfg.fs_hz)
        rhythms.append(rhythm)
        mod = 1.0 + 0.05 * np.sin(2 * np.pi * t / 60.0 + hr_mod_phase)
        if rhythm == RhythmLabel.AF:
            cv = cfg.af_rr_irregularity
            if cv > 0:
                shape = 1.0 / cv**2
                rr = rng.gamma(shape, cfg.af_rr_mean_s / shape)
            else:
                rr = cfg.af_rr_mean_s
            rr = max(rr, 0.28)
        elif rhythm == RhythmLabel.AFL:
            seg = _segment_index(cfg.rhythm_segments, t)
            if seg not in flutter_ratio:
                flutter_ratio[seg] = int(rng.choice([2, 3, 4]))
            rr = flutter_ratio[seg] * 0.2 * (1 + 0.005 * rng.standard_normal())
        elif rhythm == RhythmLabel.AT:
            rr = 0.5 * (1 + 0.01 * rng.standard_normal())
        elif rhythm == RhythmLabel.AB:
            rr = (0.55 if ab_phase == 0 else 0.95) * (1 + 0.01 * rng.standard_normal())
            ab_phase ^= 1
        else:
            rr = cfg.nsr_rr_s * mod * (1 + cfg.nsr_rr_jitter * rng.standard_normal())
        t = times[-1] + rr
    return np.asarray(times), rhythms


def _segment_index(segments, t):
    acc = 0.0
    for i, (_, dur) in enumerate(segments):
        acc += dur
        if t < acc:
            return i
    return len(segments) - 1


def _add_bump(out, fs, center, amp, sigma):
    half = int(4 * sigma * fs) + 1
    c = int(round(center * fs))
    lo, hi = max(0, c - half), min(out.size, c + half + 1)
    if lo >= hi:
        return
    tt = np.arange(lo, hi) / fs - center
    out[lo:hi] += amp * np.exp(-0.5 * (tt / sigma) ** 2)


def _rhythm_mask(cfg, t, labels):
    edges = np.cumsum([0.0] + [d for _, d in cfg.rhythm_segments])
    mask = np.zeros(t.size, dtype=bool)
    for (label, _), lo, hi in zip(cfg.rhythm_segments, edges[:-1], edges[1:]):
        if label in labels:
            mask |= (t >= lo) & (t < hi)
    if cfg.rhythm_segments[-1][0] in labels:
        mask |= t >= edges[-1]
    return mask


def generate(cfg: SynthConfig) -> EcgRecording:
    rng = np.random.default_rng(cfg.seed)
    fs = cfg.fs_hz
    n = int(round(cfg.duration_s * fs))
    t = np.arange(n) / fs
    beats, rhythms = _beat_times(cfg, rng)

    ventricular = np.zeros(n)
    atrial = np.zeros(n)
    for i, (tb, rhythm) in enumerate(zip(beats, rhythms)):
        rr = beats[i + 1] - tb if i + 1 < len(beats) else 0.8
        amp = 1.0 + 0.03 * rng.standard_normal()
        _add_bump(ventricular, fs, tb - 0.025, -0.12 * amp, 0.008)
        _add_bump(ventricular, fs, tb, amp, 0.011)
        _add_bump(ventricular, fs, tb + 0.028, -0.2 * amp, 0.009)
        _add_bump(ventricular, fs, tb + min(0.3, 0.35 * max(rr, 0.4)), 0.28, 0.045)
        if rhythm in (RhythmLabel.NSR, RhythmLabel.AT, RhythmLabel.AB, RhythmLabel.OTHER):
            pr = 0.12 if rhythm == RhythmLabel.AT else 0.16
            _add_bump(atrial, fs, tb - pr, 0.12, 0.022)

    af_mask = _rhythm_mask(cfg, t, {RhythmLabel.AF})
    if af_mask.any():
        # frequency random walk gives a non-stationary, phase-jittered f-wave
        steps = rng.standard_normal(n) * 0.02
        freq = cfg.af_fwave_freq_hz + np.clip(np.cumsum(steps), -1.0, 1.0)
        phase = 2 * np.pi * np.cumsum(freq) / fs + rng.uniform(0, 2 * np.pi)
        envelope = 1.0 + 0.3 * np.sin(2 * np.pi * 0.3 * t + rng.uniform(0, 2 * np.pi))
        atrial += af_mask * cfg.af_fwave_amp_mv * envelope * np.sin(phase)
    afl_mask = _rhythm_mask(cfg, t, {RhythmLabel.AFL})
    if afl_mask.any():
        flutter_hz = 5.0
        saw = 2.0 * ((t * flutter_hz + rng.random()) % 1.0) - 1.0
        atrial += afl_mask * 1.5 * cfg.af_fwave_amp_mv * saw

    wander = cfg.baseline_wander_mv * (
        np.sin(2 * np.pi * 0.15 * t + rng.uniform(0, 2 * np.pi))
        + 0.5 * np.sin(2 * np.pi * 0.33 * t + rng.uniform(0, 2 * np.pi))
    )

    window = int(round(30 * fs))
    dropped = [k for k in range(n // window) if rng.random() < cfg.dropout_prob]

    leads = []
    for profile in cfg.leads:
        x = profile.polarity * profile.gain * ventricular + profile.atrial_gain * atrial
        x = x + wander + cfg.noise_std_mv * profile.noise_scale * rng.standard_normal(n)
        for k in dropped:
            seg = slice(k * window, (k + 1) * window)
            # motion artefact: large coloured noise swamping the ECG
            burst = np.cumsum(rng.standard_normal(window)) * 0.05
            x[seg] = burst - burst.mean() + 0.5 * rng.standard_normal(window)
        leads.append((profile.name, x.astype(np.float32)))

    annotations = [BeatAnnotation(float(tb), r) for tb, r in zip(beats, rhythms)]
    return EcgRecording(cfg.recording_id, leads, fs, annotations, cfg.age_years, cfg.sex)


@dataclass
class MixProfile:
    """Corpus composition.

    ``af_prevalence`` is the requested fraction of recording time (and so,
    up to boundary effects, of 30-s windows) in AF or AFL, enforced per split.
    """

    af_prevalence: float = 0.2
    af_recording_fraction: float = 0.4
    afl_share: float = 0.15
    other_arrhythmia_prob: float = 0.3
    noise_levels_mv: tuple = (0.01, 0.03, 0.06)
    dropout_prob: float = 0.02
    duration_s: float = 600.0
    leads: Sequence[LeadProfile] = DEFAULT_LEADS
    af_fwave_amp_mv: float = 0.1


def _allocate_burdens(n_af, total_af, duration, rng):
    """Per-recording AF seconds summing to ``total_af``, each within (0, duration]."""
    if n_af == 0:
        return np.zeros(0)
    w = rng.gamma(0.7, 1.0, size=n_af) + 0.02
    alloc = w / w.sum() * total_af
    for _ in range(50):
        over = alloc > duration
        if not over.any():
            break
        excess = (alloc[over] - duration).sum()
        alloc[over] = duration
        free = ~over & (alloc < duration)
        if not free.any():
            break
        alloc[free] += excess * alloc[free] / alloc[free].sum()
    return np.minimum(alloc, duration)


def _episode_segments(af_seconds, duration, label, rng, other_prob):
    """Rhythm segment list with a single AF episode placed at random."""
    segs = []
    if af_seconds >= duration - 1e-6:
        return [(label, duration)]
    if af_seconds > 0:
        start = rng.uniform(0, duration - af_seconds)
        pre, post = start, duration - start - af_seconds
    else:
        pre, post = duration, 0.0

    def sinus(span):
        if span <= 0:
            return []
        if rng.random() < other_prob and span > 120:
            other = RhythmLabel.AT if rng.random() < 0.5 else RhythmLabel.AB
            dur = rng.uniform(30, min(90, span - 30))
            lead_in = rng.uniform(0, span - dur)
            out = [(RhythmLabel.NSR, lead_in), (other, dur), (RhythmLabel.NSR, span - lead_in - dur)]
            return [s for s in out if s[1] > 1e-9]
        return [(RhythmLabel.NSR, span)]

    segs += sinus(pre)
    if af_seconds > 0:
        segs.append((label, af_seconds))
    segs += sinus(post)
    return segs


def truth_burden(segments) -> float:
    total = sum(d for _, d in segments)
    return sum(d for r, d in segments if r.is_afl_combined) / total


def corpus_configs(n_recordings: int, profile: MixProfile, seed: int,
                   split_counts: Optional[dict] = None) -> list[tuple[str, SynthConfig]]:
    """(split, config) pairs for a corpus; pure function of the arguments."""
    if split_counts is None:
        n_train = int(round(0.7 * n_recordings))
        n_val = int(round(0.1 * n_recordings))
        split_counts = {"train": n_train, "val": n_val, "test": n_recordings - n_train - n_val}
    if sum(split_counts.values()) != n_recordings:
        raise ValueError("split counts must sum to n_recordings")
    master = np.random.default_rng(seed)
    out = []
    serial = 0
    for split, count in split_counts.items():
        rng = np.random.default_rng(master.integers(2**63))
        n_af = int(round(count * profile.af_recording_fraction))
        if profile.af_prevalence > 0:
            n_af = max(n_af, 1)
        total_af = profile.af_prevalence * count * profile.duration_s
        burdens = _allocate_burdens(n_af, total_af, profile.duration_s, rng)
        af_secs = np.zeros(count)
        af_secs[rng.permutation(count)[:n_af]] = burdens
        for i in range(count):
            label = RhythmLabel.AFL if rng.random() < profile.afl_share else RhythmLabel.AF
            segs = _episode_segments(af_secs[i], profile.duration_s, label, rng,
                                     profile.other_arrhythmia_prob)
            rec_id = f"{split}{serial:04d}"
            serial += 1
            cfg = SynthConfig(
                seed=int(rng.integers(2**31)),
                duration_s=profile.duration_s,
                rhythm_segments=segs,
                af_fwave_amp_mv=profile.af_fwave_amp_mv * rng.uniform(0.8, 1.25),
                nsr_rr_s=rng.uniform(0.7, 1.0),
                noise_std_mv=float(rng.choice(profile.noise_levels_mv)),
                dropout_prob=profile.dropout_prob,
                leads=tuple(profile.leads),
                recording_id=rec_id,
                age_years=float(rng.integers(25, 90)),
                sex=str(rng.choice(["F", "M"])),
            )
            out.append((split, cfg))
    return out


def generate_corpus(out_dir, n_recordings: int, profile: Optional[MixProfile] = None,
                    seed: int = 0, split_counts: Optional[dict] = None) -> Path:
    """Write ``<out_dir>/<split>/<recording_id>/`` trees plus ``manifest.csv``."""
    profile = profile or MixProfile()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for split, cfg in corpus_configs(n_recordings, profile, seed, split_counts):
        rec = generate(cfg)
        write_recording(rec, out_dir / split / cfg.recording_id)
        rows.append((cfg.recording_id, split, truth_burden(cfg.rhythm_segments)))
    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["recording_id", "split", "b_af_truth"])
        for rec_id, split, b in rows:
            writer.writerow([rec_id, split, f"{b:.6f}"])
    return manifest


def read_manifest(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {"recording_id": r["recording_id"], "split": r["split"], "b_af_truth": float(r["b_af_truth"])}
            for r in csv.DictReader(fh)
        ]


def with_leads(profile: MixProfile, leads: Sequence[LeadProfile]) -> MixProfile:
    return replace(profile, leads=tuple(leads))
