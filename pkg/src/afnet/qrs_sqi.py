"""Two independent QRS detectors and the bSQI agreement index."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import signal

REFRACTORY_S = 0.25
DEFAULT_TOL_S = 0.15
BSQI_THRESHOLD = 0.8
MIN_SEGMENT_S = 2.0


class DetectorId(enum.Enum):
    ENERGY = "energy"
    DIFFERENTIAL = "differential"


@dataclass(frozen=True)
class BeatList:
    times_s: np.ndarray
    detector_id: DetectorId

    def __len__(self) -> int:
        return len(self.times_s)


def _check_segment(x, fs):
    x = np.asarray(x, dtype=np.float64)
    if fs < 100:
        raise ValueError(f"QRS detection needs fs >= 100 Hz, got {fs}")
    if x.size < MIN_SEGMENT_S * fs:
        raise ValueError(f"segment too short: {x.size / fs:.2f} s < {MIN_SEGMENT_S} s")
    return x


def detect_qrs_energy(samples, fs: float) -> BeatList:
    """Pan-Tompkins style detector.

    Band-pass 5-15 Hz, derivative, squaring and a 150 ms moving-window
    integration, followed by the classic running signal/noise peak
    threshold with search-back. Filtering and integration are zero-phase so
    the integration peak sits on the QRS centre.
    """
    x = _check_segment(samples, fs)
    refractory = int(round(REFRACTORY_S * fs))
    sos = signal.butter(2, [5.0, 15.0], btype="bandpass", fs=fs, output="sos")
    bp = signal.sosfiltfilt(sos, x - np.median(x))
    d = np.gradient(bp) * fs
    win = max(1, int(round(0.15 * fs)))
    mwi = np.convolve(d * d, np.ones(win) / win, mode="same")
    if not np.any(mwi > 0):
        return BeatList(np.empty(0), DetectorId.ENERGY)

    peaks, _ = signal.find_peaks(mwi, distance=refractory)
    if peaks.size == 0:
        return BeatList(np.empty(0), DetectorId.ENERGY)
    heights = mwi[peaks]

    learn = peaks < int(2 * fs)
    spki = 0.25 * heights[learn].max() if learn.any() else 0.25 * heights.max()
    npki = 0.5 * np.mean(mwi[: int(2 * fs)])
    qrs: list[int] = []
    rr_avg = None
    last_searched = -1
    for i, (p, h) in enumerate(zip(peaks, heights)):
        thr = npki + 0.25 * (spki - npki)
        if h > thr and (not qrs or p - qrs[-1] >= refractory):
            qrs.append(p)
            spki = 0.125 * h + 0.875 * spki
        else:
            npki = 0.125 * h + 0.875 * npki
        if len(qrs) >= 2:
            rr = np.diff(qrs[-9:]).mean()
            rr_avg = rr
        # search back for a missed beat at half threshold
        if rr_avg is not None and qrs and p - qrs[-1] > 1.66 * rr_avg and i > last_searched:
            cand = [
                (hh, pp)
                for pp, hh in zip(peaks[: i + 1], heights[: i + 1])
                if pp - qrs[-1] >= refractory and p - pp >= refractory and hh > 0.5 * thr
            ]
            last_searched = i
            if cand:
                hh, pp = max(cand)
                qrs.append(pp)
                spki = 0.25 * hh + 0.75 * spki
    times = np.asarray(sorted(qrs), dtype=float) / fs
    return BeatList(times, DetectorId.ENERGY)


def detect_qrs_differential(samples, fs: float, percentile: float = 98.0, fraction: float = 0.4,
                            block_s: float = 5.0, noise_factor: float = 5.0) -> BeatList:
    """Slope detector on the absolute first difference of the signal.

    The signal is first smoothed with a 25 ms moving average. A sample is a
    candidate when its slope magnitude exceeds both ``fraction`` times the
    ``percentile`` of the slope over its ``block_s`` block and
    ``noise_factor`` times a MAD estimate of the slope noise floor. On
    broadband noise the floor term suppresses nearly every candidate, which
    is what makes this detector disagree with the energy detector there.
    """
    x = _check_segment(samples, fs)
    refractory = int(round(REFRACTORY_S * fs))
    m = max(1, int(round(0.025 * fs)))
    smooth = np.convolve(x, np.ones(m) / m, mode="same")
    slope = np.abs(np.diff(smooth, prepend=smooth[0]))
    if not np.any(slope > 0):
        return BeatList(np.empty(0), DetectorId.DIFFERENTIAL)
    d = np.diff(smooth)
    floor = noise_factor * 1.4826 * np.median(np.abs(d - np.median(d)))
    block = int(round(block_s * fs))
    thr = np.empty_like(slope)
    start = 0
    while start < slope.size:
        end = start + block
        if slope.size - end < block:
            end = slope.size  # fold a short tail into the last block
        thr[start:end] = max(fraction * np.percentile(slope[start:end], percentile), floor)
        start = end
    peaks, _ = signal.find_peaks(slope, distance=refractory)
    peaks = peaks[slope[peaks] > thr[peaks]]
    # re-enforce refractory after thresholding, keeping the larger slope
    kept: list[int] = []
    for p in peaks:
        if kept and p - kept[-1] < refractory:
            if slope[p] > slope[kept[-1]]:
                kept[-1] = p
            continue
        kept.append(p)
    return BeatList(np.asarray(kept, dtype=float) / fs, DetectorId.DIFFERENTIAL)


def match_beats(a, b, tol_s: float = DEFAULT_TOL_S) -> int:
    """Greedy one-to-one matching in time order.

    Each beat of ``a`` takes the nearest still-unmatched beat of ``b``
    within ``tol_s``.
    """
    if tol_s <= 0:
        raise ValueError("tol_s must be positive")
    ta = np.asarray(getattr(a, "times_s", a), dtype=float)
    tb = np.asarray(getattr(b, "times_s", b), dtype=float)
    used = np.zeros(tb.size, dtype=bool)
    matched = 0
    for t in ta:
        lo = np.searchsorted(tb, t - tol_s, side="left")
        hi = np.searchsorted(tb, t + tol_s, side="right")
        best = -1
        best_d = np.inf
        for j in range(lo, hi):
            if not used[j]:
                d = abs(tb[j] - t)
                if d < best_d:
                    best, best_d = j, d
        if best >= 0:
            used[best] = True
            matched += 1
    return matched


def bsqi(a, b, tol_s: float = DEFAULT_TOL_S, method: str = "primary") -> float:
    """Fraction of beats of ``a`` matched by ``b``.

    ``method="jaccard"`` gives ``matched / (|a| + |b| - matched)`` instead.
    Returns 0 when ``a`` is empty.
    """
    ta = getattr(a, "times_s", a)
    tb = getattr(b, "times_s", b)
    na, nb = len(ta), len(tb)
    if na == 0:
        return 0.0
    m = match_beats(ta, tb, tol_s)
    if method == "primary":
        return m / na
    if method == "jaccard":
        return m / (na + nb - m)
    raise ValueError(f"unknown bsqi method {method!r}")


def segment_bsqi(samples, fs: float, tol_s: float = DEFAULT_TOL_S) -> float:
    """bSQI of a signal segment using both detectors (energy as primary)."""
    return bsqi(detect_qrs_energy(samples, fs), detect_qrs_differential(samples, fs), tol_s)
