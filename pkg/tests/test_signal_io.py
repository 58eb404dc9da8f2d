import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afnet.signal_io import (
    BeatAnnotation, EcgRecording, RecordingFormatError, RhythmLabel, list_recordings,
    read_recording, resample, write_recording,
)


def make_recording(rng, n_leads=2, n=1250, fs=125.0, n_ann=5, rid="r1"):
    leads = [(f"L{i}", rng.standard_normal(n).astype(np.float32)) for i in range(n_leads)]
    times = np.sort(rng.choice(np.arange(n) / fs, size=n_ann, replace=False))
    labels = list(RhythmLabel)
    ann = [BeatAnnotation(float(t), labels[int(rng.integers(len(labels)))]) for t in times]
    return EcgRecording(rid, leads, fs, ann, 54.0, "F")


def test_afl_combined_label():
    assert {r for r in RhythmLabel if r.is_afl_combined} == {RhythmLabel.AF, RhythmLabel.AFL}


def test_unknown_label_maps_to_other(caplog):
    with caplog.at_level(logging.WARNING):
        assert RhythmLabel.parse("VT") is RhythmLabel.OTHER
    assert "unknown rhythm label" in caplog.text
    assert RhythmLabel.parse(" afl ") is RhythmLabel.AFL


def test_read_two_leads_at_125hz(tmp_path):
    rec = make_recording(np.random.default_rng(0))
    write_recording(rec, tmp_path / "r1")
    back = read_recording(tmp_path / "r1")
    assert back.duration_s == pytest.approx(10.0)
    assert back.lead_names == ["L0", "L1"]


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(1)
    for k in range(20):
        rec = make_recording(rng, n_leads=int(rng.integers(1, 4)), n=int(rng.integers(200, 900)),
                             n_ann=int(rng.integers(0, 10)), rid=f"r{k}")
        write_recording(rec, tmp_path / rec.recording_id)
        back = read_recording(tmp_path / rec.recording_id)
        assert back.recording_id == rec.recording_id
        assert back.fs_hz == rec.fs_hz and back.age_years == rec.age_years and back.sex == rec.sex
        assert back.annotations == rec.annotations
        for (n1, x1), (n2, x2) in zip(rec.leads, back.leads):
            assert n1 == n2
            assert x1.tobytes() == x2.tobytes()


def test_write_read_write_byte_identical(tmp_path):
    rec = make_recording(np.random.default_rng(2), n_leads=3)
    write_recording(rec, tmp_path / "a")
    write_recording(read_recording(tmp_path / "a"), tmp_path / "b")
    for name in ["header.json", "annotations.csv"] + [f"lead_L{i}.f32" for i in range(3)]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_layout_three_leads_and_empty_annotations(tmp_path):
    rec = EcgRecording("x", [(n, np.zeros(10, np.float32)) for n in ("CM5", "CC5", "CM5R")], 200.0)
    write_recording(rec, tmp_path / "x")
    files = sorted(p.name for p in (tmp_path / "x").iterdir())
    assert files == ["annotations.csv", "header.json", "lead_CC5.f32", "lead_CM5.f32", "lead_CM5R.f32"]
    assert (tmp_path / "x" / "annotations.csv").read_text() == "time_s,rhythm\n"
    assert read_recording(tmp_path / "x").annotations == []
    header = json.loads((tmp_path / "x" / "header.json").read_text())
    assert header["lead_names"] == ["CM5", "CC5", "CM5R"]


def test_non_monotonic_annotations_rejected(tmp_path):
    rec = make_recording(np.random.default_rng(3))
    write_recording(rec, tmp_path / "r")
    (tmp_path / "r" / "annotations.csv").write_text("time_s,rhythm\n2.0,NSR\n1.0,AF\n")
    with pytest.raises(RecordingFormatError, match="non-monotonic annotations") as info:
        read_recording(tmp_path / "r")
    assert info.value.field == "annotations"


def test_sample_count_mismatch_rejected(tmp_path):
    rec = make_recording(np.random.default_rng(4))
    write_recording(rec, tmp_path / "r")
    (tmp_path / "r" / "lead_L1.f32").write_bytes(np.zeros(7, "<f4").tobytes())
    with pytest.raises(RecordingFormatError) as info:
        read_recording(tmp_path / "r")
    assert info.value.field == "samples"


def test_malformed_header_rejected(tmp_path):
    (tmp_path / "r").mkdir()
    (tmp_path / "r" / "header.json").write_text("{not json")
    with pytest.raises(RecordingFormatError) as info:
        read_recording(tmp_path / "r")
    assert info.value.field == "header"
    (tmp_path / "r" / "header.json").write_text('{"recording_id": "r", "lead_names": ["a"]}')
    with pytest.raises(RecordingFormatError) as info:
        read_recording(tmp_path / "r")
    assert info.value.field == "fs_hz"


def test_in_memory_invariants():
    with pytest.raises(RecordingFormatError):
        EcgRecording("r", [("a", np.zeros(10)), ("b", np.zeros(11))], 100.0)
    with pytest.raises(RecordingFormatError):
        EcgRecording("r", [("a", np.zeros(10))], 100.0, [BeatAnnotation(0.5, RhythmLabel.NSR)])
    with pytest.raises(RecordingFormatError):
        EcgRecording("r", [("a", np.zeros(10))], 100.0, age_years=-1.0)
    with pytest.raises(KeyError):
        EcgRecording("r", [("a", np.zeros(10))], 100.0).lead("b")


def test_list_recordings(tmp_path):
    rng = np.random.default_rng(5)
    for rid in ("b", "a"):
        write_recording(make_recording(rng, rid=rid), tmp_path / "split" / rid)
    assert [p.name for p in list_recordings(tmp_path)] == ["a", "b"]


# --- resampling ---------------------------------------------------------------------

def test_resample_length():
    assert resample(np.zeros(125), 125, 200).shape == (200,)
    assert resample(np.zeros(1000), 500, 200).shape == (400,)


def test_resample_same_rate_returns_input():
    x = np.arange(5.0)
    assert resample(x, 200, 200) is x


def test_resample_constant():
    for fs_in, fs_out in [(125, 200), (500, 200), (360, 200), (200, 128)]:
        y = resample(np.full(77, 0.7), fs_in, fs_out)
        assert np.allclose(y, 0.7, atol=1e-12, rtol=0)


def test_resample_sine_against_analytic():
    fs_in, fs_out, f = 125.0, 200.0, 5.0
    x = np.sin(2 * np.pi * f * np.arange(1250) / fs_in)
    y = resample(x, fs_in, fs_out)
    t = np.arange(len(y)) / fs_out
    inside = t <= (len(x) - 1) / fs_in
    assert np.max(np.abs(y[inside] - np.sin(2 * np.pi * f * t[inside]))) < 0.01


def test_resample_rejects_empty():
    with pytest.raises(ValueError):
        resample(np.zeros(0), 100, 200)


def test_resampled_recording_keeps_annotations():
    rec = EcgRecording("r", [("a", np.zeros(1250))], 125.0, [BeatAnnotation(9.5, RhythmLabel.AF)])
    out = rec.resampled(200.0)
    assert out.fs_hz == 200.0 and out.n_samples == 2000 and out.annotations == rec.annotations


@settings(max_examples=60, deadline=None)
@given(n=st.integers(2, 300), fs_in=st.sampled_from([100.0, 125.0, 250.0, 360.0, 500.0, 1000.0]),
       a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 2**16))
def test_resample_is_linear(n, fs_in, a, b, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal(n), rng.standard_normal(n)
    lhs = resample(a * x + b * y, fs_in, 200.0)
    rhs = a * resample(x, fs_in, 200.0) + b * resample(y, fs_in, 200.0)
    assert np.max(np.abs(lhs - rhs), initial=0.0) < 1e-9


@settings(max_examples=60, deadline=None)
@given(n=st.integers(2, 300), fs_in=st.sampled_from([100.0, 125.0, 250.0, 360.0, 500.0]),
       seed=st.integers(0, 2**16))
def test_resample_preserves_first_sample(n, fs_in, seed):
    x = np.random.default_rng(seed).standard_normal(n)
    y = resample(x, fs_in, 200.0)
    assert y[0] == x[0]
    # grid points past the input end clamp to the last value
    t_last = (n - 1) / fs_in
    tail = np.arange(len(y)) / 200.0 >= t_last
    if tail.any():
        assert np.allclose(y[tail][1:], x[-1]) or tail.sum() == 1
