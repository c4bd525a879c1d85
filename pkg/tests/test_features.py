import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spliceguard.audio import Waveform
from spliceguard.errors import ArgumentError, FormatError
from spliceguard.features import (
    FbankConfig,
    FeatureMatrix,
    add_deltas,
    deltas,
    export_features,
    fbank80,
    fbank240,
    hz_to_mel,
    import_external_features,
    mel_centers,
    mel_filterbank,
    mel_to_hz,
    read_feature_file,
)

from oracles import frame_count_oracle


def _tone(freq, seconds=1.0, sr=16000, amp=0.5):
    t = np.arange(int(seconds * sr)) / sr
    return Waveform(amp * np.sin(2 * np.pi * freq * t), sr)


def test_frame_count_one_second():
    # 1 + (16000 - 400) // 160
    assert fbank80(_tone(440)).shape == (98, 80)


@settings(max_examples=60, deadline=None)
@given(st.integers(400, 5000))
def test_frame_count_matches_oracle(n):
    w = Waveform(np.random.default_rng(n).uniform(-0.1, 0.1, n))
    assert fbank80(w).shape[0] == frame_count_oracle(n, 400, 160)


def test_shorter_than_one_frame():
    with pytest.raises(ArgumentError):
        fbank80(Waveform(np.zeros(399)))


def test_silence_hits_the_floor_and_stays_finite():
    F = fbank80(Waveform(np.zeros(16000)))
    assert np.all(np.isfinite(F))
    np.testing.assert_allclose(F, np.log(1e-10))


def test_tone_peaks_in_nearest_band():
    centers = mel_centers(80, 16000)
    F = fbank80(_tone(1000.0))
    peak = int(np.bincount(F.argmax(axis=1)).argmax())
    assert abs(centers[peak] - 1000.0) <= np.max(np.diff(centers))
    assert peak in np.argsort(np.abs(centers - 1000.0))[:2]


def test_mel_scale_round_trip():
    f = np.linspace(0, 8000, 101)
    np.testing.assert_allclose(mel_to_hz(hz_to_mel(f)), f, atol=1e-9)
    assert abs(float(hz_to_mel(1000.0)) - 999.98) < 0.01


def test_filterbank_triangles():
    fb = mel_filterbank(80, 512, 16000, 20.0, 8000.0)
    assert fb.shape == (80, 257)
    assert np.all(fb >= 0) and np.all(fb <= 1)
    assert np.all(fb.max(axis=1) > 0)


def test_frames_are_local():
    # A frame's features depend only on its own samples.
    rng = np.random.default_rng(0)
    x = rng.uniform(-0.3, 0.3, 16000)
    y = x.copy()
    y[8000:] = rng.uniform(-0.3, 0.3, 8000)
    Fx, Fy = fbank80(Waveform(x)), fbank80(Waveform(y))
    last_clean = (8000 - 400) // 160
    np.testing.assert_array_equal(Fx[:last_clean + 1], Fy[:last_clean + 1])
    assert not np.allclose(Fx[last_clean + 1], Fy[last_clean + 1])


def test_deltas_of_linear_ramp():
    F = np.arange(20, dtype=float)[:, None] * np.array([[1.0, -2.0]])
    d = deltas(F)
    np.testing.assert_allclose(d[2:-2], np.tile([1.0, -2.0], (16, 1)))


def test_deltas_of_constant_are_zero():
    assert np.all(deltas(np.full((7, 3), 4.2)) == 0)


def test_add_deltas_layout():
    F = np.random.default_rng(2).normal(size=(30, 80))
    out = add_deltas(F)
    assert out.shape == (30, 240)
    np.testing.assert_array_equal(out[:, :80], F)
    np.testing.assert_allclose(out[:, 160:], deltas(deltas(F)))


def test_fbank240_shape_and_shift():
    fm = fbank240(_tone(300))
    assert fm.values.shape == (98, 240)
    assert fm.frame_shift == 0.010 and fm.kind == "fbank240"


def test_cmvn_normalises_columns():
    fm = fbank240(Waveform(np.random.default_rng(5).normal(0, 0.1, 16000)), FbankConfig(normalize="cmvn"))
    np.testing.assert_allclose(fm.values.mean(axis=0), 0, atol=1e-9)
    np.testing.assert_allclose(fm.values.std(axis=0), 1, atol=1e-3)


def test_feature_file_round_trip_is_byte_exact(tmp_path):
    fm = FeatureMatrix(np.random.default_rng(0).normal(size=(37, 240)).astype(np.float32), 0.01, "fbank240")
    a, b = tmp_path / "a.sgft", tmp_path / "b.sgft"
    export_features(fm, a)
    back = read_feature_file(a)
    np.testing.assert_array_equal(back.values, fm.values)
    assert back.frame_shift == pytest.approx(0.01) and back.kind == "fbank240"
    export_features(back, b)
    assert a.read_bytes() == b.read_bytes()


def test_external_import(tmp_path):
    fm = FeatureMatrix(np.ones((5, 768), np.float32), 0.02, "external")
    export_features(fm, tmp_path / "e.sgft")
    assert import_external_features(tmp_path / "e.sgft").dim == 768
    export_features(FeatureMatrix(np.ones((5, 240), np.float32), 0.01, "fbank240"), tmp_path / "f.sgft")
    with pytest.raises(FormatError):
        import_external_features(tmp_path / "f.sgft")


def test_feature_file_corruption(tmp_path):
    fm = FeatureMatrix(np.zeros((3, 240), np.float32), 0.01, "fbank240")
    p = tmp_path / "x.sgft"
    export_features(fm, p)
    blob = p.read_bytes()
    for bad in (blob[:10], b"XXXX" + blob[4:], blob[:-4], blob[:12] + (768).to_bytes(4, "little") + blob[16:]):
        p.write_bytes(bad)
        with pytest.raises(FormatError):
            read_feature_file(p)
    nan = np.frombuffer(blob[24:], "<f4").copy()
    nan[0] = np.nan
    p.write_bytes(blob[:24] + nan.tobytes())
    with pytest.raises(FormatError):
        read_feature_file(p)


def test_fbank_kind_requires_240_columns():
    with pytest.raises(ArgumentError):
        FeatureMatrix(np.zeros((3, 80)), 0.01, "fbank240")
