import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fskws import dsp


def reference_mfcc(x, sr=16000, frame=640, hop=320, nfft=1024, n_mels=40, n_coeffs=10, fmin=20.0, fmax=8000.0):
    """Straight-line MFCC: explicit DFT sums, triangle filters built bin by
    bin and the orthonormal DCT-II written out.  Shares no code with dsp."""
    n_frames = (len(x) - frame) // hop + 1
    win = [0.54 - 0.46 * math.cos(2 * math.pi * n / (frame - 1)) for n in range(frame)]
    n_bins = nfft // 2 + 1
    k = np.arange(n_bins)[:, None]
    n = np.arange(frame)[None, :]
    cos_tab = np.cos(2 * np.pi * k * n / nfft)
    sin_tab = np.sin(2 * np.pi * k * n / nfft)

    def mel(f):
        return 2595.0 * math.log10(1.0 + f / 700.0)

    def hz(m):
        return 700.0 * (10 ** (m / 2595.0) - 1.0)

    lo, hi = mel(fmin), mel(fmax)
    pts = [hz(lo + (hi - lo) * i / (n_mels + 1)) for i in range(n_mels + 2)]
    bank = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        a, c, b = pts[m], pts[m + 1], pts[m + 2]
        for j in range(n_bins):
            f = j * sr / nfft
            if a < f <= c:
                bank[m, j] = (f - a) / (c - a)
            elif c < f < b:
                bank[m, j] = (b - f) / (b - c)

    out = np.zeros((n_frames, n_coeffs))
    for t in range(n_frames):
        seg = np.array([x[t * hop + i] * win[i] for i in range(frame)])
        re = cos_tab @ seg
        im = sin_tab @ seg
        power = re * re + im * im
        logs = [math.log(max(float(bank[m] @ power), 1e-10)) for m in range(n_mels)]
        for q in range(n_coeffs):
            s = sum(logs[m] * math.cos(math.pi * q * (2 * m + 1) / (2 * n_mels)) for m in range(n_mels))
            out[t, q] = s * math.sqrt((1 if q == 0 else 2) / n_mels)
    return out


def speechlike(seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(16000) / 16000
    x = sum(rng.uniform(0.05, 0.2) * np.sin(2 * np.pi * f * t + rng.uniform(0, 6)) for f in (180, 420, 900, 2300))
    x = x * (0.6 + 0.4 * np.sin(2 * np.pi * 3 * t))
    return x + 0.01 * rng.normal(size=16000)


def test_frame_count_is_49():
    assert dsp.MfccConfig().n_frames(16000) == 49
    assert dsp.MfccConfig().frame_length == 640 and dsp.MfccConfig().hop_length == 320


def test_unit_sine_matches_straight_line_reference():
    x = np.sin(2 * np.pi * 1000 * np.arange(16000) / 16000)
    ours = dsp.mfcc(x)
    ref = reference_mfcc(x)
    assert ours.shape == (49, 10)
    assert np.max(np.abs(ours - ref)) <= 1e-3


def test_speechlike_matches_reference():
    x = speechlike(3)
    assert np.max(np.abs(dsp.mfcc(x) - reference_mfcc(x))) <= 1e-3


def test_zero_waveform_gives_constant_log_floor_cepstrum():
    out = dsp.mfcc(np.zeros(16000))
    assert np.all(out == out[0])
    np.testing.assert_allclose(out[:, 0], math.log(1e-10) * math.sqrt(40), rtol=1e-6)
    np.testing.assert_array_equal(out[:, 1:], 0.0)


def test_gain_changes_only_coefficient_zero():
    x = speechlike()
    a, b = dsp.mfcc(x).astype(np.float64), dsp.mfcc(2 * x).astype(np.float64)
    np.testing.assert_allclose(b[:, 1:], a[:, 1:], atol=1e-4)
    np.testing.assert_allclose(b[:, 0] - a[:, 0], math.log(4) * math.sqrt(40), rtol=1e-4)


def test_deterministic_bytes():
    x = speechlike(1)
    assert dsp.mfcc(x).tobytes() == dsp.mfcc(x.copy()).tobytes()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 1.0))
def test_any_one_second_input_is_49x10(seed, amp):
    x = np.random.default_rng(seed).uniform(-1, 1, 16000) * amp
    out = dsp.mfcc(x)
    assert out.shape == (49, 10) and out.dtype == np.float32 and np.all(np.isfinite(out))


def test_filterbank_shape_and_support():
    bank = dsp.mel_filterbank(dsp.MfccConfig())
    assert bank.shape == (40, 513)
    assert np.all(bank >= 0) and np.all(bank.max(axis=1) > 0.5)


def test_wav_roundtrip_and_padding(tmp_path):
    p = tmp_path / "a.wav"
    dsp.write_wav(p, np.zeros(16000))
    w = dsp.load_wav(p)
    assert w.sample_rate == 16000 and w.samples.shape == (16000,) and not w.samples.any()
    dsp.write_wav(p, np.full(12000, 0.5))
    w = dsp.load_wav(p)
    assert w.samples.shape == (16000,)
    np.testing.assert_array_equal(w.samples[12000:], 0.0)
    assert w.samples[0] == 16384 / 32768


def test_wav_contract_errors(tmp_path):
    p = tmp_path / "s.wav"
    dsp.write_wav(p, np.zeros(3200), channels=2)
    with pytest.raises(ValueError, match="expected mono"):
        dsp.load_wav(p)
    dsp.write_wav(p, np.zeros(16000), sample_rate=8000)
    with pytest.raises(ValueError, match="sample rate"):
        dsp.load_wav(p)
    dsp.write_wav(p, np.zeros(17000))
    with pytest.raises(ValueError, match="longer"):
        dsp.load_wav(p)
    assert dsp.load_wav(p, protocol=False).samples.shape == (17000,)


def test_wav_rejects_8bit(tmp_path):
    import wave
    p = tmp_path / "b.wav"
    with wave.open(str(p), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(1)
        wf.setframerate(16000)
        wf.writeframes(bytes(100))
    with pytest.raises(ValueError, match="16-bit"):
        dsp.load_wav(p)
