"""16 kHz WAV loading and the 49x10 MFCC front end."""
from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct

SAMPLE_RATE = 16000
CLIP_SAMPLES = 16000


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE


@dataclass(frozen=True)
class MfccConfig:
    frame_ms: float = 40.0
    stride_ms: float = 20.0
    window: str = "hamming"
    n_mels: int = 40
    n_coeffs: int = 10
    fft_size: int = 1024
    f_min: float = 20.0
    f_max: float = 8000.0
    log_floor: float = 1e-10
    sample_rate: int = SAMPLE_RATE

    @property
    def frame_length(self) -> int:
        return int(round(self.sample_rate * self.frame_ms / 1000))

    @property
    def hop_length(self) -> int:
        return int(round(self.sample_rate * self.stride_ms / 1000))

    def n_frames(self, n_samples: int) -> int:
        return (n_samples - self.frame_length) // self.hop_length + 1


def load_wav(path, protocol: bool = True) -> Waveform:
    """Read 16-bit mono 16 kHz PCM.

    In protocol mode clips shorter than one second are zero-padded and
    longer ones are rejected.
    """
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono, got {wf.getnchannels()} channels")
        if wf.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit samples, got {8 * wf.getsampwidth()}-bit")
        if wf.getframerate() != SAMPLE_RATE:
            raise ValueError(f"{path}: expected sample rate {SAMPLE_RATE}, got {wf.getframerate()}")
        raw = wf.readframes(wf.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if protocol:
        samples = pad_clip(samples)
    return Waveform(samples)


def pad_clip(samples: np.ndarray) -> np.ndarray:
    if samples.shape[0] > CLIP_SAMPLES:
        raise ValueError(f"clip has {samples.shape[0]} samples, longer than {CLIP_SAMPLES}")
    if samples.shape[0] < CLIP_SAMPLES:
        samples = np.concatenate([samples, np.zeros(CLIP_SAMPLES - samples.shape[0])])
    return samples


def write_wav(path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE, channels: int = 1) -> None:
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(channels)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.tobytes())


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(cfg: MfccConfig) -> np.ndarray:
    """Triangular filters on the mel scale, shape (n_mels, fft_size//2 + 1)."""
    n_bins = cfg.fft_size // 2 + 1
    freqs = np.linspace(0.0, cfg.sample_rate / 2, n_bins)
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max), cfg.n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def _window(cfg: MfccConfig) -> np.ndarray:
    if cfg.window != "hamming":
        raise ValueError(f"unsupported window {cfg.window!r}")
    return np.hamming(cfg.frame_length)


def mfcc(w: Waveform | np.ndarray, cfg: MfccConfig = MfccConfig()) -> np.ndarray:
    samples = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    n_frames = cfg.n_frames(samples.shape[0])
    if n_frames < 1:
        raise ValueError(f"waveform of {samples.shape[0]} samples is shorter than one frame")
    idx = np.arange(cfg.frame_length)[None, :] + cfg.hop_length * np.arange(n_frames)[:, None]
    frames = samples[idx] * _window(cfg)
    power = np.abs(np.fft.rfft(frames, n=cfg.fft_size, axis=1)) ** 2
    energies = power @ mel_filterbank(cfg).T
    log_mel = np.log(np.maximum(energies, cfg.log_floor))
    coeffs = dct(log_mel, type=2, norm="ortho", axis=1)[:, :cfg.n_coeffs]
    return coeffs.astype(np.float32)
