"""Log mel-filterbank features from raw waveforms.

25 ms Hann windows, 10 ms hop, magnitude spectrum, 80 triangular mel filters,
natural log with a 1e-10 floor.  Per-utterance CMVN is optional.
"""

from __future__ import annotations

import numpy as np

from ..errors import TooShort

N_MELS = 80
WINDOW_SEC = 0.025
HOP_SEC = 0.010
LOG_FLOOR = 1e-10
SUPPORTED_RATES = (16000, 22050)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filter_centers(sample_rate: int, n_mels: int = N_MELS) -> np.ndarray:
    """Center frequencies (Hz) of the triangular filters."""
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2), n_mels + 2))
    return edges[1:-1]


def _mel_filterbank(sample_rate: int, n_fft: int, n_mels: int) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2), n_mels + 2))
    fft_freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    bank = np.zeros((n_mels, fft_freqs.size))
    for m in range(n_mels):
        lo, ctr, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (fft_freqs - lo) / max(ctr - lo, 1e-12)
        falling = (hi - fft_freqs) / max(hi - ctr, 1e-12)
        bank[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return bank


def wave_to_fbank(samples, sample_rate: int, cmvn: bool = False) -> np.ndarray:
    """(frames, 80) float32 log mel features."""
    if sample_rate not in SUPPORTED_RATES:
        raise ValueError(f"sample_rate {sample_rate} not in {SUPPORTED_RATES}")
    wave = np.asarray(samples, dtype=np.float64).reshape(-1)
    win = int(round(WINDOW_SEC * sample_rate))
    hop = int(round(HOP_SEC * sample_rate))
    if wave.size < win:
        raise TooShort(f"waveform of {wave.size} samples shorter than one {win}-sample window")
    n_fft = 1 << (win - 1).bit_length()
    n_frames = 1 + (wave.size - win) // hop
    window = np.hanning(win)
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = wave[idx] * window
    spectrum = np.abs(np.fft.rfft(frames, n=n_fft, axis=1))
    bank = _mel_filterbank(sample_rate, n_fft, N_MELS)
    feats = np.log(np.maximum(spectrum @ bank.T, LOG_FLOOR))
    if cmvn:
        feats = apply_cmvn(feats)
    return feats.astype(np.float32)


def apply_cmvn(feats: np.ndarray) -> np.ndarray:
    """Per-utterance cepstral mean and variance normalization."""
    mean = feats.mean(axis=0, keepdims=True)
    std = feats.std(axis=0, keepdims=True)
    return (feats - mean) / np.maximum(std, 1e-8)
