"""MFCC front-end: 16 kHz waveform to standardized 39-channel frames, plus frame labels."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError

# Natural-log mel scale. It reproduces the reference conversion table
# (105 mel -> 68.5 Hz, 1050 -> 1080.1, 2835 -> 8000); the base-10 form with
# factor 2595 puts 8 kHz at 2840 mel instead.
MEL_FACTOR = 1125.0
MEL_BREAK_HZ = 700.0
LOG_FLOOR = 1e-10
STD_GUARD = 1e-8


@dataclass(frozen=True)
class FeatureConfig:
    preemph: float = 0.97
    frame_len: int = 400
    frame_step: int = 160
    fft_size: int = 512
    n_filters: int = 40
    n_ceps: int = 13
    sample_rate: int = 16000

    def __post_init__(self):
        for name in ("frame_len", "frame_step", "fft_size", "n_filters", "n_ceps", "sample_rate"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.frame_len > self.fft_size:
            raise ConfigError("frame_len must not exceed fft_size")
        if self.n_ceps + 1 > self.n_filters:
            raise ConfigError("n_ceps + 1 must not exceed n_filters")

    @property
    def n_bins(self):
        return self.fft_size // 2 + 1

    @property
    def n_features(self):
        return 3 * self.n_ceps


DEFAULT_CONFIG = FeatureConfig()


@dataclass
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.std = np.maximum(np.asarray(self.std, dtype=float), STD_GUARD)


def pre_emphasis(x, coeff=0.97):
    x = np.asarray(x, dtype=float)
    y = x.copy()
    y[1:] -= coeff * x[:-1]
    return y


def n_frames_for(length, cfg=DEFAULT_CONFIG):
    extra = max(0, length - cfg.frame_len)
    return 1 + -(-extra // cfg.frame_step)


def hamming(n):
    k = np.arange(n)
    return 0.53836 - 0.46164 * np.cos(2.0 * np.pi * k / (n - 1))


def frame_and_window(y, cfg=DEFAULT_CONFIG, window=True):
    """Split into overlapping frames (zero-padded tail) and apply the Hamming window."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size == 0:
        raise InputError("expected a non-empty 1-D waveform")
    n = n_frames_for(len(y), cfg)
    padded = np.zeros((n - 1) * cfg.frame_step + cfg.frame_len)
    padded[:len(y)] = y
    idx = cfg.frame_step * np.arange(n)[:, None] + np.arange(cfg.frame_len)
    frames = padded[idx]
    if window:
        frames = frames * hamming(cfg.frame_len)
    return frames


def power_spectrum(frames, cfg=DEFAULT_CONFIG):
    """``|X_k|^2 / K`` over the non-negative bins of a K-point DFT."""
    spec = np.fft.rfft(frames, n=cfg.fft_size, axis=-1)
    return (spec.real ** 2 + spec.imag ** 2) / cfg.fft_size


def hz_to_mel(f):
    return MEL_FACTOR * np.log1p(np.asarray(f, dtype=float) / MEL_BREAK_HZ)


def mel_to_hz(m):
    return MEL_BREAK_HZ * np.expm1(np.asarray(m, dtype=float) / MEL_FACTOR)


def filter_bins(cfg=DEFAULT_CONFIG):
    top = hz_to_mel(cfg.sample_rate / 2)
    mels = np.linspace(0.0, top, cfg.n_filters + 2)
    hz = mel_to_hz(mels)
    return np.floor((cfg.fft_size + 1) * hz / cfg.sample_rate).astype(int)


def mel_filterbank(cfg=DEFAULT_CONFIG):
    """(n_filters, n_bins) triangular filters with peaks at the interior mel bins."""
    b = filter_bins(cfg)
    k = np.arange(cfg.n_bins)
    fb = np.zeros((cfg.n_filters, cfg.n_bins))
    for i in range(cfg.n_filters):
        lo, mid, hi = b[i], b[i + 1], b[i + 2]
        if mid > lo:
            rise = (k >= lo) & (k < mid)
            fb[i, rise] = (k[rise] - lo) / (mid - lo)
        if hi > mid:
            fall = (k > mid) & (k <= hi)
            fb[i, fall] = (hi - k[fall]) / (hi - mid)
        fb[i, mid] = 1.0
    return fb


def dct_matrix(n):
    """Orthonormal DCT-II matrix, rows indexed by coefficient."""
    k = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    m = np.cos(np.pi * k * (2 * j + 1) / (2 * n)) * np.sqrt(2.0 / n)
    m[0] /= np.sqrt(2.0)
    return m


def log_energies(power, fbank):
    return np.log(np.maximum(power @ fbank.T, LOG_FLOOR))


def mfcc(power, cfg=DEFAULT_CONFIG, fbank=None):
    """Cepstral coefficients 1..n_ceps of the log mel energies."""
    if fbank is None:
        fbank = mel_filterbank(cfg)
    s = log_energies(power, fbank)
    c = s @ dct_matrix(cfg.n_filters).T
    return c[:, 1:cfg.n_ceps + 1]


def delta(c):
    c = np.asarray(c, dtype=float)
    ahead = np.concatenate([c[1:], c[-1:]], axis=0)
    behind = np.concatenate([c[:1], c[:-1]], axis=0)
    return (ahead - behind) / 2.0


def deltas(c):
    d = delta(c)
    return np.concatenate([c, d, delta(d)], axis=1)


def compute_stats(feature_list):
    stacked = np.concatenate([np.asarray(f, dtype=float) for f in feature_list], axis=0)
    if stacked.size == 0:
        raise InputError("no frames to compute statistics from")
    return ChannelStats(stacked.mean(axis=0), stacked.std(axis=0))


def standardize(features, stats):
    return (np.asarray(features, dtype=float) - stats.mean) / stats.std


def raw_features(samples, cfg=DEFAULT_CONFIG, fbank=None):
    """Unstandardized (T, 3 * n_ceps) features of one waveform."""
    y = pre_emphasis(samples, cfg.preemph)
    power = power_spectrum(frame_and_window(y, cfg), cfg)
    return deltas(mfcc(power, cfg, fbank))


def align_targets(intervals, n_frames, cfg=DEFAULT_CONFIG, phone_map=None):
    """Label each frame with the phone whose half-open interval holds its center sample.

    ``intervals`` are objects with ``start``, ``end`` and ``phone``; frame
    centers past the last phone take the last phone's label.
    """
    if not intervals:
        raise InputError("no phone intervals")
    starts = np.array([iv.start for iv in intervals])
    ends = np.array([iv.end for iv in intervals])
    if phone_map is None:
        codes = np.arange(len(intervals))
    else:
        codes = np.array([phone_map[iv.phone] for iv in intervals])
    centers = cfg.frame_step * np.arange(n_frames) + cfg.frame_len // 2
    labels = np.empty(n_frames, dtype=np.int64)
    for i, c in enumerate(centers):
        hit = np.flatnonzero((starts <= c) & (c < ends))
        if hit.size:
            labels[i] = codes[hit[0]]
        elif c >= ends.max():
            labels[i] = codes[-1]
        else:
            # gap in the transcript: nearest preceding phone
            before = np.flatnonzero(starts <= c)
            labels[i] = codes[before[-1]] if before.size else codes[0]
    return labels
