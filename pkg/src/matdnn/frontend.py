"""Acoustic front end: 39-dim MFCC, per-utterance CMVN, context stacking."""

from __future__ import annotations

import wave

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import as_matrix, check_corpus
from .corpusio import FeatureSequence

__all__ = [
    "FeatureSequence", "read_wav", "mfcc39", "cmvn", "stack", "stack_corpus",
    "concat_features", "MFCC", "CMVN", "ContextStacker",
]

VARIANCE_FLOOR = 1e-8


def read_wav(path) -> tuple:
    """Read a 16-bit mono PCM WAV file; returns ``(samples int16, sample_rate)``."""
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise ValueError(f"{path}: only 16-bit mono PCM is supported")
        rate = w.getframerate()
        data = w.readframes(w.getnframes())
    return np.frombuffer(data, dtype="<i2").copy(), rate


def write_wav(path, samples, sample_rate: int) -> None:
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(np.asarray(samples, dtype="<i2").tobytes())


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_filters: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular filters equally spaced on the mel scale over [0, Nyquist].

    Weights are evaluated at the FFT bin centre frequencies.
    """
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_filters + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def deltas(feats: np.ndarray, window: int = 2) -> np.ndarray:
    """Regression deltas over +-``window`` frames with edge replication."""
    T = len(feats)
    padded = np.pad(feats, ((window, window), (0, 0)), mode="edge")
    num = np.zeros_like(feats)
    for k in range(1, window + 1):
        num += k * (padded[window + k:window + k + T] - padded[window - k:window - k + T])
    return num / (2.0 * sum(k * k for k in range(1, window + 1)))


def n_frames_for(n_samples: int, sample_rate: int, win_ms: float = 25.0, shift_ms: float = 10.0) -> int:
    win = int(round(sample_rate * win_ms / 1000.0))
    shift = int(round(sample_rate * shift_ms / 1000.0))
    return (n_samples - win) // shift + 1


def mfcc39(pcm, sample_rate: int = 16000, *, win_ms: float = 25.0, shift_ms: float = 10.0,
           preemphasis: float = 0.97, n_filters: int = 26, n_ceps: int = 12,
           lifter: int = 22, delta_window: int = 2, dither: float = 0.0,
           seed: int = 0, utt_id: str = "") -> FeatureSequence:
    """12 cepstra + log energy, with deltas and double deltas (39 dims).

    Parameters
    ----------
    pcm : array of int16 (or float) samples, mono.
    dither : standard deviation of Gaussian dither added before analysis,
        drawn from ``seed``.

    Energy is the log of the pre-emphasised, unwindowed frame energy.
    Cepstra are the liftered orthonormal DCT-II of the log mel energies,
    with c0 dropped.
    """
    if sample_rate < 8000:
        raise ValueError(f"sample rate must be >= 8000 Hz, got {sample_rate}")
    x = np.asarray(pcm, dtype=np.float64).ravel()
    win = int(round(sample_rate * win_ms / 1000.0))
    shift = int(round(sample_rate * shift_ms / 1000.0))
    if len(x) < win:
        raise ValueError(f"audio has {len(x)} samples, shorter than one {win}-sample window")
    if dither > 0:
        x = x + dither * np.random.default_rng(seed).standard_normal(len(x))
    x = np.append(x[0], x[1:] - preemphasis * x[:-1])

    T = (len(x) - win) // shift + 1
    idx = np.arange(win)[None, :] + shift * np.arange(T)[:, None]
    frames = x[idx]
    tiny = np.finfo(np.float64).eps
    log_energy = np.log(np.maximum(np.sum(frames ** 2, axis=1), tiny))

    n_fft = 1 << (win - 1).bit_length()
    spec = np.abs(np.fft.rfft(frames * np.hamming(win), n_fft)) ** 2
    fbank = np.log(np.maximum(spec @ mel_filterbank(n_filters, n_fft, sample_rate).T, tiny))

    # orthonormal DCT-II, coefficients 1..n_ceps
    k = np.arange(1, n_ceps + 1)[:, None]
    j = np.arange(n_filters)[None, :]
    dct = np.sqrt(2.0 / n_filters) * np.cos(np.pi * k * (2 * j + 1) / (2 * n_filters))
    ceps = fbank @ dct.T
    if lifter > 0:
        ceps *= 1.0 + (lifter / 2.0) * np.sin(np.pi * np.arange(1, n_ceps + 1) / lifter)

    static = np.column_stack([ceps, log_energy])
    d1 = deltas(static, delta_window)
    d2 = deltas(d1, delta_window)
    return FeatureSequence(np.hstack([static, d1, d2]), int(round(shift_ms)), utt_id)


def cmvn(seq) -> FeatureSequence:
    """Per-utterance, per-dimension mean and variance normalization.

    Dimensions with variance below the floor are treated as constant and map
    to zero, which keeps the transform idempotent.
    """
    src = seq if isinstance(seq, FeatureSequence) else FeatureSequence(seq)
    x = as_matrix(src.frames, min_frames=2, name=src.utt_id or "sequence")
    var = x.var(axis=0)
    out = (x - x.mean(axis=0)) / np.sqrt(np.maximum(var, VARIANCE_FLOOR))
    out[:, var < VARIANCE_FLOOR] = 0.0
    return FeatureSequence(out, src.frame_period, src.utt_id)


def stack(seq, context: int = 4, aux=None) -> FeatureSequence:
    """Splice +-``context`` frames (edge clamped) and append a per-utterance vector."""
    if context < 0:
        raise ValueError("context must be >= 0")
    src = seq if isinstance(seq, FeatureSequence) else FeatureSequence(seq)
    x = np.asarray(src.frames, dtype=np.float64)
    T = len(x)
    offsets = np.arange(-context, context + 1)
    idx = np.clip(np.arange(T)[:, None] + offsets[None, :], 0, T - 1)
    out = x[idx].reshape(T, -1)
    if aux is not None:
        aux = np.asarray(aux, dtype=np.float64).ravel()
        out = np.hstack([out, np.broadcast_to(aux, (T, len(aux)))])
    return FeatureSequence(out, src.frame_period, src.utt_id)


def stack_corpus(corpus: dict, context: int = 4, aux: dict | None = None) -> dict:
    """:func:`stack` over ``{utt: seq}``; auxiliary vectors must share one width."""
    widths = {len(np.ravel(v)) for v in (aux or {}).values()}
    if len(widths) > 1:
        raise ValueError(f"auxiliary vector dimension differs across the corpus: {sorted(widths)}")
    if aux is not None and set(aux) != set(corpus):
        missing = sorted(set(corpus) - set(aux))
        raise ValueError(f"missing auxiliary vectors for {missing[:5]}")
    return {u: stack(s, context, None if aux is None else aux[u]) for u, s in corpus.items()}


def concat_features(a, b) -> FeatureSequence:
    """Frame-wise concatenation; ``b`` may be None or zero-width."""
    a = a if isinstance(a, FeatureSequence) else FeatureSequence(a)
    if b is None:
        return a
    b = b if isinstance(b, FeatureSequence) else FeatureSequence(b)
    if b.frames.size == 0:
        return a
    if a.n_frames != b.n_frames:
        raise ValueError(f"frame count mismatch: {a.n_frames} vs {b.n_frames}")
    if a.frame_period != b.frame_period:
        raise ValueError(f"frame period mismatch: {a.frame_period} vs {b.frame_period}")
    return FeatureSequence(np.hstack([a.frames, b.frames]), a.frame_period, a.utt_id)


# ---------------------------------------------------------------------------
# estimator wrappers

class MFCC(TransformerMixin, BaseEstimator):
    """Transform a list of ``(pcm, sample_rate)`` pairs into 39-dim MFCC sequences."""

    def __init__(self, preemphasis=0.97, n_filters=26, lifter=22, dither=0.0, seed=0):
        self.preemphasis = preemphasis
        self.n_filters = n_filters
        self.lifter = lifter
        self.dither = dither
        self.seed = seed

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return [mfcc39(pcm, rate, preemphasis=self.preemphasis, n_filters=self.n_filters,
                       lifter=self.lifter, dither=self.dither, seed=self.seed).frames
                for pcm, rate in X]


class CMVN(TransformerMixin, BaseEstimator):
    """Stateless per-utterance normalization."""

    def fit(self, X, y=None):
        check_corpus(X, min_frames=2)
        return self

    def transform(self, X):
        _, mats = check_corpus(X, min_frames=2)
        return [cmvn(m).frames for m in mats]


class ContextStacker(TransformerMixin, BaseEstimator):
    def __init__(self, context=4):
        self.context = context

    def fit(self, X, y=None):
        _, mats = check_corpus(X)
        self.n_features_in_ = mats[0].shape[1]
        return self

    def transform(self, X):
        _, mats = check_corpus(X, dim=getattr(self, "n_features_in_", None))
        return [stack(m, self.context).frames for m in mats]
