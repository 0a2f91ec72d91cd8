"""Mutual reinforcement across tokenizer layers.

Two steps: boundary fusion turns the per-layer segmentations into one joint
segmentation, and LDA over bags of cross-layer tokens gives every fused
segment a new token label, which becomes the starting labeling for
retraining the layers.

Boundary positions are frame indices ``j`` in ``1..T-1``; position ``j``
sits between frames ``j-1`` and ``j``. Boundary vectors have length ``T+1``
with entries 0 and T always zero.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import _kernels
from .corpusio import read_model, write_model

logger = logging.getLogger(__name__)

SMOOTHING_KERNEL = (0.25, 0.5, 0.25)


@dataclass
class FusionConfig:
    """Constants of the peak picking on the joint boundary function."""

    kernel: tuple = SMOOTHING_KERNEL
    threshold: float = 1.0      # peaks need B(j) >= threshold * mean(B)
    min_gap: int = 3            # surviving peaks are at least this far apart
    min_segment: int = 3        # ... and at least this far from utterance edges


def boundary_function(segments, n_frames: int) -> np.ndarray:
    """Binary vector of length ``T+1``: 1 where a segment ends inside the utterance."""
    b = np.zeros(n_frames + 1)
    ends = np.asarray(segments)[:, 2]
    b[ends[ends < n_frames]] = 1.0
    return b


def default_weights(layers) -> np.ndarray:
    """Layer weights proportional to the number of HMM states ``m``."""
    m = np.array([layer[0] for layer in layers], dtype=np.float64)
    return m / m.sum()


def joint_boundary(labelings: dict, utt: str, n_frames: int, weights=None) -> np.ndarray:
    """Weighted average of the layers' boundary functions for one utterance."""
    layers = list(labelings)
    w = default_weights(layers) if weights is None else np.asarray(weights, dtype=np.float64)
    if len(w) != len(layers) or np.any(w <= 0):
        raise ValueError("need one positive weight per layer")
    B = np.zeros(n_frames + 1)
    for wk, layer in zip(w, layers):
        B += wk * boundary_function(labelings[layer][utt], n_frames)
    return B / w.sum()


def pick_peaks(B: np.ndarray, config: FusionConfig | None = None) -> np.ndarray:
    """Select boundary positions from a joint boundary function of length ``T+1``.

    The function is smoothed, and a position survives when the discrete
    second difference there is negative, it is a local maximum, and it
    reaches ``threshold`` times the mean over interior positions. Peaks
    closer than ``min_gap`` are merged keeping the larger value (lower
    position on ties); peaks within ``min_segment`` of an edge are dropped.
    """
    cfg = config or FusionConfig()
    T = len(B) - 1
    if T < 2:
        return np.zeros(0, dtype=np.int64)
    kernel = np.asarray(cfg.kernel, dtype=np.float64)
    S = np.convolve(np.pad(B, len(kernel) // 2), kernel, mode="valid")
    S[0] = S[T] = 0.0
    interior = S[1:T]
    mean = interior.mean()
    j = np.arange(1, T)
    second = S[j - 1] - 2 * S[j] + S[j + 1]
    is_max = (S[j] >= S[j - 1]) & (S[j] >= S[j + 1])
    ok = (second < 0) & is_max & (S[j] >= cfg.threshold * mean) & (S[j] > 0)
    ok &= (j >= cfg.min_segment) & (j <= T - cfg.min_segment)
    cand = j[ok]
    order = sorted(cand, key=lambda p: (-S[p], p))
    kept: list = []
    for p in order:
        if all(abs(p - q) >= cfg.min_gap for q in kept):
            kept.append(p)
    return np.array(sorted(kept), dtype=np.int64)


def fuse_boundaries(labelings: dict, frame_counts: dict, weights=None,
                    config: FusionConfig | None = None) -> dict:
    """Joint segmentation ``{utt: (k, 2) [start, end) rows}`` from per-layer labelings.

    ``labelings`` maps each layer ``(m, n)`` to ``{utt: segments}``. A single
    layer is passed through unchanged (with a warning).
    """
    layers = list(labelings)
    if not layers:
        raise ValueError("no layers to fuse")
    if len(layers) == 1:
        logger.warning("boundary fusion over a single layer returns its own segmentation")
        only = labelings[layers[0]]
        return {u: np.asarray(only[u])[:, 1:].copy() for u in frame_counts}
    out = {}
    for utt, T in frame_counts.items():
        peaks = pick_peaks(joint_boundary(labelings, utt, T, weights), config)
        edges = np.concatenate([[0], peaks, [T]])
        out[utt] = np.column_stack([edges[:-1], edges[1:]]).astype(np.int64)
    return out


# ---------------------------------------------------------------------------
# LDA

@dataclass
class Vocabulary:
    """Bijection between ``(layer, token id)`` pairs and word indices."""

    layers: list
    offsets: list = field(init=False)

    def __post_init__(self):
        self.layers = [tuple(layer) for layer in self.layers]
        sizes = [layer[1] for layer in self.layers]
        self.offsets = list(np.cumsum([0] + sizes[:-1]))

    def __len__(self):
        return int(sum(layer[1] for layer in self.layers))

    def index(self, layer, token: int) -> int:
        return int(self.offsets[self.layers.index(tuple(layer))] + token)

    def word(self, index: int) -> tuple:
        k = int(np.searchsorted(self.offsets, index, side="right")) - 1
        return self.layers[k], int(index - self.offsets[k])


def segment_documents(segmentation: dict, labelings: dict, vocab: Vocabulary) -> tuple:
    """One bag of words per fused segment.

    A token segment of any layer contributes one word to every fused segment
    it overlaps. Returns ``(keys, docs)`` with keys ``(utt, start, end)``.
    """
    keys, docs = [], []
    for utt, spans in segmentation.items():
        per_layer = [(layer, np.asarray(labelings[layer][utt])) for layer in vocab.layers]
        for s, e in spans:
            words = []
            for layer, seg in per_layer:
                hit = (seg[:, 1] < e) & (seg[:, 2] > s)
                words.extend(vocab.index(layer, t) for t in seg[hit, 0])
            keys.append((utt, int(s), int(e)))
            docs.append(words)
    return keys, docs


class LdaGibbs(BaseEstimator):
    """Latent Dirichlet allocation by collapsed Gibbs sampling.

    Parameters
    ----------
    n_topics : int
    alpha : float or None
        Symmetric document-topic prior; ``None`` means ``50 / n_topics``.
    beta : float
        Symmetric topic-word prior.
    sweeps : int
        Full passes over all word tokens.
    seed : int

    Attributes
    ----------
    topic_word_ : (K, V) int counts
    doc_topic_ : (D, K) int counts
    """

    def __init__(self, n_topics=10, alpha=None, beta=0.01, sweeps=200, seed=0):
        self.n_topics = n_topics
        self.alpha = alpha
        self.beta = beta
        self.sweeps = sweeps
        self.seed = seed

    @property
    def alpha_(self) -> float:
        return 50.0 / self.n_topics if self.alpha is None else float(self.alpha)

    def fit(self, docs, y=None, vocab_size: int | None = None):
        if self.n_topics < 2:
            raise ValueError("LDA needs at least 2 topics")
        for i, doc in enumerate(docs):
            if len(doc) == 0:
                raise ValueError(f"document {i} is empty")
        words = np.concatenate([np.asarray(d, dtype=np.int64) for d in docs])
        doc_ids = np.repeat(np.arange(len(docs)), [len(d) for d in docs])
        V = int(words.max()) + 1 if vocab_size is None else int(vocab_size)
        K = self.n_topics
        rng = np.random.default_rng(self.seed)
        z = rng.integers(0, K, size=len(words)).astype(np.int64)
        ndk = np.zeros((len(docs), K), dtype=np.int64)
        nkw = np.zeros((K, V), dtype=np.int64)
        np.add.at(ndk, (doc_ids, z), 1)
        np.add.at(nkw, (z, words), 1)
        nk = nkw.sum(axis=1)
        uniforms = rng.random((self.sweeps, len(words)))
        _kernels.gibbs_sweeps(words, doc_ids, z, ndk, nkw, nk, self.alpha_, float(self.beta), uniforms)
        self.topic_word_, self.doc_topic_, self.assignments_ = nkw, ndk, z
        self.vocab_size_ = V
        return self

    def topic_word_distribution(self) -> np.ndarray:
        check_is_fitted(self, "topic_word_")
        phi = self.topic_word_ + self.beta
        return phi / phi.sum(axis=1, keepdims=True)

    def doc_topic_distribution(self) -> np.ndarray:
        check_is_fitted(self, "doc_topic_")
        theta = self.doc_topic_ + self.alpha_
        return theta / theta.sum(axis=1, keepdims=True)

    def dominant_topics(self) -> np.ndarray:
        """Most probable topic of each training document (lowest id on ties)."""
        return np.argmax(self.doc_topic_distribution(), axis=1)

    def transform(self, docs, sweeps: int = 50):
        """Fold-in topic distributions for new documents with the topics held fixed."""
        check_is_fitted(self, "topic_word_")
        phi = self.topic_word_distribution()
        rng = np.random.default_rng(self.seed + 1)
        K = self.n_topics
        out = np.empty((len(docs), K))
        for i, doc in enumerate(docs):
            w = np.asarray(doc, dtype=np.int64)
            z = rng.integers(0, K, size=len(w))
            counts = np.bincount(z, minlength=K).astype(np.float64)
            for _ in range(sweeps):
                for t in range(len(w)):
                    counts[z[t]] -= 1
                    p = (counts + self.alpha_) * phi[:, w[t]]
                    z[t] = min(int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right")), K - 1)
                    counts[z[t]] += 1
            out[i] = (counts + self.alpha_) / (len(w) + K * self.alpha_)
        return out

    def predict(self, docs):
        return np.argmax(self.transform(docs), axis=1)

    def save(self, path) -> None:
        check_is_fitted(self, "topic_word_")
        write_model(path, "lda", {"alpha": self.alpha_, "beta": self.beta, "n_topics": self.n_topics,
                                  "sweeps": self.sweeps, "seed": self.seed},
                    {"topic_word": self.topic_word_, "doc_topic": self.doc_topic_})

    @classmethod
    def load(cls, path) -> "LdaGibbs":
        _, meta, arrays = read_model(path, kind="lda")
        lda = cls(meta["n_topics"], meta["alpha"], meta["beta"], meta["sweeps"], meta["seed"])
        lda.topic_word_, lda.doc_topic_ = arrays["topic_word"], arrays["doc_topic"]
        lda.vocab_size_ = lda.topic_word_.shape[1]
        return lda


def lda_fit(docs, n_topics: int, alpha=None, beta: float = 0.01, seed: int = 0,
            sweeps: int = 200, vocab_size: int | None = None) -> LdaGibbs:
    return LdaGibbs(n_topics, alpha, beta, sweeps, seed).fit(docs, vocab_size=vocab_size)


def relabel(segmentation: dict, labelings: dict, *, sweeps: int = 200, seed: int = 0,
            beta: float = 0.01) -> tuple:
    """New initial labelings from LDA topics over the fused segments.

    One LDA with ``K = n`` topics is fitted for every distinct ``n`` among the
    layers; each fused segment takes its most probable topic as token id.
    Returns ``({n: {utt: segments}}, {n: LdaGibbs})``.
    """
    vocab = Vocabulary(list(labelings))
    keys, docs = segment_documents(segmentation, labelings, vocab)
    for key, doc in zip(keys, docs):
        if not doc:
            raise ValueError(f"fused segment {key} overlaps no tokens")
    by_n, models = {}, {}
    for n in sorted({layer[1] for layer in vocab.layers}):
        lda = lda_fit(docs, n, beta=beta, seed=seed + n, sweeps=sweeps, vocab_size=len(vocab))
        topics = lda.dominant_topics()
        rows: dict = {}
        for (utt, s, e), k in zip(keys, topics):
            rows.setdefault(utt, []).append((int(k), s, e))
        by_n[n] = {u: np.array(r, dtype=np.int64) for u, r in rows.items()}
        models[n] = lda
    return by_n, models
