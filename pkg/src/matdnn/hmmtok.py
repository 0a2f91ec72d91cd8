"""One acoustic tokenizer layer: unsupervised left-to-right token HMMs.

A layer is fixed by ``(m, n)``: ``m`` emitting states per token HMM and
``n`` distinct tokens. Training alternates between re-estimating the token
models from the current token labels and re-decoding the corpus with the new
models (segmental k-means), starting from a k-means labeling of fixed-length
cuts.

Labelings are ``{utt_id: segments}`` where ``segments`` is an int64 array of
rows ``(token, start, end)`` tiling ``[0, T)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.cluster import KMeans
from sklearn.utils.validation import check_is_fitted

from . import _kernels
from ._validation import check_corpus
from .corpusio import check_tiling, read_model, write_model

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-4
SELF_LOOP_RANGE = (0.05, 0.95)
INIT_SEGMENT_FRAMES = 10
LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class TokenSet:
    """``n`` left-to-right HMMs with ``m`` diagonal-Gaussian states each.

    Attributes
    ----------
    means, variances : (n, m, d) arrays
    self_loop : (n, m) array of self-transition probabilities; the remaining
        mass advances to the next state (or exits from the last one).
    """

    means: np.ndarray
    variances: np.ndarray
    self_loop: np.ndarray

    @property
    def n(self) -> int:
        return self.means.shape[0]

    @property
    def m(self) -> int:
        return self.means.shape[1]

    @property
    def dim(self) -> int:
        return self.means.shape[2]

    @property
    def layer(self) -> tuple:
        return (self.m, self.n)

    def log_emissions(self, x: np.ndarray) -> np.ndarray:
        """(T, n, m) log-likelihood of every frame under every state."""
        return gaussian_loglik(x, self.means.reshape(-1, self.dim),
                               self.variances.reshape(-1, self.dim)).reshape(len(x), self.n, self.m)

    def transitions(self) -> tuple:
        return np.log(self.self_loop), np.log1p(-self.self_loop)

    def validate(self) -> None:
        if self.n < 2:
            raise ValueError("a token set needs n >= 2 tokens")
        if not (np.all(np.isfinite(self.means)) and np.all(np.isfinite(self.variances))):
            raise ValueError("non-finite token model parameters")
        if np.any(self.variances < VARIANCE_FLOOR * (1 - 1e-12)):
            raise ValueError("variance below floor")
        lo, hi = SELF_LOOP_RANGE
        if np.any(self.self_loop < lo) or np.any(self.self_loop > hi):
            raise ValueError("self-loop probability outside clamp range")

    def save(self, path) -> None:
        write_model(path, "tokenset", {"m": self.m, "n": self.n, "dim": self.dim},
                    {"means": self.means, "variances": self.variances, "self_loop": self.self_loop})

    @classmethod
    def load(cls, path) -> "TokenSet":
        _, _, arrays = read_model(path, kind="tokenset")
        return cls(arrays["means"], arrays["variances"], arrays["self_loop"])


def gaussian_loglik(x: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """(T, K) diagonal-Gaussian log densities of T frames under K components."""
    prec = 1.0 / variances
    quad = (x * x) @ prec.T - 2.0 * x @ (means * prec).T + np.sum(means * means * prec, axis=1)
    return -0.5 * (quad + np.sum(np.log(variances), axis=1) + x.shape[1] * LOG_2PI)


# ---------------------------------------------------------------------------
# initialization

def initialize(corpus, m: int, n: int, seed: int = 0) -> dict:
    """Cut every utterance into ``max(m, 10)``-frame segments and k-means them.

    The last segment of an utterance absorbs the remainder. Segment means are
    clustered into ``n`` groups (k-means++ seeded by ``seed``, at most 50
    Lloyd iterations) and each segment takes its cluster id as token id.
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    ids, mats = check_corpus(corpus, min_frames=m)
    seg_len = max(m, INIT_SEGMENT_FRAMES)
    cuts, means = [], []
    for x in mats:
        T = len(x)
        k = max(1, T // seg_len)
        bounds = [i * seg_len for i in range(k)] + [T]
        cuts.append(bounds)
        means.extend(x[s:e].mean(axis=0) for s, e in zip(bounds[:-1], bounds[1:]))
    if len(means) < n:
        raise ValueError(f"corpus yields only {len(means)} initial segments for n={n}; "
                         f"use a smaller n")
    km = KMeans(n_clusters=n, init="k-means++", n_init=1, max_iter=50, random_state=seed)
    assign = km.fit_predict(np.asarray(means))
    labels, pos = {}, 0
    for uid, bounds in zip(ids, cuts):
        k = len(bounds) - 1
        labels[uid] = np.column_stack([assign[pos:pos + k], bounds[:-1], bounds[1:]]).astype(np.int64)
        pos += k
    return labels


# ---------------------------------------------------------------------------
# token model optimization

def _estimate(frames, states, m, occurrences, variance_floor):
    """ML state Gaussians and self-loops from state-labelled frames."""
    means, variances, loops = [], [], []
    lo, hi = SELF_LOOP_RANGE
    for s in range(m):
        pool = frames[states == s]
        means.append(pool.mean(axis=0))
        variances.append(np.maximum(pool.var(axis=0), variance_floor))
        loops.append(np.clip((len(pool) - occurrences) / len(pool), lo, hi))
    return np.array(means), np.array(variances), np.array(loops)


def _align(frames, offsets, mean, var, loop):
    """Forced-align every segment; returns (total score, concatenated states)."""
    return _kernels.align_many(gaussian_loglik(frames, mean, var), offsets,
                               np.log(loop), np.log1p(-loop))


def _fit_token(frames, offsets, m, variance_floor, n_realign, states):
    occ = len(offsets) - 1
    params = _estimate(frames, states, m, occ, variance_floor)
    for _ in range(n_realign):
        _, states = _align(frames, offsets, *params)
        params = _estimate(frames, states, m, occ, variance_floor)
    score, _ = _align(frames, offsets, *params)
    return score, params


def uniform_states(length: int, m: int) -> np.ndarray:
    """State index of each frame when ``length`` frames are split evenly over ``m`` states."""
    return (np.arange(length) * m) // length


def train_models(corpus, labels: dict, m: int, n: int, *, init_models: TokenSet | None = None,
                 variance_floor: float = VARIANCE_FLOOR, n_realign: int = 3) -> TokenSet:
    """Re-estimate ``n`` token HMMs from a labeling.

    Each token's segments start from an even split of frames over its states,
    followed by ``n_realign`` forced-realignment passes. When ``init_models``
    is given, a second start from the alignment under those models is also
    run and, per token, the start reaching the higher likelihood is kept, so
    that alternating training never lowers the corpus likelihood.

    Tokens with no segments are re-seeded from the token with the most
    segments, with means shifted by +0.1 standard deviations.
    """
    ids, mats = check_corpus(corpus, min_frames=1)
    by_token = [[] for _ in range(n)]
    for uid, x in zip(ids, mats):
        seg = np.asarray(labels[uid])
        check_tiling(seg, len(x), n, where=uid)
        for tok, s, e in seg:
            if e - s < m:
                raise ValueError(f"{uid}: segment [{s},{e}) shorter than m={m} frames")
            by_token[tok].append(x[s:e])
    d = mats[0].shape[1]
    means = np.zeros((n, m, d))
    variances = np.ones((n, m, d))
    loops = np.full((n, m), 0.5)
    for k, segs in enumerate(by_token):
        if not segs:
            continue
        frames = np.concatenate(segs)
        offsets = np.cumsum([0] + [len(x) for x in segs])
        start = np.concatenate([uniform_states(len(x), m) for x in segs])
        best_score, best = _fit_token(frames, offsets, m, variance_floor, n_realign, start)
        if init_models is not None:
            _, warm = _align(frames, offsets, init_models.means[k], init_models.variances[k],
                             init_models.self_loop[k])
            score, params = _fit_token(frames, offsets, m, variance_floor, n_realign, warm)
            if score > best_score:
                best = params
        means[k], variances[k], loops[k] = best
    counts = np.array([len(s) for s in by_token])
    donor = int(np.argmax(counts))
    for k in np.flatnonzero(counts == 0):
        logger.warning("layer (%d,%d): token %d has no segments; reseeding from token %d",
                       m, n, k, donor)
        means[k] = means[donor] + 0.1 * np.sqrt(variances[donor])
        variances[k] = variances[donor]
        loops[k] = loops[donor]
    return TokenSet(means, variances, loops)


# ---------------------------------------------------------------------------
# token label optimization

def decode(x, tokens: TokenSet) -> tuple:
    """Viterbi over a uniform loop of all tokens; returns ``(segments, log-likelihood)``."""
    x = np.asarray(getattr(x, "frames", x), dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != tokens.dim:
        raise ValueError(f"expected (T, {tokens.dim}) features, got {x.shape}")
    if len(x) < tokens.m:
        raise ValueError(f"utterance of {len(x)} frames is shorter than m={tokens.m}")
    log_self, log_adv = tokens.transitions()
    score, seg = _kernels.viterbi_token_loop(tokens.log_emissions(x), log_self, log_adv,
                                             -np.log(tokens.n))
    return seg, float(score)


def score_labeling(x, segments, tokens: TokenSet) -> float:
    """Log-likelihood of a fixed labeling with best state alignment inside segments.

    Uses the same scoring as :func:`decode`, so ``decode`` always scores at
    least as high on the same utterance.
    """
    x = np.asarray(getattr(x, "frames", x), dtype=np.float64)
    log_self, log_adv = tokens.transitions()
    total = 0.0
    for tok, s, e in np.asarray(segments):
        logb = gaussian_loglik(x[s:e], tokens.means[tok], tokens.variances[tok])
        score, _ = _kernels.align_left_to_right(logb, log_self[tok], log_adv[tok])
        total += score - np.log(tokens.n)
    return float(total)


def decode_corpus(corpus, tokens: TokenSet) -> tuple:
    ids, mats = check_corpus(corpus, dim=tokens.dim)
    labels, total = {}, 0.0
    for uid, x in zip(ids, mats):
        labels[uid], ll = decode(x, tokens)
        total += ll
    return labels, total


def labels_equal(a: dict, b: dict) -> bool:
    return a.keys() == b.keys() and all(np.array_equal(a[u], b[u]) for u in a)


def fit_layer(corpus, m: int, n: int, init: dict, max_epochs: int = 10, *,
              variance_floor: float = VARIANCE_FLOOR, n_realign: int = 3) -> tuple:
    """Alternate model and label optimization until the labels stop changing.

    Returns ``(tokens, labels, log_likelihoods)`` with one corpus
    log-likelihood per epoch.
    """
    if max_epochs < 1:
        raise ValueError("max_epochs must be >= 1")
    labels, tokens, history = init, None, []
    for epoch in range(max_epochs):
        tokens = train_models(corpus, labels, m, n, init_models=tokens,
                              variance_floor=variance_floor, n_realign=n_realign)
        new_labels, ll = decode_corpus(corpus, tokens)
        history.append(ll)
        logger.debug("layer (%d,%d) epoch %d: log-likelihood %.4f", m, n, epoch + 1, ll)
        converged = labels_equal(new_labels, labels)
        labels = new_labels
        if converged:
            break
    return tokens, labels, history


def framewise(segments, n_frames: int | None = None) -> np.ndarray:
    """Expand ``(token, start, end)`` rows into one token id per frame."""
    seg = np.asarray(segments)
    T = int(seg[-1, 2]) if n_frames is None else n_frames
    out = np.empty(T, dtype=np.int64)
    for tok, s, e in seg:
        out[s:e] = tok
    return out


def enforce_min_length(segments, min_len: int) -> np.ndarray:
    """Merge segments shorter than ``min_len`` into a neighbour.

    A short segment joins its left neighbour (or the right one at the
    utterance start); the merged span keeps the label of the longer part.
    """
    segs = [list(r) for r in np.asarray(segments)]
    i = 0
    while len(segs) > 1 and i < len(segs):
        tok, s, e = segs[i]
        if e - s >= min_len:
            i += 1
            continue
        j = i - 1 if i > 0 else i + 1
        a, b = sorted((i, j))
        left, right = segs[a], segs[b]
        keep = left[0] if left[2] - left[1] >= right[2] - right[1] else right[0]
        segs[a:b + 1] = [[keep, left[1], right[2]]]
        i = max(a, 0)
    return np.array(segs, dtype=np.int64)


# ---------------------------------------------------------------------------
# estimator

class AcousticTokenizer(BaseEstimator):
    """Unsupervised token discovery for one ``(m, n)`` layer.

    Parameters
    ----------
    n_states : int
        States per token HMM (temporal granularity ``m``).
    n_tokens : int
        Number of distinct tokens (phonetic granularity ``n``).
    max_epochs : int
        Upper bound on model/label alternations.
    seed : int
        Seed of the k-means initialization.

    Attributes
    ----------
    tokens_ : TokenSet
    labels_ : dict of utt id -> (k, 3) segments for the training corpus
    log_likelihoods_ : list of float, one per epoch
    """

    def __init__(self, n_states=3, n_tokens=50, max_epochs=10, variance_floor=VARIANCE_FLOOR,
                 n_realign=3, seed=0):
        self.n_states = n_states
        self.n_tokens = n_tokens
        self.max_epochs = max_epochs
        self.variance_floor = variance_floor
        self.n_realign = n_realign
        self.seed = seed

    def fit(self, X, y=None, init_labels=None):
        corpus = dict(zip(*check_corpus(X, min_frames=self.n_states)))
        if init_labels is None:
            init_labels = initialize(corpus, self.n_states, self.n_tokens, self.seed)
        self.tokens_, self.labels_, self.log_likelihoods_ = fit_layer(
            corpus, self.n_states, self.n_tokens, init_labels, self.max_epochs,
            variance_floor=self.variance_floor, n_realign=self.n_realign)
        self.n_features_in_ = self.tokens_.dim
        return self

    def predict(self, X):
        """Token segments ``(token, start, end)`` for each sequence."""
        check_is_fitted(self, "tokens_")
        _, mats = check_corpus(X, dim=self.tokens_.dim)
        return [decode(x, self.tokens_)[0] for x in mats]

    def transform(self, X):
        """Frame-level token ids for each sequence."""
        return [framewise(seg) for seg in self.predict(X)]

    def score(self, X, y=None):
        """Total Viterbi log-likelihood of the sequences."""
        check_is_fitted(self, "tokens_")
        _, mats = check_corpus(X, dim=self.tokens_.dim)
        return float(sum(decode(x, self.tokens_)[1] for x in mats))
