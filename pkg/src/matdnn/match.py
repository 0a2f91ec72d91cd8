"""Token distances, token/feature DTW and query-by-example search.

DTW here uses the steps (i-1, j), (i, j-1), (i-1, j-1), each adding the local
cost of the cell entered. The default distance is the minimum over paths of
the *mean* local cost along the path, which makes documents of different
lengths comparable; ``normalize=False`` gives the plain minimum path sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from . import _kernels
from .hmmtok import TokenSet


def gaussian_kl(mu1, var1, mu2, var2) -> float:
    """KL(N1 || N2) for diagonal Gaussians."""
    mu1, var1, mu2, var2 = (np.asarray(a, dtype=np.float64) for a in (mu1, var1, mu2, var2))
    return float(0.5 * np.sum(np.log(var2 / var1) + (var1 + (mu1 - mu2) ** 2) / var2 - 1.0))


def kl_matrix(tokens: TokenSet) -> np.ndarray:
    """Symmetric KL between token HMMs, summed over index-aligned states.

    With one Gaussian per state the variational approximation is exact, and
    the log-determinant terms of the two directions cancel.
    """
    mu, var = tokens.means, tokens.variances
    n = tokens.n
    S = np.zeros((n, n))
    for i in range(n):
        ratio = var[i][None] / var + var / var[i][None]
        diff2 = (mu[i][None] - mu) ** 2
        S[i] = 0.5 * np.sum(ratio - 2.0 + diff2 * (1.0 / var[i][None] + 1.0 / var), axis=(1, 2))
    S = 0.5 * (S + S.T)
    np.fill_diagonal(S, 0.0)
    return S


def _dtw(cost, subsequence, normalize):
    if cost.shape[0] == 0 or cost.shape[1] == 0:
        raise ValueError("DTW needs non-empty sequences")
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if normalize:
        return float(_kernels.dtw_min_mean(cost, subsequence))
    return float(_kernels.dtw_min_sum(cost, subsequence))


def matching_matrix(doc, query, S) -> np.ndarray:
    """W(i, j) = S(doc_i, query_j)."""
    doc = np.asarray(doc, dtype=np.int64)
    query = np.asarray(query, dtype=np.int64)
    return np.asarray(S)[np.ix_(doc, query)]


def token_dtw(doc, query, S, normalize: bool = True) -> float:
    """Distance between token sequences; the query must align fully, the document need not."""
    if len(doc) == 0 or len(query) == 0:
        raise ValueError("token DTW needs non-empty sequences")
    return _dtw(matching_matrix(doc, query, S), True, normalize)


def frame_distances(a: np.ndarray, b: np.ndarray, metric: str = "euclidean") -> np.ndarray:
    """(len a, len b) frame distance matrix; identical frames give exactly 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if metric == "euclidean":
        return cdist(a, b, "euclidean")
    if metric == "cosine":
        na = np.linalg.norm(a, axis=1)[:, None]
        nb = np.linalg.norm(b, axis=1)[:, None]
        ua = np.divide(a, na, out=np.zeros_like(a), where=na > 0)
        ub = np.divide(b, nb, out=np.zeros_like(b), where=nb > 0)
        # 1 - cos(u, v) = |u - v|^2 / 2 for unit vectors
        dist = 0.5 * cdist(ua, ub, "sqeuclidean")
        # zero vectors: identical if both zero, maximally unlike a non-zero vector
        za, zb = na == 0, (nb == 0).T
        return np.where(za & zb, 0.0, np.where(za ^ zb, 1.0, dist))
    raise ValueError(f"unknown metric {metric!r}")


def feature_dtw(a, b, metric: str = "euclidean", *, subsequence: bool = False,
                normalize: bool = True) -> float:
    """DTW distance between frame sequences (``a`` is the document axis)."""
    a = np.asarray(getattr(a, "frames", a))
    b = np.asarray(getattr(b, "frames", b))
    return _dtw(frame_distances(a, b, metric), subsequence, normalize)


# ---------------------------------------------------------------------------
# search

@dataclass
class SearchResult:
    query_id: str
    ranking: list                      # [(doc id, distance)] ascending
    streams: dict = field(default_factory=dict)   # stream name -> {doc id: raw distance}


@dataclass
class TokenLayer:
    """One tokenizer layer's view of the archive: distance matrix and decodings."""

    S: np.ndarray
    queries: dict      # query id -> token id sequence
    docs: dict         # doc id -> token id sequence


@dataclass
class FeatureStream:
    queries: dict      # query id -> (T, d) features
    docs: dict
    metric: str = "euclidean"


def token_distances(layer: TokenLayer, query_ids, doc_ids, normalize=True) -> np.ndarray:
    missing = [q for q in query_ids if q not in layer.queries] + [d for d in doc_ids if d not in layer.docs]
    if missing:
        raise ValueError(f"token layer does not cover {missing[:5]}")
    return np.array([[token_dtw(layer.docs[d], layer.queries[q], layer.S, normalize)
                      for d in doc_ids] for q in query_ids])


def feature_distances(stream: FeatureStream, query_ids, doc_ids, normalize=True) -> np.ndarray:
    return np.array([[feature_dtw(stream.docs[d], stream.queries[q], stream.metric,
                                  subsequence=True, normalize=normalize)
                      for d in doc_ids] for q in query_ids])


def znorm(D: np.ndarray) -> np.ndarray:
    """Standardize each query's row over documents (constant rows become zero)."""
    mu = D.mean(axis=1, keepdims=True)
    sd = D.std(axis=1, keepdims=True)
    return np.where(sd > 0, (D - mu) / np.where(sd > 0, sd, 1.0), 0.0)


def stream_distances(query_ids, doc_ids, collections=None, features=None, normalize=True) -> dict:
    """Raw (Q, D) distance matrix per stream.

    A token collection (a list of :class:`TokenLayer`) yields the mean of its
    layers' token-DTW matrices; each feature stream yields its feature-DTW
    matrix.
    """
    out = {}
    for name, layers in (collections or {}).items():
        if not layers:
            raise ValueError(f"collection {name!r} has no layers")
        out[name] = np.mean([token_distances(l, query_ids, doc_ids, normalize) for l in layers], axis=0)
    for name, stream in (features or {}).items():
        out[name] = feature_distances(stream, query_ids, doc_ids, normalize)
    return out


def combine(streams: dict, mode: str = "fused", z_normalize: bool = True,
            token_names=None, feature_names=None) -> np.ndarray:
    """Combine stream matrices into one (Q, D) matrix.

    ``token`` and ``feature`` modes average the raw distances of their
    streams; ``fused`` averages every stream after per-query
    z-normalization (or raw, with ``z_normalize=False``).
    """
    if mode == "token":
        names = list(token_names or [])
    elif mode == "feature":
        names = list(feature_names or [])
    elif mode == "fused":
        names = list(streams)
    else:
        raise ValueError(f"unknown search mode {mode!r}")
    if not names:
        raise ValueError(f"no streams available for mode {mode!r}")
    mats = [streams[n] for n in names]
    if mode == "fused" and z_normalize:
        mats = [znorm(m) for m in mats]
    return np.mean(mats, axis=0)


def rank(query_ids, doc_ids, D: np.ndarray, streams: dict | None = None) -> list:
    """Stable ascending ranking per query, ties broken by document id."""
    results = []
    for qi, q in enumerate(query_ids):
        order = sorted(range(len(doc_ids)), key=lambda di: (D[qi, di], doc_ids[di]))
        per_stream = {name: {d: float(M[qi, di]) for di, d in enumerate(doc_ids)}
                      for name, M in (streams or {}).items()}
        results.append(SearchResult(q, [(doc_ids[di], float(D[qi, di])) for di in order], per_stream))
    return results


def std_search(query_ids, doc_ids, *, collections=None, features=None, mode: str = "fused",
               z_normalize: bool = True, normalize: bool = True) -> list:
    """Query-by-example spoken term detection over the archive.

    Parameters
    ----------
    collections : dict name -> list of TokenLayer
    features : dict name -> FeatureStream
    mode : "token", "feature" or "fused"
    """
    query_ids, doc_ids = list(query_ids), list(doc_ids)
    streams = stream_distances(query_ids, doc_ids, collections, features, normalize)
    D = combine(streams, mode, z_normalize, token_names=list(collections or {}),
                feature_names=list(features or {}))
    return rank(query_ids, doc_ids, D, streams)
