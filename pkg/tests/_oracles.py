"""Slow, independent reference computations used as test oracles.

Each oracle is written from the definition and shares no code with the
package, so agreement is evidence rather than tautology.
"""

import itertools
import math

import numpy as np
from scipy import fft, integrate


# ---------------------------------------------------------------------------
# DTW by path enumeration

def _paths_from(i, j, D, Q, end_ok):
    """All monotone paths starting at (i, j), as lists of cells, ending where ``end_ok``."""
    out = []
    if end_ok(i, j):
        out.append([(i, j)])
    for di, dj in ((1, 0), (0, 1), (1, 1)):
        a, b = i + di, j + dj
        if a < D and b < Q:
            for tail in _paths_from(a, b, D, Q, end_ok):
                out.append([(i, j)] + tail)
    return out


def all_paths(D, Q, subsequence):
    if subsequence:
        starts = [(i, 0) for i in range(D)]
        end_ok = lambda i, j: j == Q - 1
    else:
        starts = [(0, 0)]
        end_ok = lambda i, j: i == D - 1 and j == Q - 1
    paths = []
    for i, j in starts:
        paths.extend(_paths_from(i, j, D, Q, end_ok))
    return paths


def dtw_enumerate(cost, subsequence=False):
    """(min over paths of mean cell cost, min over paths of summed cell cost)."""
    cost = np.asarray(cost, dtype=np.float64)
    D, Q = cost.shape
    best_mean = best_sum = math.inf
    for p in all_paths(D, Q, subsequence):
        s = math.fsum(cost[i, j] for i, j in p)
        best_sum = min(best_sum, s)
        best_mean = min(best_mean, s / len(p))
    return best_mean, best_sum


# ---------------------------------------------------------------------------
# KL by quadrature

def kl_quad(mu1, var1, mu2, var2):
    """KL(N(mu1, var1) || N(mu2, var2)) in one dimension by numerical integration."""
    s1 = math.sqrt(var1)

    def logpdf(x, mu, var):
        return -0.5 * math.log(2 * math.pi * var) - (x - mu) ** 2 / (2 * var)

    def integrand(x):
        lp = logpdf(x, mu1, var1)
        return math.exp(lp) * (lp - logpdf(x, mu2, var2))

    val, _ = integrate.quad(integrand, mu1 - 40 * s1, mu1 + 40 * s1, limit=400, points=[mu1])
    return val


# ---------------------------------------------------------------------------
# decoding by exhaustive labeling enumeration (one state per token)

def _compositions(T):
    for cuts in itertools.product((0, 1), repeat=T - 1):
        bounds = [0] + [t + 1 for t, c in enumerate(cuts) if c] + [T]
        yield list(zip(bounds[:-1], bounds[1:]))


def brute_decode(loglik, self_loop):
    """Best labeling under a uniform token loop of single-state tokens.

    ``loglik`` is (T, n) frame log-likelihoods, ``self_loop`` (n,). Every
    token instance pays log(1/n) on entry, log(a) per extra frame and
    log(1 - a) on exit. Every segmentation and every label tuple is scored.
    Returns (score, [(token, start, end), ...]).
    """
    T, n = loglik.shape
    best, best_lab = -math.inf, None
    for segs in _compositions(T):
        k = len(segs)
        # (k, n): score of each segment under each token
        table = np.array([[-math.log(n) + loglik[s:e, j].sum() + (e - s - 1) * math.log(self_loop[j])
                           + math.log(1 - self_loop[j]) for j in range(n)] for s, e in segs])
        labels = np.indices((n,) * k).reshape(k, -1).T          # every label tuple
        scores = table[np.arange(k)[None, :], labels].sum(axis=1)
        i = int(np.argmax(scores))
        if scores[i] > best:
            best = float(scores[i])
            best_lab = [(int(lab), s, e) for (s, e), lab in zip(segs, labels[i])]
    return best, best_lab


def normal_logpdf(x, mean, var):
    return -0.5 * (np.log(2 * np.pi * var) + (x - mean) ** 2 / var)


# ---------------------------------------------------------------------------
# MFCC, written frame by frame

def ref_mfcc(signal, sr=16000):
    x = np.asarray(signal, dtype=np.float64)
    win, hop, nfft, nfilt, ncep = int(0.025 * sr), int(0.010 * sr), 512, 26, 12
    y = np.empty_like(x)
    y[0] = x[0]
    for t in range(1, len(x)):
        y[t] = x[t] - 0.97 * x[t - 1]
    mel = lambda f: 2595.0 * math.log10(1.0 + f / 700.0)
    imel = lambda m: 700.0 * (10 ** (m / 2595.0) - 1.0)
    top = mel(sr / 2)
    centers = [imel(top * i / (nfilt + 1)) for i in range(nfilt + 2)]
    bank = np.zeros((nfilt, nfft // 2 + 1))
    for f in range(nfilt):
        lo, mid, hi = centers[f], centers[f + 1], centers[f + 2]
        for b in range(nfft // 2 + 1):
            hz = b * sr / nfft
            if lo < hz <= mid:
                bank[f, b] = (hz - lo) / (mid - lo)
            elif mid < hz < hi:
                bank[f, b] = (hi - hz) / (hi - mid)
    hamming = [0.54 - 0.46 * math.cos(2 * math.pi * i / (win - 1)) for i in range(win)]
    rows = []
    start = 0
    while start + win <= len(y):
        frame = y[start:start + win]
        energy = math.log(max(float(np.dot(frame, frame)), np.finfo(float).eps))
        spec = np.abs(np.fft.rfft(frame * np.array(hamming), nfft)) ** 2
        logmel = np.log(np.maximum(bank @ spec, np.finfo(float).eps))
        c = fft.dct(logmel, type=2, norm="ortho")[1:ncep + 1]
        c = c * np.array([1 + 11 * math.sin(math.pi * k / 22) for k in range(1, ncep + 1)])
        rows.append(np.append(c, energy))
        start += hop
    static = np.array(rows)

    def delta(f):
        T = len(f)
        out = np.zeros_like(f)
        for t in range(T):
            acc = 0.0
            for k in (1, 2):
                acc = acc + k * (f[min(t + k, T - 1)] - f[max(t - k, 0)])
            out[t] = acc / 10.0
        return out

    d1 = delta(static)
    return np.hstack([static, d1, delta(d1)])


# ---------------------------------------------------------------------------
# ABX by direct triple enumeration

def abx_enumerate(features, gold, condition, dist):
    """Error over every admissible (A, B, X), macro-averaged over (label A, label B)."""
    segs = [(u, lab, s, e, g["speaker"]) for u, g in gold.items() for lab, s, e in g["segments"]]
    per = {}
    for a in segs:
        for b in segs:
            if b[1] == a[1] or b[4] != a[4]:
                continue
            for x in segs:
                if x is a or x[1] != a[1]:
                    continue
                if (condition == "within") != (x[4] == a[4]):
                    continue
                fa = features[a[0]][a[2]:a[3]]
                fb = features[b[0]][b[2]:b[3]]
                fx = features[x[0]][x[2]:x[3]]
                dax, dbx = dist(fa, fx), dist(fb, fx)
                c = 1.0 if dax > dbx else (0.5 if dax == dbx else 0.0)
                per.setdefault((a[1], b[1]), []).append(c)
    return sum(sum(v) / len(v) for v in per.values()) / len(per)
