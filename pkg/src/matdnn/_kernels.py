"""Compiled dynamic-programming and sampling loops.

Everything here operates on plain float64/int64 arrays; the public modules
wrap these with validation and bookkeeping. Ties are always broken towards
the lower index / the earlier-listed move so results are reproducible.
"""

import numpy as np
from numba import njit

NEG_INF = -np.inf

STAY, ADVANCE, ENTER = 0, 1, 2


@njit(cache=True)
def viterbi_token_loop(logb, log_self, log_adv, log_prior):
    """Best path through a loop of left-to-right token HMMs.

    logb : (T, n, m) emission log-likelihoods.
    log_self, log_adv : (n, m) log transition probabilities.
    log_prior : log probability of entering any token.

    Every token instance pays ``log_prior`` on entry and its final state's
    advance probability on exit (including at the end of the utterance).
    Returns ``(score, segments)`` with rows ``(token, start, end)``.
    """
    T, n, m = logb.shape
    delta = np.full((n, m), NEG_INF)
    prev = np.empty((n, m))
    bp = np.zeros((T, n, m), dtype=np.int8)
    came_from = np.zeros(T, dtype=np.int64)
    for k in range(n):
        delta[k, 0] = log_prior + logb[0, k, 0]
        bp[0, k, 0] = ENTER
    for t in range(1, T):
        prev[:, :] = delta
        best_exit = NEG_INF
        best_k = 0
        for k in range(n):
            v = prev[k, m - 1] + log_adv[k, m - 1]
            if v > best_exit:
                best_exit = v
                best_k = k
        came_from[t] = best_k
        enter = best_exit + log_prior
        for k in range(n):
            stay = prev[k, 0] + log_self[k, 0]
            if stay >= enter:
                delta[k, 0] = stay + logb[t, k, 0]
                bp[t, k, 0] = STAY
            else:
                delta[k, 0] = enter + logb[t, k, 0]
                bp[t, k, 0] = ENTER
            for s in range(1, m):
                stay = prev[k, s] + log_self[k, s]
                adv = prev[k, s - 1] + log_adv[k, s - 1]
                if stay >= adv:
                    delta[k, s] = stay + logb[t, k, s]
                    bp[t, k, s] = STAY
                else:
                    delta[k, s] = adv + logb[t, k, s]
                    bp[t, k, s] = ADVANCE
    score = NEG_INF
    k_end = 0
    for k in range(n):
        v = delta[k, m - 1] + log_adv[k, m - 1]
        if v > score:
            score = v
            k_end = k
    # backtrace
    seg_tok = np.empty(T, dtype=np.int64)
    seg_start = np.empty(T, dtype=np.int64)
    n_seg = 0
    k = k_end
    s = m - 1
    t = T - 1
    end = T
    while t >= 0:
        move = bp[t, k, s]
        if move == ENTER:
            seg_tok[n_seg] = k
            seg_start[n_seg] = t
            n_seg += 1
            if t > 0:
                k = came_from[t]
                s = m - 1
        elif move == ADVANCE:
            s -= 1
        t -= 1
    out = np.empty((n_seg, 3), dtype=np.int64)
    end = T
    for i in range(n_seg):
        j = n_seg - 1 - i
        out[i, 0] = seg_tok[j]
        out[i, 1] = seg_start[j]
    for i in range(n_seg):
        out[i, 2] = out[i + 1, 1] if i + 1 < n_seg else end
    return score, out


@njit(cache=True)
def align_left_to_right(logb, log_self, log_adv):
    """Forced alignment of L frames to m left-to-right states.

    The path starts in state 0, ends in state m-1 and pays the final exit.
    Returns ``(score, states)``; score is -inf if L < m.
    """
    L, m = logb.shape
    states = np.zeros(L, dtype=np.int64)
    if L < m:
        return NEG_INF, states
    delta = np.full((L, m), NEG_INF)
    adv_bp = np.zeros((L, m), dtype=np.bool_)
    delta[0, 0] = logb[0, 0]
    for t in range(1, L):
        for s in range(m):
            stay = delta[t - 1, s] + log_self[s]
            if s > 0:
                adv = delta[t - 1, s - 1] + log_adv[s - 1]
                if adv > stay:
                    delta[t, s] = adv + logb[t, s]
                    adv_bp[t, s] = True
                    continue
            delta[t, s] = stay + logb[t, s]
    score = delta[L - 1, m - 1] + log_adv[m - 1]
    s = m - 1
    for t in range(L - 1, -1, -1):
        states[t] = s
        if t > 0 and adv_bp[t, s]:
            s -= 1
    return score, states


@njit(cache=True)
def align_many(logb, offsets, log_self, log_adv):
    """:func:`align_left_to_right` over consecutive segments of ``logb``.

    Segment i spans rows ``offsets[i]:offsets[i + 1]``. Returns the summed
    score and the concatenated state sequence.
    """
    states = np.empty(logb.shape[0], dtype=np.int64)
    total = 0.0
    for i in range(offsets.shape[0] - 1):
        a, b = offsets[i], offsets[i + 1]
        score, st = align_left_to_right(logb[a:b], log_self, log_adv)
        total += score
        states[a:b] = st
    return total, states


@njit(cache=True)
def dtw_min_mean(cost, subsequence):
    """Minimum over monotone paths of (path cost / path length).

    cost : (D, Q) local distances; steps (i-1, j), (i, j-1), (i-1, j-1).
    With ``subsequence`` the path may start and end on any row i (the D
    axis) but must span every column j; otherwise it runs corner to corner.
    """
    D, Q = cost.shape
    Lmax = D + Q - 1
    # best[i, j, l]: minimum cost of a path ending at (i, j) with l + 1 cells
    best = np.full((D, Q, Lmax), np.inf)
    for i in range(D):
        for j in range(Q):
            c = cost[i, j]
            if j == 0 and (i == 0 or subsequence):
                best[i, j, 0] = c
            for l in range(1, Lmax):
                v = np.inf
                if i > 0:
                    a = best[i - 1, j, l - 1]
                    if a < v:
                        v = a
                    if j > 0:
                        a = best[i - 1, j - 1, l - 1]
                        if a < v:
                            v = a
                if j > 0:
                    a = best[i, j - 1, l - 1]
                    if a < v:
                        v = a
                if v < np.inf:
                    best[i, j, l] = v + c
    result = np.inf
    first = 0 if subsequence else D - 1
    for i in range(first, D):
        for l in range(Lmax):
            v = best[i, Q - 1, l]
            if v < np.inf:
                r = v / (l + 1)
                if r < result:
                    result = r
    return result


@njit(cache=True)
def dtw_min_sum(cost, subsequence):
    """Minimum path cost (no length normalization); same step rules."""
    D, Q = cost.shape
    acc = np.full((D, Q), np.inf)
    for i in range(D):
        for j in range(Q):
            c = cost[i, j]
            if j == 0 and (i == 0 or subsequence):
                acc[i, j] = c
                continue
            v = np.inf
            if i > 0:
                v = min(v, acc[i - 1, j])
                if j > 0:
                    v = min(v, acc[i - 1, j - 1])
            if j > 0:
                v = min(v, acc[i, j - 1])
            acc[i, j] = v + c
    if subsequence:
        return acc[:, Q - 1].min()
    return acc[D - 1, Q - 1]


@njit(cache=True)
def gibbs_sweeps(words, docs, z, ndk, nkw, nk, alpha, beta, uniforms):
    """Collapsed Gibbs sampling for LDA, one uniform draw per token per sweep.

    Counts are updated in place; ``uniforms`` has shape (sweeps, n_tokens).
    """
    K, V = nkw.shape
    vbeta = V * beta
    p = np.empty(K)
    for sweep in range(uniforms.shape[0]):
        for i in range(words.shape[0]):
            w = words[i]
            d = docs[i]
            k_old = z[i]
            ndk[d, k_old] -= 1
            nkw[k_old, w] -= 1
            nk[k_old] -= 1
            total = 0.0
            for k in range(K):
                total += (ndk[d, k] + alpha) * (nkw[k, w] + beta) / (nk[k] + vbeta)
                p[k] = total
            u = uniforms[sweep, i] * total
            k_new = K - 1
            for k in range(K):
                if u < p[k]:
                    k_new = k
                    break
            z[i] = k_new
            ndk[d, k_new] += 1
            nkw[k_new, w] += 1
            nk[k_new] += 1
