"""Evaluation metrics for features, discovered units and search.

Gold alignments are ``{utt: {"speaker": str, "segments": [(label, start, end)]}}``
as returned by :func:`matdnn.corpusio.read_gold`. The ABX score here is a
simplified proxy (macro average over ordered label pairs), not the
Challenge toolkit's stratified estimate.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np

from .match import feature_dtw


# ---------------------------------------------------------------------------
# ABX

@dataclass(frozen=True)
class GoldSegment:
    utt: str
    label: str
    start: int
    end: int
    speaker: str


@dataclass
class AbxTask:
    """Triples ``(A, B, X)``: A and X share a label, B's label differs."""

    triples: list
    condition: str


def gold_segments(gold: dict) -> list:
    return [GoldSegment(utt, label, s, e, entry["speaker"])
            for utt, entry in gold.items() for label, s, e in entry["segments"]]


def make_abx_task(gold: dict, condition: str = "within", max_per_pair: int = 50,
                  seed: int = 0) -> AbxTask:
    """Sample up to ``max_per_pair`` triples per ordered (A label, B label) pair.

    ``within``: A, B, X from one speaker. ``across``: A and B share a speaker,
    X comes from another one.
    """
    if condition not in ("within", "across"):
        raise ValueError(f"unknown ABX condition {condition!r}")
    segs = gold_segments(gold)
    by = defaultdict(list)
    for s in segs:
        by[(s.speaker, s.label)].append(s)
    speakers = sorted({s.speaker for s in segs})
    labels = sorted({s.label for s in segs})
    rng = np.random.default_rng(seed)
    triples = []
    for la in labels:
        for lb in labels:
            if la == lb:
                continue
            cands = []
            for spk in speakers:
                A_pool, B_pool = by.get((spk, la), []), by.get((spk, lb), [])
                if not A_pool or not B_pool:
                    continue
                x_spks = [spk] if condition == "within" else [o for o in speakers if o != spk]
                for xs in x_spks:
                    X_pool = by.get((xs, la), [])
                    if condition == "within":
                        if len(A_pool) < 2:
                            continue
                        cands.append((A_pool, B_pool, A_pool, True))
                    elif X_pool:
                        cands.append((A_pool, B_pool, X_pool, False))
            if not cands:
                continue
            for _ in range(max_per_pair):
                A_pool, B_pool, X_pool, distinct = cands[rng.integers(len(cands))]
                a = A_pool[rng.integers(len(A_pool))]
                b = B_pool[rng.integers(len(B_pool))]
                x = X_pool[rng.integers(len(X_pool))]
                if distinct:
                    while x == a:
                        x = X_pool[rng.integers(len(X_pool))]
                triples.append((a, b, x))
    return AbxTask(triples, condition)


def all_abx_triples(gold: dict, condition: str = "within") -> AbxTask:
    """Every admissible triple (exhaustive; for small corpora and tests)."""
    segs = gold_segments(gold)
    triples = []
    for a in segs:
        for x in segs:
            if x == a or x.label != a.label:
                continue
            same_spk = x.speaker == a.speaker
            if (condition == "within") != same_spk:
                continue
            for b in segs:
                if b.label != a.label and b.speaker == a.speaker:
                    triples.append((a, b, x))
    return AbxTask(triples, condition)


def abx_error(features: dict, task: AbxTask, metric: str = "cosine") -> float:
    """ABX error rate, averaged within each (A label, B label) pair then over pairs.

    A triple scores 1 when X is farther from A than from B, 0.5 on a tie.
    """
    if not task.triples:
        raise ValueError("ABX task has no triples")
    cache: dict = {}

    def frames(s):
        x = np.asarray(getattr(features[s.utt], "frames", features[s.utt]))[s.start:s.end]
        if len(x) == 0:
            raise ValueError(f"segment {s} has no frames")
        return x

    def dist(p, q):
        key = (p, q) if (p.utt, p.start, p.end) <= (q.utt, q.start, q.end) else (q, p)
        if key not in cache:
            cache[key] = feature_dtw(frames(key[0]), frames(key[1]), metric)
        return cache[key]

    per_pair = defaultdict(list)
    for a, b, x in task.triples:
        dax, dbx = dist(a, x), dist(b, x)
        per_pair[(a.label, b.label)].append(1.0 if dax > dbx else 0.5 if dax == dbx else 0.0)
    return float(np.mean([np.mean(v) for _, v in sorted(per_pair.items())]))


# ---------------------------------------------------------------------------
# unit quality

def levenshtein(a, b) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def ned(pairs) -> float:
    """Mean Levenshtein distance normalized by the longer string, over fragment pairs."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("NED needs at least one pair")
    vals = []
    for a, b in pairs:
        longest = max(len(a), len(b))
        vals.append(0.0 if longest == 0 else levenshtein(a, b) / longest)
    return float(np.mean(vals))


def transcribe(gold_entry: dict, start: int, end: int) -> tuple:
    """Gold labels covering ``[start, end)``.

    A gold unit is included when more than half of it lies inside the span;
    if none qualifies, the unit with the largest overlap is used.
    """
    out, best, best_ov = [], None, 0
    for label, s, e in gold_entry["segments"]:
        ov = min(e, end) - max(s, start)
        if ov <= 0:
            continue
        if 2 * ov > e - s:
            out.append(label)
        if ov > best_ov:
            best, best_ov = label, ov
    if not out and best is not None:
        out = [best]
    return tuple(out)


def cluster_pairs(segments: dict, gold: dict, max_pairs: int = 2000, seed: int = 0) -> list:
    """Transcription pairs of fragments that share a discovered token id."""
    by_tok = defaultdict(list)
    for utt, seg in segments.items():
        if utt not in gold:
            continue
        for tok, s, e in np.asarray(seg):
            by_tok[int(tok)].append((utt, int(s), int(e)))
    pairs = []
    for tok in sorted(by_tok):
        frags = by_tok[tok]
        for i in range(len(frags)):
            for j in range(i + 1, len(frags)):
                pairs.append((frags[i], frags[j]))
    if len(pairs) > max_pairs:
        idx = np.sort(np.random.default_rng(seed).choice(len(pairs), max_pairs, replace=False))
        pairs = [pairs[i] for i in idx]
    return [(transcribe(gold[a[0]], a[1], a[2]), transcribe(gold[b[0]], b[1], b[2])) for a, b in pairs]


def coverage(discovered: dict, gold: dict) -> float:
    """Fraction of gold-covered frames inside at least one discovered segment.

    ``discovered`` maps utt -> rows whose last two columns are (start, end).
    """
    total = covered = 0
    for utt, entry in gold.items():
        segs = entry["segments"]
        if not segs:
            continue
        T = max(e for _, _, e in segs)
        gmask = np.zeros(T, dtype=bool)
        for _, s, e in segs:
            gmask[s:e] = True
        dmask = np.zeros(T, dtype=bool)
        for row in discovered.get(utt, []):
            s, e = int(row[-2]), int(row[-1])
            dmask[max(s, 0):min(e, T)] = True
        total += gmask.sum()
        covered += (gmask & dmask).sum()
    return float(covered / total) if total else 0.0


def _prf(matched_d, n_d, matched_g, n_g):
    p = matched_d / n_d if n_d else 0.0
    r = matched_g / n_g if n_g else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def match_boundaries(discovered, gold, tolerance: int = 2) -> list:
    """Greedy one-to-one matching, nearest pairs first; returns (d, g) pairs."""
    cand = sorted((abs(d - g), g, d) for d in discovered for g in gold if abs(d - g) <= tolerance)
    used_d, used_g, pairs = set(), set(), []
    for _, g, d in cand:
        if d not in used_d and g not in used_g:
            used_d.add(d)
            used_g.add(g)
            pairs.append((d, g))
    return pairs


def boundary_prf(discovered, gold, tolerance: int = 2) -> tuple:
    """Boundary precision, recall and F-score.

    Accepts two collections of positions, or two mappings utt -> positions
    (pooled over utterances).
    """
    if tolerance < 0:
        raise ValueError("tolerance must be >= 0")
    if not isinstance(discovered, dict):
        discovered, gold = {"_": discovered}, {"_": gold}
    nd = ng = hits = 0
    for utt in sorted(set(discovered) | set(gold)):
        d = sorted({int(v) for v in discovered.get(utt, [])})
        g = sorted({int(v) for v in gold.get(utt, [])})
        nd += len(d)
        ng += len(g)
        hits += len(match_boundaries(d, g, tolerance))
    return _prf(hits, nd, hits, ng)


def internal_boundaries(rows) -> list:
    """Segment end positions excluding the utterance end."""
    rows = list(rows)
    if not rows:
        return []
    last = max(r[-1] for r in rows)
    return sorted({int(r[-1]) for r in rows if r[-1] < last})


def gold_boundaries(gold: dict) -> dict:
    return {u: internal_boundaries([(s, e) for _, s, e in entry["segments"]]) for u, entry in gold.items()}


def labeling_boundaries(labels: dict) -> dict:
    return {u: internal_boundaries([(s, e) for _, s, e in np.asarray(seg)]) for u, seg in labels.items()}


def token_type_prf(discovered: dict, gold: dict, tolerance: int = 2) -> dict:
    """Token and type scores of a labeling against gold units.

    A discovered segment matches a gold segment when both its start and end
    lie within ``tolerance`` frames (one-to-one, nearest first). Each token id
    is mapped to the majority gold label over its matched segments; type
    precision is the number of distinct gold labels reached divided by the
    number of distinct discovered token ids, type recall divides it by the
    number of gold types.
    """
    n_d = n_g = hits = 0
    votes = defaultdict(Counter)
    token_ids, gold_types = set(), set()
    for utt, entry in gold.items():
        gsegs = entry["segments"]
        gold_types.update(l for l, _, _ in gsegs)
        dsegs = [tuple(int(v) for v in r) for r in np.asarray(discovered.get(utt, np.zeros((0, 3))))]
        token_ids.update(t for t, _, _ in dsegs)
        n_d += len(dsegs)
        n_g += len(gsegs)
        cand = []
        for di, (_, ds, de) in enumerate(dsegs):
            for gi, (_, gs, ge) in enumerate(gsegs):
                if abs(ds - gs) <= tolerance and abs(de - ge) <= tolerance:
                    cand.append((abs(ds - gs) + abs(de - ge), gi, di))
        used_d, used_g = set(), set()
        for _, gi, di in sorted(cand):
            if di in used_d or gi in used_g:
                continue
            used_d.add(di)
            used_g.add(gi)
            hits += 1
            votes[dsegs[di][0]][gsegs[gi][0]] += 1
    token = _prf(hits, n_d, hits, n_g)
    reached = {max(sorted(c), key=lambda lab: c[lab]) for c in votes.values() if c}
    tp = len(reached & gold_types)
    type_ = _prf(tp, len(token_ids), tp, len(gold_types))
    return {"token": token, "type": type_}


# ---------------------------------------------------------------------------
# search

def average_precision(ranked_docs, relevant) -> float:
    relevant = set(relevant)
    if not relevant:
        raise ValueError("query has no relevant documents")
    hits, total = 0, 0.0
    for i, doc in enumerate(ranked_docs, start=1):
        if doc in relevant:
            hits += 1
            total += hits / i
    return total / len(relevant)


def mean_average_precision(results, relevance: dict) -> float:
    """MAP over search results (objects with ``query_id`` and ``ranking``)."""
    aps = []
    for res in results:
        rel = relevance.get(res.query_id, set())
        if not rel:
            raise ValueError(f"query {res.query_id!r} has no relevant documents")
        aps.append(average_precision([d for d, _ in res.ranking], rel))
    if not aps:
        raise ValueError("no search results")
    return float(np.mean(aps))
