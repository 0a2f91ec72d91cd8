"""Synthetic spoken-language corpora for desk-scale runs.

A language is a small phone inventory with Gaussian frame emissions and a
handful of words spelled in those phones. Utterances are random word
strings; every phone becomes a run of frames drawn around its mean, shifted
by a per-speaker offset. Queries are word instances cut from separate query
utterances, so they never appear in the searched archive.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..corpusio import (FeatureSequence, Manifest, ManifestEntry, write_features, write_gold,
                        write_manifest, write_relevance)


@dataclass
class SyntheticLanguageSpec:
    n_phones: int = 6
    words: list | None = None        # phone-index sequences; drawn at random when None
    n_words: int = 3
    phones_per_word: tuple = (3, 4)
    dim: int = 12
    phone_spread: float = 1.0        # std of phone means around the origin
    duration: tuple = (5, 12)        # frames per phone, inclusive
    words_per_utterance: tuple = (1, 3)
    n_speakers: int = 2
    speaker_shift: float = 1.5       # std of per-speaker mean offsets
    noise: float = 1.0
    frame_period: int = 10

    def validate(self) -> None:
        if self.duration[0] < 3 or self.duration[1] < self.duration[0]:
            raise ValueError("phone durations must be >= 3 frames")
        if self.words is not None and any(len(w) == 0 for w in self.words):
            raise ValueError("words must be non-empty")
        if self.n_speakers < 1 or self.n_phones < 2:
            raise ValueError("need >= 1 speaker and >= 2 phones")


@dataclass
class SyntheticCorpus:
    features: dict                      # utt -> FeatureSequence
    speakers: dict                      # utt -> speaker id
    gold_words: dict                    # read_gold layout
    gold_phones: dict
    queries: dict                       # qid -> {"utt", "start", "end", "word", "speaker"}
    query_features: dict                # query source utt -> FeatureSequence
    relevance: dict                     # qid -> set of utt ids
    words: list = field(default_factory=list)


def _language(spec: SyntheticLanguageSpec, rng):
    means = rng.normal(0.0, spec.phone_spread, (spec.n_phones, spec.dim))
    if spec.words is not None:
        words = [list(w) for w in spec.words]
    else:
        words, seen = [], set()
        while len(words) < spec.n_words:
            k = int(rng.integers(spec.phones_per_word[0], spec.phones_per_word[1] + 1))
            w = tuple(int(p) for p in rng.integers(0, spec.n_phones, k))
            if w not in seen and all(a != b for a, b in zip(w, w[1:])):
                seen.add(w)
                words.append(list(w))
    shifts = rng.normal(0.0, spec.speaker_shift, (spec.n_speakers, spec.dim))
    return means, words, shifts


def _utterance(word_ids, words, means, shift, spec, rng):
    frames, wgold, pgold, t = [], [], [], 0
    for wi in word_ids:
        w_start = t
        for p in words[wi]:
            L = int(rng.integers(spec.duration[0], spec.duration[1] + 1))
            frames.append(means[p] + shift + spec.noise * rng.standard_normal((L, spec.dim)))
            pgold.append((f"p{p}", t, t + L))
            t += L
        wgold.append((f"w{wi}", w_start, t))
    return np.vstack(frames), wgold, pgold


def gen_synth(spec: SyntheticLanguageSpec, n_utterances: int = 50, seed: int = 0,
              n_queries: int = 5, max_retries: int = 100) -> SyntheticCorpus:
    """Sample a corpus; resampled (bounded) until every query word occurs in the archive."""
    spec.validate()
    for attempt in range(max_retries):
        rng = np.random.default_rng([seed, attempt])
        corpus = _sample(spec, n_utterances, n_queries, rng)
        if all(corpus.relevance[q] for q in corpus.queries):
            return corpus
    raise RuntimeError(f"no corpus with full query coverage after {max_retries} attempts")


def _sample(spec, n_utterances, n_queries, rng) -> SyntheticCorpus:
    means, words, shifts = _language(spec, rng)
    lo, hi = spec.words_per_utterance
    feats, speakers, gw, gp = {}, {}, {}, {}
    for i in range(n_utterances):
        utt = f"utt{i:04d}"
        spk = i % spec.n_speakers
        word_ids = [int(w) for w in rng.integers(0, len(words), int(rng.integers(lo, hi + 1)))]
        x, wg, pg = _utterance(word_ids, words, means, shifts[spk], spec, rng)
        feats[utt] = FeatureSequence(x.astype(np.float32), spec.frame_period, utt)
        speakers[utt] = f"spk{spk}"
        gw[utt] = {"speaker": f"spk{spk}", "segments": wg}
        gp[utt] = {"speaker": f"spk{spk}", "segments": pg}
    queries, qfeats, relevance = {}, {}, {}
    for q in range(n_queries):
        qid = f"q{q:02d}"
        target = q % len(words)
        spk = int(rng.integers(spec.n_speakers))
        others = [int(w) for w in rng.integers(0, len(words), int(rng.integers(lo, hi + 1)) - 1)]
        pos = int(rng.integers(0, len(others) + 1))
        word_ids = others[:pos] + [target] + others[pos:]
        x, wg, _ = _utterance(word_ids, words, means, shifts[spk], spec, rng)
        src = f"{qid}_src"
        qfeats[src] = FeatureSequence(x.astype(np.float32), spec.frame_period, src)
        _, s, e = wg[pos]
        queries[qid] = {"utt": src, "start": s, "end": e, "word": f"w{target}", "speaker": f"spk{spk}"}
        relevance[qid] = {u for u, g in gw.items() if any(lab == f"w{target}" for lab, _, _ in g["segments"])}
    return SyntheticCorpus(feats, speakers, gw, gp, queries, qfeats, relevance, words)


def write_synth(corpus: SyntheticCorpus, out_dir) -> dict:
    """Persist a synthetic corpus; returns the written paths by role."""
    out = Path(out_dir)
    (out / "feats").mkdir(parents=True, exist_ok=True)
    entries = []
    for utt, seq in corpus.features.items():
        write_features(seq, out / "feats" / f"{utt}.zrf")
        entries.append(ManifestEntry(utt, f"feats/{utt}.zrf", corpus.speakers[utt]))
    write_manifest(Manifest(entries), out / "manifest.tsv")
    for src, seq in corpus.query_features.items():
        write_features(seq, out / "feats" / f"{src}.zrf")
    with open(out / "queries.tsv", "w", encoding="utf-8") as f:
        for qid, q in corpus.queries.items():
            f.write(f"{qid}\tfeats/{q['utt']}.zrf\t{q['speaker']}\t{q['start']}\t{q['end']}\n")
    write_gold(corpus.gold_words, out / "gold_words.tsv")
    write_gold(corpus.gold_phones, out / "gold_phones.tsv")
    write_relevance(corpus.relevance, out / "relevance.tsv")
    return {"manifest": out / "manifest.tsv", "queries": out / "queries.tsv",
            "gold_words": out / "gold_words.tsv", "gold_phones": out / "gold_phones.tsv",
            "relevance": out / "relevance.tsv"}


def read_queries(path) -> dict:
    """``qid<TAB>path<TAB>speaker<TAB>start<TAB>end`` -> ``{qid: dict}``."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 5:
                raise ValueError(f"{path}:{lineno}: expected 'qid<TAB>path<TAB>speaker<TAB>start<TAB>end'")
            qid, p, spk, s, e = parts
            out[qid] = {"path": p, "speaker": spk, "start": int(s), "end": int(e)}
    return out
