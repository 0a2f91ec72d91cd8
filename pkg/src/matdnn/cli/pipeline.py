"""Stage-by-stage pipeline driver with on-disk state and resume.

State directory layout (``output.dir``)::

    features/raw/<id>.zrf         features as read (or MFCC from audio)
    features/init/<id>.zrf        per-utterance normalized features
    iter<k>/mr<r>/layer_<m>_<n>.model, kl_<m>_<n>.model, labels.tsv
                                  tokenizer layers after r reinforcement rounds,
                                  with their token distance matrices
    iter<k>/mr<r>/fused.tsv, omega0.tsv, lda_<n>.model   (r >= 1)
                                  fused segmentation, LDA relabeling, topic models
    iter<k>/layer_<m>_<n>.model, iter<k>/labels.tsv
                                  final layers of iteration k (marker in final/)
    iter<k>/net.model             multi-target network
    iter<k>/bnf/<id>.zrf          bottleneck features
    iter<k>/logs/<unit>.jsonl     per-epoch records of one unit (mr<r>, net)
    iter<k>/log.jsonl             all records of iteration k, in unit order
    search/streams.model          raw query x document distances per stream
    search/results.tsv            fused rankings
    report.json

Every stage reads its inputs back from disk, so a resumed run computes on
exactly the bytes an uninterrupted run would. A stage counts as done when
its ``.done`` marker exists; markers are written last.
"""

from __future__ import annotations

import json
import logging
import shutil
from pathlib import Path

import numpy as np

from .. import evalkit, hmmtok, match
from ..corpusio import (FeatureSequence, read_features, read_gold, read_labels, read_manifest,
                        read_model, read_relevance, resolve_path, write_features, write_labels,
                        write_model, write_results)
from ..frontend import cmvn, concat_features, mfcc39, read_wav
from ..matlayers import (GranularityGrid, IterationState, LayerResult, net_inputs, reinforce_once,
                         run_mat, train_network)
from ..mdnn import MultiTargetNet, extract_bnf
from .config import PipelineConfig
from .synth import read_queries

logger = logging.getLogger(__name__)

ITER_STAGES = ("tokenize", "reinforce", "nnet-train", "bnf")
STAGES = ("features",) + ITER_STAGES + ("iterate", "search", "eval")


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str, paths=()):
        self.stage = stage
        self.paths = [str(p) for p in paths]
        where = f" (artifacts: {', '.join(self.paths)})" if self.paths else ""
        super().__init__(f"stage {stage!r} failed: {message}{where}")


def _done(path: Path) -> bool:
    return (path / ".done").exists()


def _mark(path: Path) -> None:
    (path / ".done").write_text("")


def _layer_name(layer) -> str:
    return f"layer_{layer[0]}_{layer[1]}.model"


class Pipeline:
    """Runs the stages of one configured experiment."""

    def __init__(self, config: PipelineConfig):
        config.validate()
        self.cfg = config
        self.out = Path(config.output_dir)
        self.grid = GranularityGrid(config.grid_m, config.grid_n)
        self.manifest = read_manifest(config.manifest)
        self.doc_ids = sorted(self.manifest.ids)
        self.queries = read_queries(config.queries) if config.queries else {}
        self.query_src = {q: f"{q}_src" for q in self.queries}

    # -- inputs -----------------------------------------------------------

    def _sources(self) -> dict:
        """utt id -> source path for documents and query source recordings."""
        out = {e.utt_id: resolve_path(e.path, self.cfg.manifest) for e in self.manifest}
        for q, info in self.queries.items():
            out[self.query_src[q]] = resolve_path(info["path"], self.cfg.queries)
        return dict(sorted(out.items()))

    def _aux(self, path, ids) -> dict | None:
        if path is None:
            return None
        man = read_manifest(path)
        src = {e.utt_id: resolve_path(e.path, path) for e in man}
        missing = [u for u in ids if u not in src]
        if missing:
            raise ValueError(f"{path} lacks entries for {missing[:5]}")
        return {u: read_features(src[u], u) for u in ids}

    def load_features(self, kind: str, ids=None) -> dict:
        """``kind`` is ``raw``, ``init`` or ``bnf<k>``."""
        ids = list(self._sources()) if ids is None else ids
        if kind.startswith("bnf"):
            base = self.out / f"iter{int(kind[3:])}" / "bnf"
        else:
            base = self.out / "features" / kind
        return {u: read_features(base / f"{u}.zrf", u) for u in ids}

    def mat_input(self, k: int, ids) -> dict:
        """Tokenizer input of iteration ``k``: normalized initial features, then normalized BNF."""
        if k == 1:
            feats = self.load_features("init", ids)
        else:
            feats = {u: cmvn(s) for u, s in self.load_features(f"bnf{k - 1}", ids).items()}
            if self.cfg.mat_input == "bnf+init":
                init = self.load_features("init", ids)
                feats = {u: concat_features(init[u], feats[u]) for u in ids}
        return {u: np.asarray(s.frames, dtype=np.float64) for u, s in feats.items()}

    def load_state(self, k: int, r: int | None = None) -> IterationState:
        d = self.out / f"iter{k}" / (f"mr{r}" if r is not None else "")
        labels = read_labels(d / "labels.tsv")
        state = IterationState(k, {}, "mfcc" if k == 1 else f"bnf-{k - 1}", r or 0)
        for layer in self.grid.layers:
            tokens = hmmtok.TokenSet.load(d / _layer_name(layer))
            state.layers[layer] = LayerResult(tokens, labels[layer], [])
        return state

    def save_state(self, state: IterationState, d: Path) -> None:
        d.mkdir(parents=True, exist_ok=True)
        for layer, res in state.layers.items():
            res.tokens.save(d / _layer_name(layer))
            write_model(d / f"kl_{layer[0]}_{layer[1]}.model", "kl", {"m": layer[0], "n": layer[1]},
                        {"S": match.kl_matrix(res.tokens)})
        write_labels(state.labelings(), d / "labels.tsv")

    def _save_mr_artifacts(self, state: IterationState, d: Path) -> None:
        art = state.artifacts
        rows = [f"{u}\t{s}\t{e}\n" for u in sorted(art["fused"]) for s, e in art["fused"][u]]
        (d / "fused.tsv").write_text("".join(rows))
        write_labels(art["init"], d / "omega0.tsv")
        for n, lda in art["lda"].items():
            lda.save(d / f"lda_{n}.model")

    def _log(self, k: int, unit: str, records: list) -> None:
        d = self.out / f"iter{k}" / "logs"
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{unit}.jsonl").write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
        parts = sorted(d.glob("*.jsonl"), key=lambda p: _unit_order(p.stem))
        (self.out / f"iter{k}" / "log.jsonl").write_text("".join(p.read_text() for p in parts))

    # -- stages -----------------------------------------------------------

    def stage_features(self) -> None:
        d = self.out / "features"
        if _done(d):
            return
        (d / "raw").mkdir(parents=True, exist_ok=True)
        (d / "init").mkdir(parents=True, exist_ok=True)
        for utt, path in self._sources().items():
            if path.suffix.lower() == ".wav":
                pcm, sr = read_wav(path)
                raw = mfcc39(pcm, sr, utt_id=utt)
            else:
                raw = read_features(path, utt)
            write_features(raw, d / "raw" / f"{utt}.zrf")
            write_features(cmvn(read_features(d / "raw" / f"{utt}.zrf", utt)), d / "init" / f"{utt}.zrf")
        _mark(d)

    def stage_tokenize(self, k: int) -> None:
        d = self.out / f"iter{k}" / "mr0"
        if _done(d):
            return
        corpus = self.mat_input(k, self.doc_ids)
        state = run_mat(corpus, self.grid, self.cfg.seed + k - 1, max_epochs=self.cfg.max_epochs,
                        iteration=k, feature_id="mfcc" if k == 1 else f"bnf-{k - 1}")
        self.save_state(state, d)
        self._log(k, "mr0", [{"iteration": k, "mr_round": 0, "layer": list(layer), "epoch": e + 1,
                              "log_likelihood": ll}
                             for layer, res in state.layers.items() for e, ll in enumerate(res.log_likelihoods)])
        _mark(d)

    def stage_reinforce(self, k: int) -> None:
        top = self.out / f"iter{k}"
        if _done(top / "final"):
            return
        corpus = self.mat_input(k, self.doc_ids)
        for r in range(1, self.cfg.mr_rounds + 1):
            d = top / f"mr{r}"
            if _done(d):
                continue
            prev = self.load_state(k, r - 1)
            weights = None if self.cfg.mr_weighting == "m" else np.ones(len(self.grid))
            state = reinforce_once(prev, corpus, seed=self.cfg.seed + 1000 * (r - 1),
                                   sweeps=self.cfg.lda_sweeps, weights=weights,
                                   fusion=self.cfg.fusion, max_epochs=self.cfg.max_epochs)
            self.save_state(state, d)
            self._save_mr_artifacts(state, d)
            self._log(k, f"mr{r}", [{"iteration": k, "mr_round": r, "layer": list(layer), "epoch": e + 1,
                                     "log_likelihood": ll}
                                    for layer, res in state.layers.items()
                                    for e, ll in enumerate(res.log_likelihoods)])
            _mark(d)
        last = top / f"mr{self.cfg.mr_rounds}"
        for layer in self.grid.layers:
            shutil.copyfile(last / _layer_name(layer), top / _layer_name(layer))
        shutil.copyfile(last / "labels.tsv", top / "labels.tsv")
        (top / "final").mkdir(exist_ok=True)
        _mark(top / "final")

    def _net_inputs(self, k: int, ids) -> dict:
        initial = self.load_features("init", ids)
        bnfs = [self.load_features(f"bnf{j}", ids) for j in range(1, k)]
        frame_aux = self._aux(self.cfg.frame_aux, ids) if k >= 2 else None
        utt_aux = self._aux(self.cfg.utt_aux, ids)
        if utt_aux is not None:
            utt_aux = {u: np.ravel(s.frames) for u, s in utt_aux.items()}
        return net_inputs(initial, bnfs, context=self.cfg.net_context, frame_aux=frame_aux, utt_aux=utt_aux)

    def stage_nnet_train(self, k: int) -> None:
        path = self.out / f"iter{k}" / "net.model"
        if path.exists():
            return
        state = self.load_state(k)
        inputs = self._net_inputs(k, self.doc_ids)
        params = dict(self.cfg.net_params, seed=self.cfg.seed + k - 1)
        net = train_network(state, inputs, **params)
        self._log(k, "net", [{"iteration": k, "stage": "nnet-train", "epoch": e + 1, "loss": loss}
                             for e, loss in enumerate(net.loss_curve_)])
        net.save(path)

    def stage_bnf(self, k: int) -> None:
        d = self.out / f"iter{k}" / "bnf"
        if _done(d):
            return
        d.mkdir(parents=True, exist_ok=True)
        net = MultiTargetNet.load(self.out / f"iter{k}" / "net.model")
        ids = list(self._sources())
        for utt, seq in extract_bnf(net, self._net_inputs(k, ids)).items():
            write_features(seq, d / f"{utt}.zrf")
        _mark(d)

    def run_iteration(self, k: int, until: str | None = None) -> None:
        steps = (("tokenize", self.stage_tokenize), ("reinforce", self.stage_reinforce),
                 ("nnet-train", self.stage_nnet_train), ("bnf", self.stage_bnf))
        for name, fn in steps:
            self._guard(name, fn, k)
            if until == name:
                return

    # -- search -----------------------------------------------------------

    def _query_slice(self, feats: dict) -> dict:
        return {q: np.asarray(feats[self.query_src[q]].frames[i["start"]:i["end"]], dtype=np.float64)
                for q, i in self.queries.items()}

    def stream_names(self) -> tuple:
        tok = [f"tok-i{k}-mr{r}" for k in range(1, self.cfg.iterations + 1)
               for r in range(self.cfg.mr_rounds + 1)]
        feat = ["feat-raw"] + [f"feat-bnf{k}" for k in range(1, self.cfg.iterations + 1)]
        return tok, feat

    def stage_search(self) -> None:
        d = self.out / "search"
        if _done(d):
            return
        if not self.queries:
            raise ValueError("corpus.queries is not configured")
        d.mkdir(parents=True, exist_ok=True)
        qids = sorted(self.queries)
        srcs = [self.query_src[q] for q in qids]
        collections = {}
        for k in range(1, self.cfg.iterations + 1):
            q_in = self._query_slice({u: FeatureSequence(x) for u, x in self.mat_input(k, srcs).items()})
            for r in range(self.cfg.mr_rounds + 1):
                state = self.load_state(k, r)
                layers = []
                for res in state.layers.values():
                    q_tok = {q: hmmtok.decode(x, res.tokens)[0][:, 0] for q, x in q_in.items()}
                    d_tok = {u: seg[:, 0] for u, seg in res.labels.items()}
                    S = read_model(self.out / f"iter{k}" / f"mr{r}" / f"kl_{res.tokens.m}_{res.tokens.n}.model",
                                   kind="kl")[2]["S"]
                    layers.append(match.TokenLayer(S, q_tok, d_tok))
                collections[f"tok-i{k}-mr{r}"] = layers
        features = {}
        for kind in ["raw"] + [f"bnf{k}" for k in range(1, self.cfg.iterations + 1)]:
            feats = self.load_features(kind)
            features[f"feat-{kind}"] = match.FeatureStream(
                self._query_slice(feats),
                {u: np.asarray(feats[u].frames, dtype=np.float64) for u in self.doc_ids},
                self.cfg.search_metric)
        streams = match.stream_distances(qids, self.doc_ids, collections, features, self.cfg.length_normalize)
        write_model(d / "streams.model", "search", {"queries": qids, "docs": self.doc_ids,
                                                   "streams": list(streams)}, streams)
        tok, feat = self.stream_names()
        D = match.combine(streams, "fused", self.cfg.z_normalize, tok, feat)
        write_results(match.rank(qids, self.doc_ids, D), d / "results.tsv")
        _mark(d)

    # -- evaluation -------------------------------------------------------

    def _unit_scores(self, labels: dict, gold: dict) -> dict:
        gb = evalkit.gold_boundaries(gold)
        p, r, f = evalkit.boundary_prf(evalkit.labeling_boundaries(labels), gb, self.cfg.tolerance)
        tt = evalkit.token_type_prf(labels, gold, self.cfg.tolerance)
        pairs = evalkit.cluster_pairs(labels, gold, seed=self.cfg.seed)
        return {"boundary": {"precision": p, "recall": r, "f": f},
                "token": dict(zip(("precision", "recall", "f"), tt["token"])),
                "type": dict(zip(("precision", "recall", "f"), tt["type"])),
                "ned": evalkit.ned(pairs) if pairs else None,
                "coverage": evalkit.coverage(labels, gold)}

    def stage_eval(self) -> dict:
        cfg = self.cfg
        report = {"settings": {"grid_m": list(cfg.grid_m), "grid_n": list(cfg.grid_n),
                               "mr_rounds": cfg.mr_rounds, "iterations": cfg.iterations,
                               "seed": cfg.seed, "net_epochs": cfg.net_epochs,
                               "abx_metric": cfg.abx_metric, "search_metric": cfg.search_metric},
                  "notes": {"abx": "proxy: sampled triples, error macro-averaged over ordered label pairs",
                            "units": "proxy subset: boundary, token and type P/R/F, NED, coverage; "
                                     f"tolerance {cfg.tolerance} frames"}}
        golds = {}
        if cfg.gold_phones:
            golds["phones"] = read_gold(cfg.gold_phones)
        if cfg.gold_words:
            golds["words"] = read_gold(cfg.gold_words)
        if "phones" in golds:
            gold = {u: golds["phones"][u] for u in self.doc_ids if u in golds["phones"]}
            tasks = {c: evalkit.make_abx_task(gold, c, cfg.abx_max_per_pair, cfg.seed)
                     for c in ("within", "across")}
            report["abx"] = {}
            for kind in ["raw", "init"] + [f"bnf{k}" for k in range(1, cfg.iterations + 1)]:
                feats = self.load_features(kind, self.doc_ids)
                report["abx"][kind] = {c: (evalkit.abx_error(feats, t, cfg.abx_metric) if t.triples else None)
                                       for c, t in tasks.items()}
        if golds:
            report["units"] = {}
            for k in range(1, cfg.iterations + 1):
                for r in range(cfg.mr_rounds + 1):
                    labelings = read_labels(self.out / f"iter{k}" / f"mr{r}" / "labels.tsv")
                    entry = {}
                    for level, gold in golds.items():
                        gold = {u: gold[u] for u in self.doc_ids if u in gold}
                        per_layer = {f"{m},{n}": self._unit_scores(labelings[(m, n)], gold)
                                     for m, n in self.grid.layers}
                        entry[level] = {"layers": per_layer, "mean": _mean_scores(per_layer.values())}
                    report["units"][f"iter{k}/mr{r}"] = entry
        if cfg.queries and cfg.relevance:
            _, meta, streams = read_model(self.out / "search" / "streams.model", kind="search")
            qids, docs = meta["queries"], meta["docs"]
            rel = read_relevance(cfg.relevance)
            tok, feat = self.stream_names()
            maps = {}
            for name in meta["streams"]:
                maps[name] = evalkit.mean_average_precision(match.rank(qids, docs, streams[name]), rel)
            for mode in ("token", "feature", "fused"):
                D = match.combine(streams, mode, cfg.z_normalize, tok, feat)
                maps[f"mode-{mode}"] = evalkit.mean_average_precision(match.rank(qids, docs, D), rel)
            report["search"] = {"map": maps}
        text = json.dumps(report, indent=2, sort_keys=True) + "\n"
        (self.out / "report.json").write_text(text)
        return report

    # -- driver -----------------------------------------------------------

    def _guard(self, name, fn, *args):
        try:
            return fn(*args)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, str(exc), [self.out]) from exc

    def run(self, until: str | None = None) -> dict | None:
        """Run all stages (resuming), or stop after stage ``until``.

        The per-iteration stages named on their own refer to iteration 1;
        ``iterate`` runs every configured iteration.
        """
        if until is not None and until not in STAGES:
            raise ValueError(f"unknown stage {until!r}; choose from {', '.join(STAGES)}")
        self.out.mkdir(parents=True, exist_ok=True)
        self._guard("features", self.stage_features)
        if until == "features":
            return None
        if until in ITER_STAGES:
            self.run_iteration(1, until)
            return None
        for k in range(1, self.cfg.iterations + 1):
            self.run_iteration(k)
        if until == "iterate":
            return None
        if self.cfg.queries:
            self._guard("search", self.stage_search)
        if until == "search":
            return None
        return self._guard("eval", self.stage_eval)


def _unit_order(stem: str):
    if stem.startswith("mr"):
        return (0, int(stem[2:]))
    return (1, 0)


def _mean_scores(rows) -> dict:
    rows = list(rows)
    out = {}
    for key in ("boundary", "token", "type"):
        out[key] = {s: float(np.mean([r[key][s] for r in rows])) for s in ("precision", "recall", "f")}
    neds = [r["ned"] for r in rows if r["ned"] is not None]
    out["ned"] = float(np.mean(neds)) if neds else None
    out["coverage"] = float(np.mean([r["coverage"] for r in rows]))
    return out


def run_pipeline(config: PipelineConfig, until: str | None = None) -> dict | None:
    return Pipeline(config).run(until)
