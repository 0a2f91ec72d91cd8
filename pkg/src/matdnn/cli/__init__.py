"""Command-line driver.

Usage::

    matdnn synth --out data --seed 0          # synthetic corpus + data/pipeline.cfg
    matdnn pipeline --config data/pipeline.cfg
    matdnn tokenize --config data/pipeline.cfg  # run (or resume) up to a stage

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, PipelineConfig, load_config
from .pipeline import STAGES, Pipeline, StageError, run_pipeline
from .synth import SyntheticLanguageSpec, gen_synth, read_queries, write_synth

logger = logging.getLogger("matdnn")

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3

_STAGE_COMMANDS = {"mfcc": "features", "tokenize": "tokenize", "reinforce": "reinforce",
                   "nnet-train": "nnet-train", "bnf": "bnf", "iterate": "iterate",
                   "search": "search", "eval": "eval"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="matdnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--config", help="read synth.* keys from this config")
    p.add_argument("--out", help="output directory (default: synth.dir or ./synth)")
    p.add_argument("--seed", type=int)

    for name in list(_STAGE_COMMANDS) + ["pipeline"]:
        p = sub.add_parser(name, help=f"run the pipeline through '{_STAGE_COMMANDS.get(name, 'eval')}'")
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, help="overrides the config seed")
        if name == "pipeline":
            p.add_argument("--stage", choices=STAGES, help="stop after this stage")
    return parser


def _synth(args) -> int:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    seed = cfg.seed if args.seed is None else args.seed
    out = Path(args.out or cfg.synth_dir or "synth")
    spec = SyntheticLanguageSpec(n_phones=cfg.synth_phones, n_words=cfg.synth_words, dim=cfg.synth_dim,
                                 n_speakers=cfg.synth_speakers, noise=cfg.synth_noise,
                                 speaker_shift=cfg.synth_speaker_shift,
                                 phone_spread=cfg.synth_phone_spread,
                                 duration=tuple(cfg.synth_duration))
    corpus = gen_synth(spec, cfg.synth_utterances, seed, n_queries=cfg.synth_queries)
    paths = write_synth(corpus, out)
    cfg_text = "\n".join([
        f"corpus.manifest = {paths['manifest'].name}",
        f"corpus.queries = {paths['queries'].name}",
        f"corpus.relevance = {paths['relevance'].name}",
        f"corpus.gold_words = {paths['gold_words'].name}",
        f"corpus.gold_phones = {paths['gold_phones'].name}",
        f"seed = {seed}",
        "output.dir = state",
    ]) + "\n"
    (out / "pipeline.cfg").write_text(cfg_text)
    print(f"wrote {len(corpus.features)} utterances and {len(corpus.queries)} queries to {out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            return _synth(args)
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        until = args.stage if args.command == "pipeline" else _STAGE_COMMANDS[args.command]
        pipeline = Pipeline(cfg)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        pipeline.run(until)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    if until in (None, "eval"):
        print(f"report written to {pipeline.out / 'report.json'}")
    return EXIT_OK


__all__ = ["main", "build_parser", "run_pipeline", "Pipeline", "PipelineConfig", "load_config",
           "ConfigError", "StageError", "SyntheticLanguageSpec", "gen_synth", "write_synth",
           "read_queries", "STAGES"]
