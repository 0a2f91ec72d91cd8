"""Pipeline configuration: a flat ``key = value`` file with dotted keys.

Example::

    corpus.manifest = data/manifest.tsv
    grid.m = 3,5,7
    grid.n = 4,8,16
    mr.rounds = 1
    iterations = 2
    net.hidden = 256,256
    seed = 0
    output.dir = out

Relative paths are resolved against the config file's directory. Lines
starting with ``#`` or ``;`` are comments.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from ..reinforce import FusionConfig


class ConfigError(ValueError):
    pass


def _ints(v):
    return tuple(int(x) for x in v.replace(" ", "").split(",") if x)


def _floats(v):
    return tuple(float(x) for x in v.replace(" ", "").split(",") if x)


def _bool(v):
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


# config key -> (attribute, parser)
_KEYS = {
    "corpus.manifest": ("manifest", str),
    "corpus.queries": ("queries", str),
    "corpus.relevance": ("relevance", str),
    "corpus.gold_words": ("gold_words", str),
    "corpus.gold_phones": ("gold_phones", str),
    "corpus.utt_aux": ("utt_aux", str),
    "corpus.frame_aux": ("frame_aux", str),
    "grid.preset": ("grid_preset", str),
    "grid.m": ("grid_m", _ints),
    "grid.n": ("grid_n", _ints),
    "tokenizer.max_epochs": ("max_epochs", int),
    "mr.rounds": ("mr_rounds", int),
    "mr.lda_sweeps": ("lda_sweeps", int),
    "mr.weighting": ("mr_weighting", str),
    "mr.kernel": ("mr_kernel", _floats),
    "mr.threshold": ("mr_threshold", float),
    "mr.min_gap": ("mr_min_gap", int),
    "mr.min_segment": ("mr_min_segment", int),
    "mat.input": ("mat_input", str),
    "iterations": ("iterations", int),
    "net.hidden": ("net_hidden", _ints),
    "net.bottleneck": ("net_bottleneck", int),
    "net.context": ("net_context", int),
    "net.learning_rate": ("net_learning_rate", float),
    "net.batch_size": ("net_batch_size", int),
    "net.epochs": ("net_epochs", int),
    "search.length_normalize": ("length_normalize", _bool),
    "search.z_normalize": ("z_normalize", _bool),
    "search.metric": ("search_metric", str),
    "eval.abx_metric": ("abx_metric", str),
    "eval.abx_max_per_pair": ("abx_max_per_pair", int),
    "eval.tolerance": ("tolerance", int),
    "seed": ("seed", int),
    "output.dir": ("output_dir", str),
    "synth.utterances": ("synth_utterances", int),
    "synth.queries": ("synth_queries", int),
    "synth.words": ("synth_words", int),
    "synth.phones": ("synth_phones", int),
    "synth.dim": ("synth_dim", int),
    "synth.speakers": ("synth_speakers", int),
    "synth.noise": ("synth_noise", float),
    "synth.speaker_shift": ("synth_speaker_shift", float),
    "synth.phone_spread": ("synth_phone_spread", float),
    "synth.duration": ("synth_duration", _ints),
    "synth.dir": ("synth_dir", str),
}

_PATH_ATTRS = ("manifest", "queries", "relevance", "gold_words", "gold_phones", "utt_aux",
               "frame_aux", "output_dir", "synth_dir")
_INPUT_ATTRS = ("manifest", "queries", "relevance", "gold_words", "gold_phones", "utt_aux", "frame_aux")

GRID_PRESETS = {"desk": ((3, 5, 7), (4, 8, 16)), "full": ((3, 5, 7, 9), (50, 100, 300, 500))}


@dataclass
class PipelineConfig:
    manifest: str | None = None
    queries: str | None = None
    relevance: str | None = None
    gold_words: str | None = None
    gold_phones: str | None = None
    utt_aux: str | None = None          # manifest of per-utterance vectors (ZRF, one frame)
    frame_aux: str | None = None        # manifest of frame-level auxiliary features
    grid_preset: str | None = None
    grid_m: tuple = (3, 5, 7)
    grid_n: tuple = (4, 8, 16)
    max_epochs: int = 10
    mr_rounds: int = 1
    lda_sweeps: int = 200
    mr_weighting: str = "m"             # layer weights proportional to m, or "uniform"
    mr_kernel: tuple = (0.25, 0.5, 0.25)
    mr_threshold: float = 1.0
    mr_min_gap: int = 3
    mr_min_segment: int = 3
    mat_input: str = "bnf"              # later-iteration tokenizer input: "bnf" or "bnf+init"
    iterations: int = 1
    net_hidden: tuple = (256, 256)
    net_bottleneck: int = 39
    net_context: int = 4
    net_learning_rate: float = 0.1
    net_batch_size: int = 64
    net_epochs: int = 600
    length_normalize: bool = True
    z_normalize: bool = True
    search_metric: str = "euclidean"
    abx_metric: str = "cosine"
    abx_max_per_pair: int = 50
    tolerance: int = 2
    seed: int = 0
    output_dir: str = "out"
    synth_utterances: int = 50
    synth_queries: int = 5
    synth_words: int = 3
    synth_phones: int = 6
    synth_dim: int = 12
    synth_speakers: int = 2
    synth_noise: float = 1.0
    synth_speaker_shift: float = 1.5
    synth_phone_spread: float = 1.0
    synth_duration: tuple = (5, 12)
    synth_dir: str | None = None
    source: str | None = field(default=None, compare=False)

    def validate(self, *, check_paths: bool = True) -> None:
        if self.grid_preset is not None:
            if self.grid_preset not in GRID_PRESETS:
                raise ConfigError(f"grid.preset must be one of {sorted(GRID_PRESETS)}")
            self.grid_m, self.grid_n = GRID_PRESETS[self.grid_preset]
        if not self.grid_m or not self.grid_n:
            raise ConfigError("grid.m and grid.n must be non-empty")
        if min(self.grid_m) < 2 or min(self.grid_n) < 2:
            raise ConfigError("grid values must be >= 2")
        for name in ("iterations", "max_epochs", "net_epochs", "net_batch_size", "net_bottleneck"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.mr_rounds < 0 or self.net_context < 0 or self.tolerance < 0:
            raise ConfigError("mr.rounds, net.context and eval.tolerance must be >= 0")
        if self.mr_weighting not in ("m", "uniform"):
            raise ConfigError("mr.weighting must be 'm' or 'uniform'")
        if len(self.mr_kernel) % 2 != 1 or min(self.mr_kernel) < 0:
            raise ConfigError("mr.kernel must have an odd number of non-negative taps")
        if self.mat_input not in ("bnf", "bnf+init"):
            raise ConfigError("mat.input must be 'bnf' or 'bnf+init'")
        if self.search_metric not in ("euclidean", "cosine") or self.abx_metric not in ("euclidean", "cosine"):
            raise ConfigError("metrics must be 'euclidean' or 'cosine'")
        if check_paths:
            if self.manifest is None:
                raise ConfigError("corpus.manifest is required")
            for attr in _INPUT_ATTRS:
                p = getattr(self, attr)
                if p is not None and not Path(p).exists():
                    raise ConfigError(f"corpus.{attr} path does not exist: {p}")

    @property
    def fusion(self):
        return FusionConfig(tuple(self.mr_kernel), self.mr_threshold, self.mr_min_gap, self.mr_min_segment)

    @property
    def net_params(self) -> dict:
        return {"hidden": self.net_hidden, "bottleneck": self.net_bottleneck,
                "learning_rate": self.net_learning_rate, "batch_size": self.net_batch_size,
                "epochs": self.net_epochs, "seed": self.seed}

    def to_text(self) -> str:
        """Serialize back to the flat key format (absolute paths)."""
        lines = []
        for key, (attr, _) in _KEYS.items():
            v = getattr(self, attr)
            if v is None:
                continue
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"


def parse_config(text: str, base_dir=".") -> PipelineConfig:
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[pipeline]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from exc
    cfg = PipelineConfig()
    for key, raw in parser["pipeline"].items():
        if key not in _KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        attr, conv = _KEYS[key]
        try:
            value = conv(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc
        if attr in _PATH_ATTRS:
            value = str((Path(base_dir) / value).resolve())
        setattr(cfg, attr, value)
    return cfg


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = parse_config(text, path.parent)
    cfg.source = str(path)
    return cfg
