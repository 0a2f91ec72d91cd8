"""The multi-layered tokenizer grid and the tokenizer/network feedback loop.

One iteration: fit every ``(m, n)`` layer on the current tokenizer input,
optionally reinforce the layers against each other, train the multi-target
network on all layers' frame labels, and extract bottleneck features. The
next iteration tokenizes the bottleneck features, while the network input
grows into a tandem of the initial features and every earlier set of
bottleneck features.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import hmmtok, reinforce
from ._validation import check_corpus, check_grid_values
from .corpusio import FeatureSequence
from .frontend import cmvn, concat_features, stack
from .mdnn import MultiTargetNet, extract_bnf

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GranularityGrid:
    """Temporal granularities ``m`` x phonetic granularities ``n``."""

    m: tuple = (3, 5, 7)
    n: tuple = (4, 8, 16)

    def __post_init__(self):
        object.__setattr__(self, "m", check_grid_values(self.m, "m", 2))
        object.__setattr__(self, "n", check_grid_values(self.n, "n", 2))

    @property
    def layers(self) -> list:
        return [(m, n) for m in self.m for n in self.n]

    def __len__(self):
        return len(self.m) * len(self.n)


DESK_GRID = GranularityGrid((3, 5, 7), (4, 8, 16))
FULL_GRID = GranularityGrid((3, 5, 7, 9), (50, 100, 300, 500))


def layer_seed(seed: int, layer) -> int:
    """Per-layer seed: ``seed`` XOR a stable hash of ``(m, n)``."""
    m, n = layer
    return (int(seed) ^ zlib.crc32(f"{m},{n}".encode())) & 0xFFFFFFFF


@dataclass
class LayerResult:
    tokens: hmmtok.TokenSet
    labels: dict
    log_likelihoods: list


@dataclass
class IterationState:
    iteration: int = 1
    layers: dict = field(default_factory=dict)     # (m, n) -> LayerResult
    feature_id: str = "mfcc"
    mr_rounds: int = 0
    audit: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)   # last MR round: fused segmentation, omega_0, LDA models

    def __post_init__(self):
        if self.iteration < 1:
            raise ValueError("iteration index starts at 1")

    def labelings(self) -> dict:
        return {layer: res.labels for layer, res in self.layers.items()}

    def copy(self) -> "IterationState":
        return IterationState(self.iteration, dict(self.layers), self.feature_id,
                              self.mr_rounds, list(self.audit))


def _as_corpus(corpus) -> dict:
    return {u: np.asarray(getattr(x, "frames", x), dtype=np.float64) for u, x in corpus.items()}


def run_mat(corpus: dict, grid: GranularityGrid, seed: int = 0, *, max_epochs: int = 10,
            iteration: int = 1, feature_id: str = "mfcc") -> IterationState:
    """Fit every layer of the grid independently."""
    if not corpus:
        raise ValueError("corpus is empty")
    corpus = _as_corpus(corpus)
    state = IterationState(iteration, {}, feature_id)
    for layer in grid.layers:
        m, n = layer
        try:
            init = hmmtok.initialize(corpus, m, n, layer_seed(seed, layer))
            tokens, labels, lls = hmmtok.fit_layer(corpus, m, n, init, max_epochs)
        except Exception as exc:
            raise RuntimeError(f"layer (m={m}, n={n}) failed: {exc}") from exc
        logger.info("iteration %d layer (%d,%d): %d epochs, log-likelihood %.2f",
                    iteration, m, n, len(lls), lls[-1])
        state.layers[layer] = LayerResult(tokens, labels, lls)
    return state


def reinforce_once(state: IterationState, corpus: dict, *, seed: int = 0, sweeps: int = 200,
                   weights=None, fusion=None, max_epochs: int = 10) -> IterationState:
    """One round of boundary fusion, LDA relabeling and layer refitting."""
    if len(state.layers) == 0:
        raise ValueError("state has no layers to reinforce")
    corpus = _as_corpus(corpus)
    counts = {u: len(x) for u, x in corpus.items()}
    labelings = state.labelings()
    fused = reinforce.fuse_boundaries(labelings, counts, weights, fusion)
    init_by_n, models = reinforce.relabel(fused, labelings, sweeps=sweeps, seed=seed)
    new = state.copy()
    new.layers = {}
    new.artifacts = {"fused": fused, "lda": models, "init": {}}
    for layer in state.layers:
        m, n = layer
        init = {u: hmmtok.enforce_min_length(seg, m) for u, seg in init_by_n[n].items()}
        new.artifacts["init"][layer] = init
        try:
            tokens, labels, lls = hmmtok.fit_layer(corpus, m, n, init, max_epochs)
        except Exception as exc:
            raise RuntimeError(f"layer (m={m}, n={n}) failed during reinforcement: {exc}") from exc
        new.layers[layer] = LayerResult(tokens, labels, lls)
    new.mr_rounds += 1
    new.audit.append({"mr_round": new.mr_rounds,
                      "fused_segments": int(sum(len(v) for v in fused.values())),
                      "lda_models": sorted(init_by_n)})
    return new


def apply_mr(state: IterationState, corpus: dict, rounds: int = 1, *, seed: int = 0,
             sweeps: int = 200, weights=None, fusion=None, max_epochs: int = 10) -> IterationState:
    """``rounds`` rounds of mutual reinforcement; zero rounds returns ``state`` unchanged."""
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    for r in range(rounds):
        state = reinforce_once(state, corpus, seed=seed + 1000 * r, sweeps=sweeps,
                               weights=weights, fusion=fusion, max_epochs=max_epochs)
    return state


# ---------------------------------------------------------------------------
# network side

def net_input_width(dim: int, context: int, iteration: int, aux_dim: int = 0,
                    frame_aux_dim: int = 0, bnf_dim: int | None = None) -> int:
    """Width of the network input at a given iteration.

    Iteration k stacks the initial features and the k-1 earlier bottleneck
    feature sets (each over ``2*context+1`` frames), plus the frame-level
    auxiliary stream from iteration 2 on, plus the per-utterance vector.
    """
    bnf_dim = dim if bnf_dim is None else bnf_dim
    span = 2 * context + 1
    width = dim * span + (iteration - 1) * bnf_dim * span + aux_dim
    if iteration >= 2:
        width += frame_aux_dim * span
    return width


def net_inputs(initial: dict, bnfs=(), *, context: int = 4, frame_aux: dict | None = None,
               utt_aux: dict | None = None) -> dict:
    """Tandem network input per utterance.

    Order: stacked initial features, stacked bottleneck features of each
    earlier iteration, stacked frame-level auxiliary features, per-utterance
    vector.
    """
    widths = {len(np.ravel(v)) for v in (utt_aux or {}).values()}
    if len(widths) > 1:
        raise ValueError(f"auxiliary vector dimension differs across the corpus: {sorted(widths)}")
    out = {}
    for utt, seq in initial.items():
        seq = seq if isinstance(seq, FeatureSequence) else FeatureSequence(seq, utt_id=utt)
        x = stack(seq, context)
        for bnf in bnfs:
            x = concat_features(x, stack(bnf[utt], context))
        if frame_aux is not None:
            x = concat_features(x, stack(frame_aux[utt], context))
        if utt_aux is not None:
            x = stack(x, 0, utt_aux[utt])
        out[utt] = x
    return out


def frame_targets(state: IterationState, utts) -> dict:
    """(T, G) token ids per utterance, one column per layer in grid order."""
    return {u: np.column_stack([hmmtok.framewise(res.labels[u]) for res in state.layers.values()])
            for u in utts}


def train_network(state: IterationState, inputs: dict, **net_params) -> MultiTargetNet:
    if not state.layers:
        raise ValueError("state has no layers to train against")
    utts = list(inputs)
    targets = frame_targets(state, utts)
    for u in utts:
        if len(targets[u]) != inputs[u].n_frames:
            raise ValueError(f"{u}: {len(targets[u])} target rows for {inputs[u].n_frames} input rows")
    X = np.vstack([inputs[u].frames for u in utts])
    Y = np.vstack([targets[u] for u in utts])
    sizes = [layer[1] for layer in state.layers]
    return MultiTargetNet(group_sizes=sizes, **net_params).fit(X, Y)


def run_iteration(state: IterationState, initial: dict, grid: GranularityGrid, *, bnfs=(),
                  context: int = 4, frame_aux=None, utt_aux=None, net_params=None,
                  seed: int = 0, max_epochs: int = 10) -> tuple:
    """Train the network on ``state``'s labels and tokenize its bottleneck features.

    Returns ``(next_state, bnf, net)``; ``next_state`` holds layers fitted on
    the (normalized) bottleneck features for iteration ``state.iteration + 1``.
    """
    if not state.layers:
        raise ValueError("state has no trained layers")
    inputs = net_inputs(initial, bnfs, context=context,
                        frame_aux=frame_aux if state.iteration >= 2 else None, utt_aux=utt_aux)
    net = train_network(state, inputs, **(net_params or {}))
    bnf = extract_bnf(net, inputs)
    mat_input = {u: cmvn(b).frames for u, b in bnf.items()}
    nxt = run_mat(mat_input, grid, seed, max_epochs=max_epochs, iteration=state.iteration + 1,
                  feature_id=f"bnf-{state.iteration}")
    return nxt, bnf, net


class MultiLayerTokenizer(BaseEstimator):
    """The full grid of tokenizer layers, with optional mutual reinforcement.

    Parameters
    ----------
    m_values, n_values : sequences of int
    mr_rounds : int
    max_epochs : int
    lda_sweeps : int
    seed : int

    Attributes
    ----------
    state_ : IterationState
    """

    def __init__(self, m_values=(3, 5, 7), n_values=(4, 8, 16), mr_rounds=0, max_epochs=10,
                 lda_sweeps=200, seed=0):
        self.m_values = m_values
        self.n_values = n_values
        self.mr_rounds = mr_rounds
        self.max_epochs = max_epochs
        self.lda_sweeps = lda_sweeps
        self.seed = seed

    def fit(self, X, y=None):
        ids, mats = check_corpus(X)
        corpus = dict(zip(ids, mats))
        grid = GranularityGrid(self.m_values, self.n_values)
        state = run_mat(corpus, grid, self.seed, max_epochs=self.max_epochs)
        self.state_ = apply_mr(state, corpus, self.mr_rounds, seed=self.seed,
                               sweeps=self.lda_sweeps, max_epochs=self.max_epochs)
        return self

    def predict(self, X) -> dict:
        """``{(m, n): [segments per sequence]}``."""
        check_is_fitted(self, "state_")
        _, mats = check_corpus(X)
        return {layer: [hmmtok.decode(x, res.tokens)[0] for x in mats]
                for layer, res in self.state_.layers.items()}

    def transform(self, X):
        """(T, n_layers) frame-level token ids per sequence."""
        per_layer = self.predict(X)
        layers = list(per_layer)
        n_seq = len(per_layer[layers[0]])
        return [np.column_stack([hmmtok.framewise(per_layer[l][i]) for l in layers]) for i in range(n_seq)]
