"""Multi-target feed-forward network with a bottleneck layer.

Topology: input -> sigmoid hidden layers -> sigmoid bottleneck -> one softmax
group per tokenizer layer. Training minimizes the mean over groups of the
per-group cross-entropy against frame-level token labels, by minibatch SGD.
The bottleneck activations are the learned features.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_softmax
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .corpusio import FeatureSequence, read_model, write_model

logger = logging.getLogger(__name__)


@dataclass
class NetConfig:
    input_width: int
    group_sizes: list
    hidden: tuple = (256, 256)
    bottleneck: int = 39
    learning_rate: float = 0.1
    batch_size: int = 64
    epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.group_sizes = [int(g) for g in self.group_sizes]
        if self.input_width < 1 or self.bottleneck < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("layer widths must be >= 1")
        if not self.group_sizes or any(g < 2 for g in self.group_sizes):
            raise ValueError("every output group needs >= 2 classes")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be > 0")

    @property
    def sigmoid_widths(self) -> list:
        return [self.input_width, *self.hidden, self.bottleneck]


@dataclass
class Params:
    """Weights ``W[i]`` (fan_in, fan_out) and biases ``b[i]``.

    The first ``len(hidden) + 1`` entries are the sigmoid trunk ending at the
    bottleneck; ``heads`` holds one (W, b) pair per output group.
    """

    W: list
    b: list
    heads: list = field(default_factory=list)

    def arrays(self) -> list:
        out = []
        for W, b in zip(self.W, self.b):
            out += [W, b]
        for W, b in self.heads:
            out += [W, b]
        return out

    def copy(self) -> "Params":
        return Params([w.copy() for w in self.W], [b.copy() for b in self.b],
                      [(W.copy(), b.copy()) for W, b in self.heads])

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())


def init_params(config: NetConfig) -> Params:
    """Weights uniform in +-1/sqrt(fan_in), zero biases."""
    rng = np.random.default_rng(config.seed)
    widths = config.sigmoid_widths
    W, b = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        lim = 1.0 / np.sqrt(fan_in)
        W.append(rng.uniform(-lim, lim, (fan_in, fan_out)))
        b.append(np.zeros(fan_out))
    lim = 1.0 / np.sqrt(config.bottleneck)
    heads = [(rng.uniform(-lim, lim, (config.bottleneck, g)), np.zeros(g)) for g in config.group_sizes]
    return Params(W, b, heads)


def forward(params: Params, X: np.ndarray, return_cache: bool = False):
    """Bottleneck activations and per-group softmax distributions for a batch."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.W[0].shape[0]:
        raise ValueError(f"expected input width {params.W[0].shape[0]}, got shape {X.shape}")
    acts = [X]
    for W, b in zip(params.W, params.b):
        acts.append(expit(acts[-1] @ W + b))
    z = acts[-1]
    log_probs = [log_softmax(z @ W + b, axis=1) for W, b in params.heads]
    probs = [np.exp(lp) for lp in log_probs]
    if return_cache:
        return z, probs, (acts, log_probs)
    return z, probs


def loss_and_grads(params: Params, X: np.ndarray, targets: np.ndarray, group_weights=None) -> tuple:
    """Mean-over-groups cross-entropy and its gradient.

    ``targets`` is (B, G) integer class ids. ``group_weights`` defaults to
    uniform ``1/G``; it exists for verification only.
    """
    targets = np.asarray(targets)
    B, G = targets.shape
    gw = np.full(G, 1.0 / G) if group_weights is None else np.asarray(group_weights, dtype=np.float64)
    z, probs, (acts, log_probs) = forward(params, X, return_cache=True)
    rows = np.arange(B)
    loss = 0.0
    dz = np.zeros_like(z)
    head_grads = []
    for g, ((W, b), p, lp) in enumerate(zip(params.heads, probs, log_probs)):
        loss -= gw[g] * lp[rows, targets[:, g]].mean()
        dlogit = p.copy()
        dlogit[rows, targets[:, g]] -= 1.0
        dlogit *= gw[g] / B
        head_grads.append((z.T @ dlogit, dlogit.sum(axis=0)))
        dz += dlogit @ W.T
    gW, gb = [None] * len(params.W), [None] * len(params.W)
    delta = dz * z * (1.0 - z)
    for i in range(len(params.W) - 1, -1, -1):
        gW[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            a = acts[i]
            delta = (delta @ params.W[i].T) * a * (1.0 - a)
    return float(loss), Params(gW, gb, head_grads)


def sgd_step(params: Params, grads: Params, lr: float) -> None:
    for p, g in zip(params.arrays(), grads.arrays()):
        p -= lr * g


def train(params: Params, X: np.ndarray, targets: np.ndarray, config: NetConfig) -> tuple:
    """Minibatch SGD with a seeded shuffle per epoch; returns ``(params, epoch_losses)``.

    Epoch loss is the frame-weighted mean of the minibatch losses.
    """
    X = np.asarray(X, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    if len(X) != len(targets):
        raise ValueError(f"{len(X)} input rows but {len(targets)} target rows")
    if targets.shape[1] != len(params.heads):
        raise ValueError("one target column per output group is required")
    sizes = np.array([W.shape[1] for W, _ in params.heads])
    if np.any(targets < 0) or np.any(targets >= sizes):
        raise ValueError("target id outside its group's range")
    rng = np.random.default_rng(config.seed + 1)
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(X))
        total = 0.0
        for start in range(0, len(X), config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = loss_and_grads(params, X[idx], targets[idx])
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch + 1}; "
                    f"lower the learning rate (currently {config.learning_rate})")
            sgd_step(params, grads, config.learning_rate)
            total += loss * len(idx)
        history.append(total / len(X))
        logger.debug("epoch %d: loss %.5f", epoch + 1, history[-1])
    return params, history


def gradient_check(params: Params, X: np.ndarray, targets: np.ndarray, h: float = 1e-5,
                   group_weights=None) -> float:
    """Largest elementwise relative error of backprop against central differences.

    Relative error is ``|a - n| / max(|a| + |n|, 1e-8)``.
    """
    if params.size > 10_000:
        raise ValueError("gradient check is meant for nets with <= 1e4 parameters")
    _, grads = loss_and_grads(params, X, targets, group_weights)
    worst = 0.0
    for p, g in zip(params.arrays(), grads.arrays()):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up, _ = loss_and_grads(params, X, targets, group_weights)
            flat[i] = orig - h
            down, _ = loss_and_grads(params, X, targets, group_weights)
            flat[i] = orig
            num = (up - down) / (2 * h)
            err = abs(gflat[i] - num) / max(abs(gflat[i]) + abs(num), 1e-8)
            worst = max(worst, err)
    return worst


def save_params(path, params: Params, config: NetConfig) -> None:
    meta = {"input_width": config.input_width, "group_sizes": config.group_sizes,
            "hidden": list(config.hidden), "bottleneck": config.bottleneck,
            "learning_rate": config.learning_rate, "batch_size": config.batch_size,
            "epochs": config.epochs, "seed": config.seed}
    arrays = {}
    for i, (W, b) in enumerate(zip(params.W, params.b)):
        arrays[f"W{i}"], arrays[f"b{i}"] = W, b
    for g, (W, b) in enumerate(params.heads):
        arrays[f"head{g}_W"], arrays[f"head{g}_b"] = W, b
    write_model(path, "mdnn", meta, arrays)


def load_params(path) -> tuple:
    _, meta, arrays = read_model(path, kind="mdnn")
    config = NetConfig(**meta)
    n_trunk = len(config.hidden) + 1
    params = Params([arrays[f"W{i}"] for i in range(n_trunk)], [arrays[f"b{i}"] for i in range(n_trunk)],
                    [(arrays[f"head{g}_W"], arrays[f"head{g}_b"]) for g in range(len(config.group_sizes))])
    return params, config


class MultiTargetNet(TransformerMixin, BaseEstimator):
    """Multi-target bottleneck network as a scikit-learn transformer.

    ``fit(X, Y)`` takes stacked input frames ``X`` (N, input width) and a
    (N, G) matrix of token ids, one column per tokenizer layer. ``transform``
    returns bottleneck features.

    Parameters
    ----------
    group_sizes : list of int or None
        Classes per output group; inferred as ``Y.max(axis=0) + 1`` if None.
    hidden, bottleneck, learning_rate, batch_size, epochs, seed
        See :class:`NetConfig`.
    """

    def __init__(self, group_sizes=None, hidden=(256, 256), bottleneck=39, learning_rate=0.1,
                 batch_size=64, epochs=20, seed=0):
        self.group_sizes = group_sizes
        self.hidden = hidden
        self.bottleneck = bottleneck
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed

    def fit(self, X, Y):
        X = check_array(X, dtype=np.float64)
        Y = check_array(Y, dtype=np.int64, ensure_2d=False)
        if Y.ndim == 1:
            Y = Y[:, None]
        sizes = self.group_sizes
        if sizes is None:
            sizes = [max(2, int(v) + 1) for v in Y.max(axis=0)]
        self.config_ = NetConfig(X.shape[1], list(sizes), self.hidden, self.bottleneck,
                                 self.learning_rate, self.batch_size, self.epochs, self.seed)
        self.params_, self.loss_curve_ = train(init_params(self.config_), X, Y, self.config_)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        return forward(self.params_, check_array(X, dtype=np.float64))[0]

    def predict_proba(self, X):
        """List of (N, n_g) class distributions, one per output group."""
        check_is_fitted(self, "params_")
        return forward(self.params_, check_array(X, dtype=np.float64))[1]

    def predict(self, X):
        return np.column_stack([p.argmax(axis=1) for p in self.predict_proba(X)])

    def save(self, path) -> None:
        check_is_fitted(self, "params_")
        save_params(path, self.params_, self.config_)

    @classmethod
    def load(cls, path) -> "MultiTargetNet":
        params, config = load_params(path)
        net = cls(config.group_sizes, config.hidden, config.bottleneck, config.learning_rate,
                  config.batch_size, config.epochs, config.seed)
        net.params_, net.config_, net.n_features_in_ = params, config, config.input_width
        return net


def extract_bnf(net: MultiTargetNet, inputs: dict) -> dict:
    """Bottleneck features ``{utt: (T, bottleneck)}`` for stacked inputs ``{utt: seq}``."""
    out = {}
    for utt, seq in inputs.items():
        frames = getattr(seq, "frames", seq)
        period = getattr(seq, "frame_period", 10)
        out[utt] = FeatureSequence(net.transform(frames), period, utt)
    return out
