"""The event-occurrence predictor and its training machinery.

The main network embeds an 8-step temporal sequence through a two-layer GRU
and the accident/regional vectors through sigmoid dense layers, then scores
the concatenation with a ReLU head (512-256-64-2, batch norm after the
second and third layers, softmax output). Baselines: the same head on raw
concatenated features (DNN) and plain logistic regression.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .nn import (
    AdamState, BatchNormState, ShapeError, adam_step, batchnorm_backward,
    batchnorm_forward, cross_entropy, dense_backward, dense_forward,
    dropout_backward, dropout_forward, gru_init, gru_layer_backward,
    gru_layer_forward, relu_backward, relu_forward, sigmoid_dense_backward,
    sigmoid_dense_forward, softmax, softmax_cross_entropy_backward,
    xavier_uniform,
)

ALL_GROUPS = ("temporal", "accident", "regional")


class ModelError(ValueError):
    """Invalid model configuration or data."""


@dataclass(frozen=True)
class NetworkConfig:
    accident_dim: int
    regional_dim: int
    temporal_dim: int = 36
    history_len: int = 8
    gru_hidden: int = 128
    embed_dim: int = 128
    head_dims: tuple[int, ...] = (512, 256, 64, 2)
    dropout: float = 0.2


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    dropout: float = 0.2
    epochs: int = 60
    patience: int = 15
    batch_size: int = 64
    seed: int = 0

    def validate(self) -> None:
        if self.learning_rate <= 0 or self.epochs <= 0 or self.batch_size <= 0:
            raise ModelError("learning rate, epochs and batch size must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ModelError("dropout must be in [0, 1)")
        if self.patience > self.epochs:
            raise ModelError("patience cannot exceed the epoch budget")


@dataclass
class ArrayDataset:
    """Sample arrays in training layout."""
    temporal: np.ndarray   # (N, history, temporal_dim)
    accident: np.ndarray   # (N, accident_dim)
    regional: np.ndarray   # (N, regional_dim)
    labels: np.ndarray     # (N,) in {0, 1}

    def __post_init__(self):
        n = len(self.labels)
        if not (len(self.temporal) == len(self.accident) == len(self.regional) == n):
            raise ModelError("dataset arrays disagree on sample count")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "ArrayDataset":
        return ArrayDataset(self.temporal[idx], self.accident[idx],
                            self.regional[idx], self.labels[idx])

    def flat_features(self) -> np.ndarray:
        return np.concatenate(
            [self.temporal.reshape(len(self), -1), self.accident, self.regional], axis=1)


# ----------------------------------------------------------- head (shared)

def _head_init(rng, in_dim: int, dims: tuple[int, ...]) -> dict[str, np.ndarray]:
    d1, d2, d3, d4 = dims
    return {
        "head1.w": xavier_uniform(rng, in_dim, d1), "head1.b": np.zeros(d1),
        "head2.w": xavier_uniform(rng, d1, d2), "head2.b": np.zeros(d2),
        "bn2.gamma": np.ones(d2), "bn2.beta": np.zeros(d2),
        "head3.w": xavier_uniform(rng, d2, d3), "head3.b": np.zeros(d3),
        "bn3.gamma": np.ones(d3), "bn3.beta": np.zeros(d3),
        "head4.w": xavier_uniform(rng, d3, d4), "head4.b": np.zeros(d4),
    }


def _head_forward(p, x, bn_state, train: bool, update_running: bool):
    z1, c1 = dense_forward(x, p["head1.w"], p["head1.b"])
    a1, m1 = relu_forward(z1)
    z2, c2 = dense_forward(a1, p["head2.w"], p["head2.b"])
    n2, cb2 = batchnorm_forward(z2, p["bn2.gamma"], p["bn2.beta"], bn_state["bn2"],
                                train, update_running=update_running)
    a2, m2 = relu_forward(n2)
    z3, c3 = dense_forward(a2, p["head3.w"], p["head3.b"])
    n3, cb3 = batchnorm_forward(z3, p["bn3.gamma"], p["bn3.beta"], bn_state["bn3"],
                                train, update_running=update_running)
    a3, m3 = relu_forward(n3)
    logits, c4 = dense_forward(a3, p["head4.w"], p["head4.b"])
    probs = softmax(logits)
    return probs, (c1, m1, c2, cb2, m2, c3, cb3, m3, c4)


def _head_backward(d_logits, cache, grads):
    c1, m1, c2, cb2, m2, c3, cb3, m3, c4 = cache
    d_a3, grads["head4.w"], grads["head4.b"] = dense_backward(d_logits, c4)
    d_n3 = relu_backward(d_a3, m3)
    d_z3, grads["bn3.gamma"], grads["bn3.beta"] = batchnorm_backward(d_n3, cb3)
    d_a2, grads["head3.w"], grads["head3.b"] = dense_backward(d_z3, c3)
    d_n2 = relu_backward(d_a2, m2)
    d_z2, grads["bn2.gamma"], grads["bn2.beta"] = batchnorm_backward(d_n2, cb2)
    d_a1, grads["head2.w"], grads["head2.b"] = dense_backward(d_z2, c2)
    d_z1 = relu_backward(d_a1, m1)
    d_x, grads["head1.w"], grads["head1.b"] = dense_backward(d_z1, c1)
    return d_x


def fresh_bn_state() -> dict[str, BatchNormState]:
    return {"bn2": BatchNormState(), "bn3": BatchNormState()}


def _copy_bn_state(state) -> dict[str, BatchNormState]:
    return {k: BatchNormState(None if v.mean is None else v.mean.copy(),
                              None if v.var is None else v.var.copy())
            for k, v in state.items()}


# ----------------------------------------------------------- main predictor

class PredictorNet:
    """GRU temporal embedding + dense embeddings + classifier head."""

    kind = "acap"

    def __init__(self, config: NetworkConfig):
        self.config = config

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        c = self.config
        params = {}
        for layer, in_dim in (("gru0", c.temporal_dim), ("gru1", c.gru_hidden)):
            for name, arr in gru_init(rng, in_dim, c.gru_hidden).items():
                params[f"{layer}.{name}"] = arr
        params["acc.w"] = xavier_uniform(rng, c.accident_dim, c.embed_dim)
        params["acc.b"] = np.zeros(c.embed_dim)
        params["reg.w"] = xavier_uniform(rng, c.regional_dim, c.embed_dim)
        params["reg.b"] = np.zeros(c.embed_dim)
        params.update(_head_init(rng, c.gru_hidden + 2 * c.embed_dim, c.head_dims))
        return params

    def forward(self, params, data: ArrayDataset, bn_state, train: bool,
                dropout_rng: np.random.Generator | None = None,
                update_running: bool = False,
                active_groups: tuple[str, ...] = ALL_GROUPS):
        c = self.config
        if data.temporal.shape[1:] != (c.history_len, c.temporal_dim):
            raise ShapeError(f"temporal array {data.temporal.shape} does not match "
                             f"(*, {c.history_len}, {c.temporal_dim})")
        h0_seq, g0 = gru_layer_forward(data.temporal, params["gru0.wx"],
                                       params["gru0.wh"], params["gru0.wc"],
                                       params["gru0.b"])
        p = c.dropout if train else 0.0
        h0_drop, drop_mask = dropout_forward(h0_seq, p, dropout_rng)
        h1_seq, g1 = gru_layer_forward(h0_drop, params["gru1.wx"], params["gru1.wh"],
                                       params["gru1.wc"], params["gru1.b"])
        t_emb = h1_seq[:, -1, :]
        a_emb, ca = sigmoid_dense_forward(data.accident, params["acc.w"], params["acc.b"])
        r_emb, cr = sigmoid_dense_forward(data.regional, params["reg.w"], params["reg.b"])
        masks = tuple(1.0 if g in active_groups else 0.0 for g in ALL_GROUPS)
        x = np.concatenate([t_emb * masks[0], a_emb * masks[1], r_emb * masks[2]], axis=1)
        probs, head_cache = _head_forward(params, x, bn_state, train, update_running)
        cache = (g0, drop_mask, g1, ca, cr, masks, head_cache,
                 data.temporal.shape, probs)
        return probs, cache

    def backward(self, params, cache, labels) -> dict[str, np.ndarray]:
        g0, drop_mask, g1, ca, cr, masks, head_cache, t_shape, probs = cache
        c = self.config
        grads: dict[str, np.ndarray] = {}
        d_logits = softmax_cross_entropy_backward(probs, labels)
        d_x = _head_backward(d_logits, head_cache, grads)
        h = c.gru_hidden
        e = c.embed_dim
        d_temb = d_x[:, :h] * masks[0]
        d_aemb = d_x[:, h:h + e] * masks[1]
        d_remb = d_x[:, h + e:] * masks[2]
        _, grads["acc.w"], grads["acc.b"] = sigmoid_dense_backward(d_aemb, ca)
        _, grads["reg.w"], grads["reg.b"] = sigmoid_dense_backward(d_remb, cr)
        d_h1_seq = np.zeros((t_shape[0], t_shape[1], h))
        d_h1_seq[:, -1, :] = d_temb
        d_h0_drop, dwx1, dwh1, dwc1, db1 = gru_layer_backward(d_h1_seq, g1)
        grads.update({"gru1.wx": dwx1, "gru1.wh": dwh1, "gru1.wc": dwc1, "gru1.b": db1})
        d_h0_seq = dropout_backward(d_h0_drop, drop_mask)
        _, dwx0, dwh0, dwc0, db0 = gru_layer_backward(d_h0_seq, g0)
        grads.update({"gru0.wx": dwx0, "gru0.wh": dwh0, "gru0.wc": dwc0, "gru0.b": db0})
        return grads


def gru_forward(seq: np.ndarray, params: dict[str, np.ndarray],
                dropout_active: bool = False,
                rng: np.random.Generator | None = None,
                dropout: float = 0.2) -> np.ndarray:
    """Temporal embedding of one sequence (T, D) or a batch (B, T, D).

    Dropout between the two stacked layers fires only when requested; the
    returned embedding is the final hidden state of the second layer.
    """
    squeeze = seq.ndim == 2
    x = seq[None, :, :] if squeeze else seq
    h0, _ = gru_layer_forward(x, params["gru0.wx"], params["gru0.wh"],
                              params["gru0.wc"], params["gru0.b"])
    h0, _ = dropout_forward(h0, dropout if dropout_active else 0.0,
                            rng if dropout_active else None)
    h1, _ = gru_layer_forward(h0, params["gru1.wx"], params["gru1.wh"],
                              params["gru1.wc"], params["gru1.b"])
    emb = h1[:, -1, :]
    return emb[0] if squeeze else emb


def dense_embed(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Sigmoid feed-forward embedding, components in (0, 1)."""
    squeeze = x.ndim == 1
    out, _ = sigmoid_dense_forward(x[None, :] if squeeze else x, w, b)
    return out[0] if squeeze else out


def classifier_forward(temporal_emb: np.ndarray, accident_emb: np.ndarray,
                       regional_emb: np.ndarray, params: dict[str, np.ndarray],
                       bn_state: dict[str, BatchNormState],
                       train: bool = False) -> np.ndarray:
    """Head probabilities from the three embeddings.

    Train mode normalizes with batch statistics; eval mode requires running
    statistics from prior training and errors out otherwise.
    """
    x = np.concatenate([temporal_emb, accident_emb, regional_emb], axis=1)
    probs, _ = _head_forward(params, x, bn_state, train, update_running=False)
    return probs


# -------------------------------------------------------------- dnn baseline

class DNNNet:
    """The classifier head applied directly to raw concatenated features."""

    kind = "dnn"

    def __init__(self, config: NetworkConfig):
        self.config = config
        self.in_dim = (config.history_len * config.temporal_dim
                       + config.accident_dim + config.regional_dim)

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        return _head_init(rng, self.in_dim, self.config.head_dims)

    def forward(self, params, data: ArrayDataset, bn_state, train: bool,
                dropout_rng=None, update_running: bool = False,
                active_groups: tuple[str, ...] = ALL_GROUPS):
        x = data.flat_features()
        probs, head_cache = _head_forward(params, x, bn_state, train, update_running)
        return probs, (head_cache, probs)

    def backward(self, params, cache, labels) -> dict[str, np.ndarray]:
        head_cache, probs = cache
        grads: dict[str, np.ndarray] = {}
        _head_backward(softmax_cross_entropy_backward(probs, labels), head_cache, grads)
        return grads


# ------------------------------------------------------------ training loop

class EarlyStopper:
    """Stop after `patience` consecutive epochs without improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.bad = 0

    def update(self, loss: float) -> tuple[bool, bool]:
        """(improved, should_stop) after observing one epoch's loss."""
        if loss < self.best:
            self.best = loss
            self.bad = 0
            return True, False
        self.bad += 1
        return False, self.bad >= self.patience


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    improved: bool


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    bn_state: dict[str, BatchNormState]
    log: list[EpochLog]
    best_epoch: int
    best_val_loss: float
    stopped_early: bool


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    idx = rng.permutation(n)
    bounds = list(range(0, n, batch_size))
    slices = [idx[b:b + batch_size] for b in bounds]
    # Batch norm needs >= 2 samples; fold a trailing singleton into its
    # predecessor instead of dropping it.
    if len(slices) > 1 and len(slices[-1]) == 1:
        slices[-2] = np.concatenate([slices[-2], slices[-1]])
        slices.pop()
    return slices


def evaluate_loss(net, params, bn_state, data: ArrayDataset, batch_size: int = 512) -> float:
    total = 0.0
    for start in range(0, len(data), batch_size):
        sub = data.subset(slice(start, start + batch_size))
        probs, _ = net.forward(params, sub, bn_state, train=False)
        total += cross_entropy(probs, sub.labels) * len(sub)
    return total / len(data)


def train(net, train_data: ArrayDataset, val_data: ArrayDataset,
          config: TrainConfig,
          active_groups: tuple[str, ...] = ALL_GROUPS) -> TrainResult:
    """Adam + early stopping; returns the parameters of the best epoch.

    Deterministic for a fixed seed: initialization, shuffling and dropout all
    draw from one generator seeded by config.seed.
    """
    config.validate()
    if not len(train_data) or not len(val_data):
        raise ModelError("training and validation sets must be non-empty")
    rng = np.random.default_rng(config.seed)
    params = net.init_params(rng)
    bn_state = fresh_bn_state()
    adam = AdamState()
    stopper = EarlyStopper(config.patience)
    log: list[EpochLog] = []
    best_params = None
    best_bn = None
    best_epoch = 0
    stopped_early = False

    for epoch in range(1, config.epochs + 1):
        losses = []
        for batch_idx in _batches(len(train_data), config.batch_size, rng):
            sub = train_data.subset(batch_idx)
            probs, cache = net.forward(params, sub, bn_state, train=True,
                                       dropout_rng=rng, update_running=True,
                                       active_groups=active_groups)
            losses.append(cross_entropy(probs, sub.labels))
            grads = net.backward(params, cache, sub.labels)
            adam_step(params, grads, adam, config.learning_rate,
                      config.beta1, config.beta2, config.adam_eps)
        val_loss = evaluate_loss(net, params, bn_state, val_data)
        improved, should_stop = stopper.update(val_loss)
        log.append(EpochLog(epoch, float(np.mean(losses)), val_loss, improved))
        if improved:
            best_params = {k: v.copy() for k, v in params.items()}
            best_bn = _copy_bn_state(bn_state)
            best_epoch = epoch
        if should_stop:
            stopped_early = True
            break
    return TrainResult(best_params, best_bn, log, best_epoch, stopper.best, stopped_early)


def predict(net, params, bn_state, data: ArrayDataset,
            batch_size: int = 512,
            active_groups: tuple[str, ...] = ALL_GROUPS) -> np.ndarray:
    """Binary labels from softmax output; ties resolve to the negative class."""
    out = np.empty(len(data), dtype=int)
    for start in range(0, len(data), batch_size):
        sub = data.subset(slice(start, start + batch_size))
        probs, _ = net.forward(params, sub, bn_state, train=False,
                               active_groups=active_groups)
        out[start:start + len(sub)] = (probs[:, 1] > probs[:, 0]).astype(int)
    return out


# -------------------------------------------------- logistic regression (LR)

@dataclass
class LogisticModel:
    w: np.ndarray
    b: float
    loss_trace: list[float] = field(default_factory=list)


def logistic_regression_train(data: ArrayDataset, lr: float = 0.5,
                              epochs: int = 500, seed: int = 0) -> LogisticModel:
    """Full-batch gradient descent on the logistic loss over flat features."""
    if not len(data):
        raise ModelError("empty training set")
    x = data.flat_features()
    y = data.labels.astype(float)
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 0.01, size=x.shape[1])
    b = 0.0
    trace = []
    n = len(y)
    for _ in range(epochs):
        z = x @ w + b
        p = 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
        eps = 1e-12
        trace.append(float(-(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)).mean()))
        err = p - y
        w -= lr * (x.T @ err) / n
        b -= lr * float(err.mean())
    return LogisticModel(w, b, trace)


def logistic_regression_predict(model: LogisticModel, data: ArrayDataset) -> np.ndarray:
    z = data.flat_features() @ model.w + model.b
    return (z > 0.0).astype(int)  # p > 0.5


# ---------------------------------------------------------------- checkpoint

CHECKPOINT_FORMAT = "geogrow-checkpoint"


def save_checkpoint(params, bn_state, meta: dict | None = None) -> str:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "meta": meta or {},
        "tensors": {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in sorted(params.items())
        },
        "running": {
            name: {"mean": None if st.mean is None else st.mean.tolist(),
                   "var": None if st.var is None else st.var.tolist()}
            for name, st in sorted(bn_state.items())
        },
    }
    return json.dumps(doc, sort_keys=True)


def load_checkpoint(text: str):
    doc = json.loads(text)
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != 1:
        raise ModelError("not a recognized checkpoint document")
    params = {
        name: np.array(spec["data"], dtype=float).reshape(spec["shape"])
        for name, spec in doc["tensors"].items()
    }
    bn_state = {}
    for name, st in doc["running"].items():
        bn_state[name] = BatchNormState(
            None if st["mean"] is None else np.array(st["mean"], dtype=float),
            None if st["var"] is None else np.array(st["var"], dtype=float))
    return params, bn_state, doc["meta"]
