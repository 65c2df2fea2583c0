"""Deterministic feed-forward classifier with manual backprop and Adam.

Written directly in numpy (float64 throughout) so that parameter
initialization order, epoch shuffling, and update arithmetic are fully pinned
by the config seed: identical seeds give byte-identical models. Gradients are
hand-derived, which also lets the embedding-fusion trainer reuse the input
gradient.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ContractError, DivergenceError

HEAD_SOFTMAX_2 = "softmax_2"
HEAD_SOFTMAX_7 = "softmax_7"
HEAD_SIGMOID_4 = "sigmoid_4"

HEAD_ARITY = {HEAD_SOFTMAX_2: 2, HEAD_SOFTMAX_7: 7, HEAD_SIGMOID_4: 4}

Params = list[tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class MLPConfig:
    input_dim: int
    hidden_dims: tuple[int, ...] = (512, 512, 512)
    activation: str = "relu"
    output_head: str = HEAD_SOFTMAX_2
    epochs: int = 500
    learning_rate: float = 0.001
    batch_size: int = 64
    seed: int = 0

    @property
    def output_dim(self) -> int:
        return HEAD_ARITY[self.output_head]

    @property
    def is_multilabel(self) -> bool:
        return self.output_head.startswith("sigmoid")

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "activation": self.activation,
            "output_head": self.output_head,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "MLPConfig":
        raw = dict(raw)
        raw["hidden_dims"] = tuple(raw["hidden_dims"])
        return cls(**raw)


def init_params(config: MLPConfig, rng: Optional[np.random.Generator] = None) -> Params:
    """He-initialized weights, drawn layer by layer in a fixed order."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    dims = [config.input_dim, *config.hidden_dims, config.output_dim]
    params: Params = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weight = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        params.append((weight, np.zeros(fan_out)))
    return params


def forward(params: Params, X: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Return (logits, post-activation cache including the input)."""
    cache = [X]
    h = X
    for weight, bias in params[:-1]:
        h = np.maximum(h @ weight + bias, 0.0)
        cache.append(h)
    weight, bias = params[-1]
    logits = h @ weight + bias
    return logits, cache


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def sigmoid(logits: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-logits))


def head_scores(logits: np.ndarray, output_head: str) -> np.ndarray:
    if output_head.startswith("softmax"):
        return softmax(logits)
    return sigmoid(logits)


def _one_hot(y: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((y.shape[0], k))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def encode_targets(y: np.ndarray, config: MLPConfig) -> np.ndarray:
    k = config.output_dim
    y = np.asarray(y)
    if config.is_multilabel:
        if y.ndim != 2 or y.shape[1] != k:
            raise ContractError(f"multilabel targets must be (n, {k}), got {y.shape}")
        if not np.isin(y, (0, 1)).all():
            raise ContractError("multilabel targets must be 0/1 indicators")
        return y.astype(np.float64)
    if y.ndim != 1:
        raise ContractError(f"class targets must be a 1-d array, got shape {y.shape}")
    if y.min() < 0 or y.max() >= k:
        raise ContractError(f"class index outside head arity {k}: range [{y.min()}, {y.max()}]")
    return _one_hot(y.astype(int), k)


def loss_and_grads(
    params: Params, X: np.ndarray, targets: np.ndarray, output_head: str
) -> tuple[float, list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Mean loss, parameter gradients, and the gradient w.r.t. the input rows.

    Cross-entropy for softmax heads, per-label binary cross-entropy for
    sigmoid heads; both averaged so gradients are scale-free in batch size.
    """
    n = X.shape[0]
    logits, cache = forward(params, X)
    eps = 1e-12
    if output_head.startswith("softmax"):
        probs = softmax(logits)
        loss = float(-np.log(np.clip((probs * targets).sum(axis=1), eps, None)).mean())
        dlogits = (probs - targets) / n
    else:
        probs = sigmoid(logits)
        clipped = np.clip(probs, eps, 1.0 - eps)
        loss = float(
            -(targets * np.log(clipped) + (1.0 - targets) * np.log(1.0 - clipped)).mean()
        )
        dlogits = (probs - targets) / targets.size

    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(params)  # type: ignore[list-item]
    delta = dlogits
    for layer in range(len(params) - 1, -1, -1):
        h_in = cache[layer]
        weight, _ = params[layer]
        grads[layer] = (h_in.T @ delta, delta.sum(axis=0))
        delta = delta @ weight.T
        if layer > 0:
            delta = delta * (cache[layer] > 0.0)
    return loss, grads, delta


class Adam:
    """Standard adaptive-moment optimizer over a flat list of arrays."""

    def __init__(self, shapes: list[tuple[int, ...]], beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]

    def step(self, values: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for i, (value, grad) in enumerate(zip(values, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad * grad
            m_hat = self.m[i] / correction1
            v_hat = self.v[i] / correction2
            value -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    """Shuffle order for one epoch, a pure function of (seed, epoch, n)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, epoch]))
    return rng.permutation(n)


@dataclass
class TrainedModel:
    params: Params
    config: MLPConfig
    strategy_tag: str = ""
    loss_trace: list[float] = field(default_factory=list)

    @property
    def input_dim(self) -> int:
        return self.config.input_dim

    def predict_scores(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.config.input_dim:
            raise ContractError(
                f"input dim {X.shape[1] if X.ndim == 2 else X.shape} does not match "
                f"model contract {self.config.input_dim}"
            )
        logits, _ = forward(self.params, X)
        return head_scores(logits, self.config.output_head)


def train_mlp(X: np.ndarray, y: np.ndarray, config: MLPConfig, strategy_tag: str = "") -> TrainedModel:
    """Train the classifier; fully determined by (X, y, config).

    Raises ContractError on dimensionality/label violations and
    DivergenceError (with the epoch index) if the loss goes non-finite.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != config.input_dim:
        raise ContractError(
            f"training matrix is {X.shape}, config expects (*, {config.input_dim})"
        )
    targets = encode_targets(y, config)
    if targets.shape[0] != X.shape[0]:
        raise ContractError(f"{X.shape[0]} rows but {targets.shape[0]} targets")

    params = init_params(config)
    flat = [array for pair in params for array in pair]
    optimizer = Adam([a.shape for a in flat])

    n = X.shape[0]
    batch = max(1, config.batch_size)
    trace: list[float] = []
    for epoch in range(config.epochs):
        order = epoch_permutation(config.seed, epoch, n)
        epoch_loss = 0.0
        for start in range(0, n, batch):
            rows = order[start : start + batch]
            loss, grads, _ = loss_and_grads(params, X[rows], targets[rows], config.output_head)
            if not np.isfinite(loss):
                raise DivergenceError("training loss is not finite", epoch=epoch)
            flat_grads = [array for pair in grads for array in pair]
            optimizer.step(flat, flat_grads, config.learning_rate)
            epoch_loss += loss * rows.shape[0]
        trace.append(epoch_loss / n)
    return TrainedModel(params=params, config=config, strategy_tag=strategy_tag, loss_trace=trace)


def save_model(model: TrainedModel, path: str | Path, extra_arrays: Optional[dict] = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for i, (weight, bias) in enumerate(model.params):
        arrays[f"W{i}"] = weight
        arrays[f"b{i}"] = bias
    for key, value in (extra_arrays or {}).items():
        arrays[key] = value
    meta = {
        "config": model.config.to_dict(),
        "strategy_tag": model.strategy_tag,
        "loss_trace": model.loss_trace,
        "n_layers": len(model.params),
        "extra_keys": sorted((extra_arrays or {}).keys()),
    }
    buffer = io.BytesIO()
    np.savez(buffer, meta=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8), **arrays)
    path.write_bytes(buffer.getvalue())


def load_model(path: str | Path) -> tuple[TrainedModel, dict]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        params = [(data[f"W{i}"], data[f"b{i}"]) for i in range(meta["n_layers"])]
        extras = {key: data[key] for key in meta["extra_keys"]}
    config = MLPConfig.from_dict(meta["config"])
    model = TrainedModel(
        params=params,
        config=config,
        strategy_tag=meta["strategy_tag"],
        loss_trace=list(meta["loss_trace"]),
    )
    return model, extras
