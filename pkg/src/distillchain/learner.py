"""Dense feed-forward softmax classifier trained from scratch.

Plain numpy implementation: rectifier hidden layers, numerically stabilized
softmax output, soft-target cross-entropy, analytic backprop, Adam updates,
and accuracy-based early stopping with best-epoch weight selection.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import DataTable

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

LOG_CLAMP = 1e-12

INIT_SCHEME = "uniform-fan-in"


class NumericError(ArithmeticError):
    """A training computation produced non-finite values."""


@dataclass(frozen=True)
class ArchSpec:
    """Layer widths of the classifier; empty ``hidden`` means plain softmax
    regression."""

    input_dim: int
    hidden: tuple[int, ...] = ()
    output_dim: int = 2

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        widths = (self.input_dim, *self.hidden, self.output_dim)
        if any(w < 1 for w in widths):
            raise ValueError("all layer widths must be positive")
        if self.output_dim < 2:
            raise ValueError("output_dim must be >= 2")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_out, fan_in) per affine layer, input to output."""
        widths = (self.input_dim, *self.hidden, self.output_dim)
        return [(widths[i + 1], widths[i]) for i in range(len(widths) - 1)]


@dataclass(frozen=True)
class ModelParams:
    """Per-layer weight matrices (fan_out x fan_in) and bias vectors."""

    arch: ArchSpec
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        dims = self.arch.layer_dims
        if len(self.weights) != len(dims) or len(self.biases) != len(dims):
            raise ValueError("layer count does not match architecture")
        for (w, b), (fan_out, fan_in) in zip(zip(self.weights, self.biases), dims):
            if w.shape != (fan_out, fan_in) or b.shape != (fan_out,):
                raise ValueError("parameter shapes do not match architecture")


@dataclass(frozen=True)
class AdamState:
    """First/second moment estimates congruent to ModelParams plus the step
    counter."""

    m_weights: tuple[np.ndarray, ...]
    m_biases: tuple[np.ndarray, ...]
    v_weights: tuple[np.ndarray, ...]
    v_biases: tuple[np.ndarray, ...]
    t: int = 0

    @staticmethod
    def zeros(params: ModelParams) -> "AdamState":
        return AdamState(
            m_weights=tuple(np.zeros_like(w) for w in params.weights),
            m_biases=tuple(np.zeros_like(b) for b in params.biases),
            v_weights=tuple(np.zeros_like(w) for w in params.weights),
            v_biases=tuple(np.zeros_like(b) for b in params.biases),
            t=0,
        )


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; the epoch size is a fixed number of minibatch
    steps regardless of dataset size."""

    learning_rate: float = 1e-3
    batch_size: int = 32
    steps_per_epoch: int = 100
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if min(self.batch_size, self.steps_per_epoch) < 1:
            raise ValueError("batch_size and steps_per_epoch must be positive")
        if self.max_epochs < 0 or self.patience < 0:
            raise ValueError("max_epochs and patience must be non-negative")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    early_stop_accuracy: float


@dataclass(frozen=True)
class TrainHistory:
    """Per-epoch loss/accuracy trace and which epoch's weights were kept."""

    epochs: tuple[EpochStats, ...] = ()
    best_epoch: int | None = None
    best_accuracy: float | None = None
    init_scheme: str = INIT_SCHEME


def init_params(arch: ArchSpec, seed: int) -> ModelParams:
    """Seeded uniform(-a, a) weights with a = 1/sqrt(fan_in); zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_out, fan_in in arch.layer_dims:
        a = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-a, a, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out, dtype=np.float64))
    return ModelParams(arch=arch, weights=tuple(weights), biases=tuple(biases))


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _forward_cached(
    params: ModelParams, x: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    """Probabilities plus the activations and pre-activations backprop needs."""
    activations = [x]
    pre_acts = []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        pre_acts.append(z)
        if i < last:
            h = np.maximum(z, 0.0)
            activations.append(h)
    return _softmax(pre_acts[-1]), activations, pre_acts


def forward(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Class probabilities for a batch of feature vectors."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if x.shape[1] != params.arch.input_dim:
        raise ValueError(
            f"feature dim {x.shape[1]} does not match model input {params.arch.input_dim}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("features must be finite")
    probs, _, _ = _forward_cached(params, x)
    return probs


def soft_cross_entropy(probs: np.ndarray, target: np.ndarray) -> float:
    """Mean soft-target cross-entropy; probabilities are clamped at 1e-12
    before the log."""
    p = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    t = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if p.shape != t.shape:
        raise ValueError(f"probs shape {p.shape} does not match target shape {t.shape}")
    logs = np.log(np.maximum(p, LOG_CLAMP))
    return float(-(t * logs).sum(axis=1).mean())


def _backprop(
    params: ModelParams,
    probs: np.ndarray,
    targets: np.ndarray,
    activations: list[np.ndarray],
    pre_acts: list[np.ndarray],
) -> tuple[tuple[np.ndarray, ...], tuple[np.ndarray, ...]]:
    dz = (probs - targets) / probs.shape[0]
    grad_w: list[np.ndarray] = [None] * len(params.weights)  # type: ignore[list-item]
    grad_b: list[np.ndarray] = [None] * len(params.biases)  # type: ignore[list-item]
    for i in range(len(params.weights) - 1, -1, -1):
        grad_w[i] = dz.T @ activations[i]
        grad_b[i] = dz.sum(axis=0)
        if i > 0:
            dz = (dz @ params.weights[i]) * (pre_acts[i - 1] > 0.0)
    return tuple(grad_w), tuple(grad_b)


def backward(
    params: ModelParams, features: np.ndarray, targets: np.ndarray
) -> tuple[tuple[np.ndarray, ...], tuple[np.ndarray, ...]]:
    """Exact gradient of mean soft cross-entropy w.r.t. every weight and bias."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    t = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if t.shape != (x.shape[0], params.arch.output_dim):
        raise ValueError("targets shape does not match batch and output dim")

    probs, activations, pre_acts = _forward_cached(params, x)
    grad_w, grad_b = _backprop(params, probs, t, activations, pre_acts)
    for g in (*grad_w, *grad_b):
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient")
    return grad_w, grad_b


def adam_update(
    params: ModelParams,
    grads: tuple[tuple[np.ndarray, ...], tuple[np.ndarray, ...]],
    state: AdamState,
    learning_rate: float,
) -> tuple[ModelParams, AdamState]:
    """One Adam step with bias correction; returns fresh params and state."""
    grad_w, grad_b = grads
    t = state.t + 1
    bc1 = 1.0 - ADAM_BETA1**t
    bc2 = 1.0 - ADAM_BETA2**t

    def step(theta, g, m, v):
        m_new = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
        v_new = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * (g * g)
        theta_new = theta - learning_rate * (m_new / bc1) / (np.sqrt(v_new / bc2) + ADAM_EPS)
        return theta_new, m_new, v_new

    new_w, new_mw, new_vw = [], [], []
    for theta, g, m, v in zip(params.weights, grad_w, state.m_weights, state.v_weights):
        a, b, c = step(theta, g, m, v)
        new_w.append(a), new_mw.append(b), new_vw.append(c)
    new_b, new_mb, new_vb = [], [], []
    for theta, g, m, v in zip(params.biases, grad_b, state.m_biases, state.v_biases):
        a, b, c = step(theta, g, m, v)
        new_b.append(a), new_mb.append(b), new_vb.append(c)

    for arr in (*new_w, *new_b):
        if not np.all(np.isfinite(arr)):
            raise NumericError("non-finite parameter update")
    return (
        ModelParams(arch=params.arch, weights=tuple(new_w), biases=tuple(new_b)),
        AdamState(
            m_weights=tuple(new_mw),
            m_biases=tuple(new_mb),
            v_weights=tuple(new_vw),
            v_biases=tuple(new_vb),
            t=t,
        ),
    )


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError("labels outside [0, num_classes)")
    out = np.zeros((labels.shape[0], num_classes), dtype=np.float64)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


class _BatchStream:
    """Endless minibatch index stream: seeded shuffle, reshuffled on
    exhaustion, so small datasets are revisited within one epoch."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n = n
        self.batch_size = batch_size
        self.rng = rng
        self.order = rng.permutation(n)
        self.cursor = 0

    def next_batch(self) -> np.ndarray:
        take: list[np.ndarray] = []
        need = self.batch_size
        while need > 0:
            if self.cursor == self.n:
                self.order = self.rng.permutation(self.n)
                self.cursor = 0
            grab = min(need, self.n - self.cursor)
            take.append(self.order[self.cursor : self.cursor + grab])
            self.cursor += grab
            need -= grab
        return np.concatenate(take) if len(take) > 1 else take[0]


def train_with_early_stopping(
    arch: ArchSpec,
    features: np.ndarray,
    targets: np.ndarray,
    early_stop: DataTable,
    config: TrainConfig,
    init: ModelParams | None = None,
) -> tuple[ModelParams, TrainHistory]:
    """Train on (features, soft targets), keeping the weights of the epoch
    with the best hard accuracy on ``early_stop``.

    Every epoch runs exactly ``steps_per_epoch`` minibatches. Training stops
    once ``patience`` consecutive epochs fail to improve the early-stop
    accuracy, or at ``max_epochs``. When ``init`` is given, training continues
    from those weights instead of a fresh seeded initialization.
    """
    x = np.asarray(features, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("training features must be a non-empty 2-D array")
    if t.shape != (x.shape[0], arch.output_dim):
        raise ValueError("targets shape does not match features and output dim")
    if not early_stop.fully_labelled:
        raise ValueError("early-stop table must be labelled")

    params = init if init is not None else init_params(arch, config.seed)
    if params.arch != arch:
        raise ValueError("initial params do not match the architecture")
    if config.max_epochs == 0:
        return params, TrainHistory()

    state = AdamState.zeros(params)
    rng = np.random.default_rng(config.seed)
    stream = _BatchStream(x.shape[0], config.batch_size, rng)

    best_params = params
    best_acc = -1.0
    best_epoch = -1
    epochs: list[EpochStats] = []
    stale = 0
    for epoch in range(config.max_epochs):
        loss_sum = 0.0
        for _ in range(config.steps_per_epoch):
            idx = stream.next_batch()
            xb, tb = x[idx], t[idx]
            probs, activations, pre_acts = _forward_cached(params, xb)
            loss_sum += soft_cross_entropy(probs, tb)
            grads = _backprop(params, probs, tb, activations, pre_acts)
            params, state = adam_update(params, grads, state, config.learning_rate)
        mean_loss = loss_sum / config.steps_per_epoch
        if not np.isfinite(mean_loss):
            raise NumericError(f"non-finite training loss at epoch {epoch}")
        acc, _ = evaluate(params, early_stop)
        epochs.append(EpochStats(epoch=epoch, train_loss=mean_loss, early_stop_accuracy=acc))
        if acc > best_acc:
            best_params, best_acc, best_epoch = params, acc, epoch
            stale = 0
        else:
            stale += 1
            if stale >= max(config.patience, 1):
                break

    history = TrainHistory(
        epochs=tuple(epochs), best_epoch=best_epoch, best_accuracy=best_acc
    )
    return best_params, history


def evaluate(params: ModelParams, table: DataTable) -> tuple[float, np.ndarray]:
    """Hard accuracy and the true-by-predicted confusion count matrix."""
    if not table.fully_labelled:
        raise ValueError("evaluate requires a labelled table")
    if len(table) == 0:
        raise ValueError("evaluate requires a non-empty table")
    c = table.catalog.size
    if c != params.arch.output_dim:
        raise ValueError("catalog size does not match model output dim")
    probs = forward(params, table.features)
    preds = probs.argmax(axis=1)
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (table.labels, preds), 1)
    accuracy = float(np.trace(confusion)) / float(len(table))
    return accuracy, confusion


def save_model(path: Path | str, params: ModelParams, seed: int = 0) -> None:
    """Checkpoint the model as JSON: arch dims, row-major weights, biases,
    and the training seed. Floats serialize at full precision, so a load
    round-trips bit-exactly."""
    doc = {
        "input_dim": params.arch.input_dim,
        "hidden": list(params.arch.hidden),
        "output_dim": params.arch.output_dim,
        "seed": int(seed),
        "layers": [
            {"weights": w.tolist(), "bias": b.tolist()}
            for w, b in zip(params.weights, params.biases)
        ],
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_model(path: Path | str) -> tuple[ModelParams, int]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    arch = ArchSpec(
        input_dim=int(doc["input_dim"]),
        hidden=tuple(int(h) for h in doc["hidden"]),
        output_dim=int(doc["output_dim"]),
    )
    weights = tuple(np.array(layer["weights"], dtype=np.float64) for layer in doc["layers"])
    biases = tuple(np.array(layer["bias"], dtype=np.float64) for layer in doc["layers"])
    return ModelParams(arch=arch, weights=weights, biases=biases), int(doc["seed"])
