"""Fully connected classifier trained from scratch in float64: ReLU hidden
layers, softmax-cross-entropy output, analytic backprop, mini-batch Adam,
and a line-oriented text serialization with a SHA-256 digest.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .anomaly import AnomalyClass, N_CLASSES, N_FEATURES
from .errors import ConfigurationError, DataFormatError, DomainError, TrainingError

MODEL_MAGIC = "RANTWIN-MLP v1"


@dataclass
class MlpModel:
    layer_dims: list[int]
    weights: list[np.ndarray]  # weights[l] has shape (dims[l+1], dims[l])
    biases: list[np.ndarray]

    def n_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 21

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("adam_beta1", "adam_beta2"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigurationError(f"{name} must be in (0, 1), got {v}")
        if self.adam_epsilon <= 0:
            raise ConfigurationError(f"adam_epsilon must be > 0, got {self.adam_epsilon}")


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    test_accuracy: list[float] = field(default_factory=list)
    initial_loss: float = float("nan")
    final_loss: float = float("nan")
    final_model_hash: str = ""


def init_model(hidden_dims: list[int], seed: int) -> MlpModel:
    """He-scaled Gaussian weights, zero biases, dims [8, *hidden, 4].

    An empty hidden list degenerates to multinomial logistic regression.
    """
    for d in hidden_dims:
        if d < 1:
            raise ConfigurationError(f"hidden layer dims must be >= 1, got {d}")
    dims = [N_FEATURES, *hidden_dims, N_CLASSES]
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        std = np.sqrt(2.0 / fan_in)
        weights.append(rng.normal(0.0, std, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(layer_dims=dims, weights=weights, biases=biases)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _forward_batch(model: MlpModel, x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Returns the post-activation value of every layer and the logits."""
    activations = [x]
    a = x
    n_layers = len(model.weights)
    for l in range(n_layers - 1):
        a = np.maximum(0.0, a @ model.weights[l].T + model.biases[l])
        activations.append(a)
    logits = a @ model.weights[-1].T + model.biases[-1]
    return activations, logits


def forward(model: MlpModel, x) -> tuple[np.ndarray, np.ndarray]:
    """Single-sample pass returning (logits, probs); probs sum to 1."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.layer_dims[0],):
        raise DomainError(f"input must have shape ({model.layer_dims[0]},), got {x.shape}")
    if not np.isfinite(x).all():
        raise DomainError("input contains non-finite values")
    _, logits = _forward_batch(model, x[None, :])
    return logits[0], _softmax(logits)[0]


def predict(model: MlpModel, x) -> AnomalyClass:
    """Argmax class; exact ties resolve to the lowest class code."""
    _, probs = forward(model, x)
    return AnomalyClass(int(np.argmax(probs)))


def predict_batch(model: MlpModel, x: np.ndarray) -> np.ndarray:
    _, logits = _forward_batch(model, np.asarray(x, dtype=np.float64))
    return np.argmax(_softmax(logits), axis=1)


def _loss_grads_arrays(
    model: MlpModel, x: np.ndarray, y: np.ndarray
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    n = x.shape[0]
    activations, logits = _forward_batch(model, x)
    probs = _softmax(logits)
    loss = float(-np.log(np.maximum(probs[np.arange(n), y], 1e-300)).mean())

    delta = probs
    delta[np.arange(n), y] -= 1.0
    delta /= n

    grad_w = [np.empty(0)] * len(model.weights)
    grad_b = [np.empty(0)] * len(model.biases)
    for l in range(len(model.weights) - 1, -1, -1):
        grad_w[l] = delta.T @ activations[l]
        grad_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ model.weights[l]) * (activations[l] > 0.0)
    return loss, grad_w, grad_b


def _as_arrays(batch) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    for features, label in batch:
        xs.append(np.asarray(features, dtype=np.float64))
        ys.append(int(label))
    x = np.stack(xs)
    y = np.array(ys, dtype=np.int64)
    if ((y < 0) | (y >= N_CLASSES)).any():
        bad = y[(y < 0) | (y >= N_CLASSES)][0]
        raise DomainError(f"label code {bad} outside 0..{N_CLASSES - 1}")
    return x, y


def loss_and_grads(model: MlpModel, batch) -> tuple[float, dict]:
    """Mean cross-entropy and its gradients for a batch of (x, label) pairs."""
    if len(batch) == 0:
        raise DomainError("batch must be non-empty")
    x, y = _as_arrays(batch)
    loss, grad_w, grad_b = _loss_grads_arrays(model, x, y)
    return loss, {"weights": grad_w, "biases": grad_b}


def train(
    model: MlpModel, train_samples, test_samples, config: TrainConfig
) -> tuple[MlpModel, TrainReport]:
    """Mini-batch Adam with a seeded shuffle per epoch.

    Raises TrainingError on non-finite loss (naming the epoch) or when the
    full-dataset loss fails to decrease over the run.
    """
    x_train, y_train = _as_arrays(train_samples)
    x_test, y_test = _as_arrays(test_samples)
    n = x_train.shape[0]
    rng = np.random.default_rng(config.seed)

    m_w = [np.zeros_like(w) for w in model.weights]
    v_w = [np.zeros_like(w) for w in model.weights]
    m_b = [np.zeros_like(b) for b in model.biases]
    v_b = [np.zeros_like(b) for b in model.biases]
    b1, b2, eps, lr = config.adam_beta1, config.adam_beta2, config.adam_epsilon, config.learning_rate

    report = TrainReport()
    report.initial_loss, _, _ = _loss_grads_arrays(model, x_train, y_train)

    step_count = 0
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            loss, grad_w, grad_b = _loss_grads_arrays(model, x_train[idx], y_train[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch + 1}")
            epoch_losses.append(loss)
            step_count += 1
            corr1 = 1.0 - b1 ** step_count
            corr2 = 1.0 - b2 ** step_count
            for l in range(len(model.weights)):
                m_w[l] = b1 * m_w[l] + (1 - b1) * grad_w[l]
                v_w[l] = b2 * v_w[l] + (1 - b2) * grad_w[l] ** 2
                model.weights[l] -= lr * (m_w[l] / corr1) / (np.sqrt(v_w[l] / corr2) + eps)
                m_b[l] = b1 * m_b[l] + (1 - b1) * grad_b[l]
                v_b[l] = b2 * v_b[l] + (1 - b2) * grad_b[l] ** 2
                model.biases[l] -= lr * (m_b[l] / corr1) / (np.sqrt(v_b[l] / corr2) + eps)
        report.train_loss.append(float(np.mean(epoch_losses)))
        report.test_accuracy.append(float((predict_batch(model, x_test) == y_test).mean()))

    report.final_loss, _, _ = _loss_grads_arrays(model, x_train, y_train)
    if not np.isfinite(report.final_loss):
        raise TrainingError(f"non-finite loss at epoch {config.epochs}")
    if report.final_loss >= report.initial_loss:
        raise TrainingError(
            f"training failed to reduce the loss ({report.initial_loss} -> {report.final_loss})"
        )
    report.final_model_hash = model_digest(model)
    return model, report


def serialize_model(model: MlpModel) -> str:
    """Canonical text form: magic, dims, then per layer the weight rows and a
    bias line. Values use shortest round-trip decimal formatting."""
    lines = [MODEL_MAGIC, " ".join(str(d) for d in model.layer_dims)]
    for w, b in zip(model.weights, model.biases):
        for row in w:
            lines.append(" ".join(repr(float(v)) for v in row))
        lines.append(" ".join(repr(float(v)) for v in b))
    return "\n".join(lines) + "\n"


def model_digest(model: MlpModel) -> str:
    return hashlib.sha256(serialize_model(model).encode("utf-8")).hexdigest()


def save_model(model: MlpModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_model(model))


def _parse_vector(line: str, expected: int, what: str) -> np.ndarray:
    parts = line.split()
    if len(parts) != expected:
        raise DataFormatError(f"{what}: expected {expected} values, got {len(parts)}")
    try:
        return np.array([float(v) for v in parts], dtype=np.float64)
    except ValueError as e:
        raise DataFormatError(f"{what}: {e}") from e


def load_model(path) -> MlpModel:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != MODEL_MAGIC:
        raise DataFormatError(f"bad magic line, expected {MODEL_MAGIC!r}")
    if len(lines) < 2:
        raise DataFormatError("truncated file: missing dims line")
    try:
        dims = [int(v) for v in lines[1].split()]
    except ValueError as e:
        raise DataFormatError(f"dims line: {e}") from e
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise DataFormatError(f"dims must be >= 2 positive integers, got {dims}")
    if dims[0] != N_FEATURES or dims[-1] != N_CLASSES:
        raise DataFormatError(
            f"dims: model must map {N_FEATURES} inputs to {N_CLASSES} classes, got {dims}"
        )
    weights = []
    biases = []
    pos = 2
    for l, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        if pos + fan_out + 1 > len(lines):
            raise DataFormatError(f"truncated file: layer {l} incomplete")
        rows = [
            _parse_vector(lines[pos + r], fan_in, f"layer {l} weight row {r}")
            for r in range(fan_out)
        ]
        weights.append(np.stack(rows))
        biases.append(_parse_vector(lines[pos + fan_out], fan_out, f"layer {l} bias"))
        pos += fan_out + 1
    if any(line.strip() for line in lines[pos:]):
        raise DataFormatError(f"trailing content after layer {len(dims) - 2}")
    model = MlpModel(layer_dims=dims, weights=weights, biases=biases)
    if not all(np.isfinite(w).all() for w in weights) or not all(
        np.isfinite(b).all() for b in biases
    ):
        raise DataFormatError("model parameters must be finite")
    return model
