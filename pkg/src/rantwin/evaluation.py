"""Classifier evaluation: accuracy, confusion matrix, an exact O(n^2) t-SNE
for embedding the network outputs in 2-D, and the mean silhouette score used
to quantify cluster separation in that embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .anomaly import CLASS_NAMES, AnomalyClass, N_CLASSES
from .errors import ConfigurationError, DomainError, NumericError

_EPS = np.finfo(np.float64).eps


def accuracy(predictions, labels) -> float:
    if len(predictions) != len(labels):
        raise DomainError(f"length mismatch: {len(predictions)} vs {len(labels)}")
    if len(predictions) == 0:
        raise DomainError("cannot score an empty prediction list")
    matches = sum(1 for p, t in zip(predictions, labels) if int(p) == int(t))
    return matches / len(predictions)


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[true][pred] over the four anomaly classes."""

    counts: np.ndarray

    def total(self) -> int:
        return int(self.counts.sum())

    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total()

    def recall(self) -> np.ndarray:
        row = self.counts.sum(axis=1)
        return np.divide(
            np.diag(self.counts), row, out=np.zeros(N_CLASSES), where=row > 0
        )

    def precision(self) -> np.ndarray:
        col = self.counts.sum(axis=0)
        return np.divide(
            np.diag(self.counts), col, out=np.zeros(N_CLASSES), where=col > 0
        )

    def to_csv(self) -> str:
        names = [CLASS_NAMES[AnomalyClass(i)] for i in range(N_CLASSES)]
        lines = ["true\\pred," + ",".join(names)]
        for i, name in enumerate(names):
            lines.append(name + "," + ",".join(str(int(v)) for v in self.counts[i]))
        return "\n".join(lines) + "\n"


def confusion(predictions, labels) -> ConfusionMatrix:
    if len(predictions) != len(labels):
        raise DomainError(f"length mismatch: {len(predictions)} vs {len(labels)}")
    if len(predictions) == 0:
        raise DomainError("cannot score an empty prediction list")
    counts = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for p, t in zip(predictions, labels):
        counts[int(t), int(p)] += 1
    return ConfusionMatrix(counts=counts)


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    momentum: float = 0.5
    final_momentum: float = 0.8
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    seed: int = 33

    def __post_init__(self):
        if self.perplexity <= 1.0:
            raise ConfigurationError(f"perplexity must be > 1, got {self.perplexity}")
        if self.iterations < 1:
            raise ConfigurationError(f"iterations must be >= 1, got {self.iterations}")
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("momentum", "final_momentum"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1), got {v}")
        if self.early_exaggeration < 1.0:
            raise ConfigurationError(
                f"early_exaggeration must be >= 1, got {self.early_exaggeration}"
            )
        if self.exaggeration_iters < 0:
            raise ConfigurationError("exaggeration_iters must be >= 0")


@dataclass(frozen=True)
class Embedding2D:
    points: np.ndarray
    initial_kl: float
    final_kl: float


def _squared_distances(x: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d2, 0.0)
    return np.maximum(d2, 0.0)


def conditional_gaussian_probs(
    d2: np.ndarray, perplexity: float, tol: float = 1e-5, max_steps: int = 50
) -> tuple[np.ndarray, np.ndarray]:
    """Per-row Gaussian conditionals whose entropy matches log(perplexity).

    The precision beta_i = 1/(2 sigma_i^2) is found by bisection with
    doubling/halving expansion, at most `max_steps` steps, entropy tolerance
    `tol` (in nats). Returns (P_conditional, beta).
    """
    n = d2.shape[0]
    target_entropy = np.log(perplexity)
    p = np.zeros((n, n))
    betas = np.ones(n)
    for i in range(n):
        beta, beta_min, beta_max = 1.0, -np.inf, np.inf
        di = np.delete(d2[i], i)
        for _ in range(max_steps):
            expd = np.exp(-di * beta)
            sum_e = expd.sum()
            if sum_e <= 0.0:
                entropy = 0.0
                pi = np.zeros_like(di)
            else:
                pi = expd / sum_e
                entropy = np.log(sum_e) + beta * float((di * pi).sum())
            diff = entropy - target_entropy
            if abs(diff) <= tol:
                break
            if diff > 0:
                beta_min = beta
                beta = beta * 2.0 if beta_max == np.inf else (beta + beta_max) / 2.0
            else:
                beta_max = beta
                beta = beta / 2.0 if beta_min == -np.inf else (beta + beta_min) / 2.0
        if sum_e <= 0.0:
            pi = np.full_like(di, 1.0 / (n - 1))
        row = np.insert(pi, i, 0.0)
        p[i] = row
        betas[i] = beta
    return p, betas


def joint_probabilities(points: np.ndarray, perplexity: float) -> np.ndarray:
    """Symmetrized affinities P = (P(j|i) + P(i|j)) / 2n; sums to 1."""
    x = np.asarray(points, dtype=np.float64)
    p_cond, _ = conditional_gaussian_probs(_squared_distances(x), perplexity)
    return (p_cond + p_cond.T) / (2.0 * x.shape[0])


def _kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    return float((p[mask] * np.log(p[mask] / np.maximum(q[mask], _EPS))).sum())


def tsne(points: np.ndarray, config: TsneConfig) -> Embedding2D:
    """Exact t-SNE to 2-D.

    Pipeline: pairwise squared distances; per-point bandwidth search to the
    configured perplexity; symmetrized P; seeded Gaussian init (sigma 1e-4);
    gradient descent on KL(P||Q) with a Student-t(1) Q, momentum switching
    from `momentum` to `final_momentum` when early exaggeration ends, and
    per-coordinate adaptive gains. Returns the embedding plus the KL at
    initialization and after the last iteration (both unexaggerated).
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 4:
        raise ConfigurationError(f"need at least 4 points, got shape {x.shape}")
    n = x.shape[0]
    if config.perplexity >= (n - 1) / 3.0:
        raise ConfigurationError(
            f"perplexity {config.perplexity} infeasible for {n} points "
            f"(must be < (n-1)/3 = {(n - 1) / 3.0:.2f})"
        )

    p = joint_probabilities(x, config.perplexity)
    rng = np.random.default_rng(config.seed)
    y = rng.normal(0.0, 1e-4, size=(n, 2))

    def q_matrix(y_: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        w = 1.0 / (1.0 + _squared_distances(y_))
        np.fill_diagonal(w, 0.0)
        return w / w.sum(), w

    q, _ = q_matrix(y)
    initial_kl = _kl_divergence(p, q)

    velocity = np.zeros_like(y)
    gains = np.ones_like(y)
    min_gain = 0.01
    for it in range(config.iterations):
        exaggerating = it < config.exaggeration_iters
        p_eff = p * config.early_exaggeration if exaggerating else p
        momentum = config.momentum if exaggerating else config.final_momentum

        q, w = q_matrix(y)
        pq = (p_eff - q) * w
        grad = 4.0 * (pq.sum(axis=1)[:, None] * y - pq @ y)

        same_sign = (grad > 0) == (velocity > 0)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.clip(gains, min_gain, None, out=gains)
        velocity = momentum * velocity - config.learning_rate * gains * grad
        y = y + velocity
        y = y - y.mean(axis=0)
        if not np.isfinite(y).all():
            raise NumericError(f"non-finite embedding at iteration {it + 1}")

    q, _ = q_matrix(y)
    final_kl = _kl_divergence(p, q)
    return Embedding2D(points=y, initial_kl=initial_kl, final_kl=final_kl)


def silhouette(points: np.ndarray, labels) -> float:
    """Mean silhouette with Euclidean distance.

    Singleton clusters contribute 0, as do points with a == b == 0.
    """
    x = np.asarray(points, dtype=np.float64)
    labels = np.asarray([int(v) for v in labels])
    if x.shape[0] != labels.shape[0]:
        raise DomainError("points and labels must have equal length")
    classes = np.unique(labels)
    if classes.size < 2:
        raise DomainError("silhouette requires at least 2 distinct labels")

    d = np.sqrt(_squared_distances(x))
    scores = np.zeros(x.shape[0])
    members = {c: np.flatnonzero(labels == c) for c in classes}
    for i in range(x.shape[0]):
        own = members[labels[i]]
        if own.size <= 1:
            continue
        a = d[i, own].sum() / (own.size - 1)
        b = min(d[i, members[c]].mean() for c in classes if c != labels[i])
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())
