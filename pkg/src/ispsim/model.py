"""Single-layer perceptron with per-class sigmoid outputs and SGD update rules.

Parameters are a flat float64 vector laid out class-major: for every class
``c`` the ``input_dim`` weights followed by the bias, i.e. the vector reshapes
to ``(num_classes, input_dim + 1)``.

Nothing in this module knows about simulated time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

LOG_CLAMP = 1e-12

# Breakpoints and slopes of the hardware sigmoid (positive half; mirrored for t < 0).
# Slopes are powers of two so the datapath only needs shifts and adds.
_APPROX_KNOTS = (0.0, 1.0, 2.5, 4.5)
_APPROX_SLOPES = (0.25, 0.125, 0.03125)


class ConfigError(ValueError):
    """Parameters, samples or hyperparameters do not fit the model configuration."""


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 784
    num_classes: int = 10
    regularizer_kind: str = "none"
    regularizer_coeff: float = 0.0
    sigmoid_mode: str = "exact"

    def __post_init__(self):
        if self.input_dim < 1 or self.num_classes < 1:
            raise ConfigError("input_dim and num_classes must be >= 1")
        if self.regularizer_kind not in ("none", "L2"):
            raise ConfigError(f"unknown regularizer {self.regularizer_kind!r}")
        if self.regularizer_coeff < 0:
            raise ConfigError("regularizer_coeff must be nonnegative")
        if self.regularizer_kind == "none" and self.regularizer_coeff != 0:
            raise ConfigError("regularizer_coeff must be 0 when regularizer_kind is 'none'")
        if self.sigmoid_mode not in ("exact", "approximate"):
            raise ConfigError(f"unknown sigmoid mode {self.sigmoid_mode!r}")

    @property
    def num_params(self) -> int:
        return (self.input_dim + 1) * self.num_classes


@dataclass(frozen=True)
class HyperParams:
    learning_rate: float = 0.01
    comm_period: int = 1
    moving_rate: float = 0.001

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning rate must be > 0")
        if int(self.comm_period) != self.comm_period or self.comm_period < 1:
            raise ConfigError("communication period must be an integer >= 1")
        if not 0 < self.moving_rate < 1:
            raise ConfigError("moving rate must lie in (0, 1)")


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: int


@dataclass(frozen=True)
class SampleSet:
    """A stack of samples: ``features`` is (N, input_dim) float64, ``labels`` is (N,) int."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise ConfigError("features must be 2-D and labels 1-D")
        if len(self.features) != len(self.labels):
            raise ConfigError("features and labels disagree on sample count")

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self):
        for x, y in zip(self.features, self.labels):
            yield Sample(x, int(y))

    @classmethod
    def from_samples(cls, samples: Iterable[Sample]) -> "SampleSet":
        samples = list(samples)
        if not samples:
            return cls(np.zeros((0, 0)), np.zeros(0, dtype=np.int64))
        x = np.stack([np.asarray(s.features, dtype=np.float64) for s in samples])
        y = np.array([s.label for s in samples], dtype=np.int64)
        return cls(x, y)


@dataclass(frozen=True)
class PageMinibatch(SampleSet):
    """The samples decoded from one NAND page; its length is the page-minibatch size b."""

    source_page: Optional[object] = field(default=None, compare=False)


Batch = Union[SampleSet, Sequence[Sample]]


def _as_set(batch: Batch) -> SampleSet:
    return batch if isinstance(batch, SampleSet) else SampleSet.from_samples(batch)


def init_params(config: ModelConfig, seed: Optional[int] = None) -> np.ndarray:
    """Zero parameters, or uniform(-0.01, 0.01) when a seed is given."""
    if seed is None:
        return np.zeros(config.num_params)
    return np.random.default_rng(seed).uniform(-0.01, 0.01, config.num_params)


def _split(params: np.ndarray, config: ModelConfig):
    if params.shape != (config.num_params,):
        raise ConfigError(f"expected {config.num_params} parameters, got shape {params.shape}")
    table = params.reshape(config.num_classes, config.input_dim + 1)
    return table[:, :-1], table[:, -1]


def sigmoid_exact(t):
    """Logistic function; works on scalars and arrays and never overflows."""
    t = np.asarray(t, dtype=np.float64)
    # exp of a nonpositive argument only
    e = np.exp(-np.abs(t))
    out = np.where(t >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return float(out) if out.ndim == 0 else out


def sigmoid_approx(t):
    """Piecewise-linear sigmoid with power-of-two slopes, saturating to 0/1 beyond |t| = 4.5.

    Continuous and monotone; worst-case deviation from the logistic is about 0.019.
    """
    t = np.asarray(t, dtype=np.float64)
    a = np.abs(t)
    k0, k1, k2, k3 = _APPROX_KNOTS
    s0, s1, s2 = _APPROX_SLOPES
    v1 = 0.5 + s0 * (k1 - k0)
    v2 = v1 + s1 * (k2 - k1)
    pos = np.where(
        a < k1,
        0.5 + s0 * a,
        np.where(a < k2, v1 + s1 * (a - k1), np.where(a < k3, v2 + s2 * (a - k2), 1.0)),
    )
    out = np.clip(np.where(t >= 0, pos, 1.0 - pos), 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def _activation(config: ModelConfig):
    return sigmoid_exact if config.sigmoid_mode == "exact" else sigmoid_approx


def forward(params: np.ndarray, features: np.ndarray, config: ModelConfig) -> np.ndarray:
    """Per-class scores sigma(w_c . x + b_c) for one sample (1-D) or a stack (2-D)."""
    w, b = _split(params, config)
    features = np.asarray(features, dtype=np.float64)
    if features.shape[-1] != config.input_dim:
        raise ConfigError(f"expected {config.input_dim} features, got {features.shape[-1]}")
    return np.asarray(_activation(config)(features @ w.T + b))


def _check_labels(labels: np.ndarray, config: ModelConfig):
    if len(labels) and (labels.min() < 0 or labels.max() >= config.num_classes):
        raise ConfigError("label out of range")


def loss(params: np.ndarray, batch: Batch, config: ModelConfig) -> float:
    """Mean summed binary cross-entropy against one-hot targets, plus the regularizer."""
    batch = _as_set(batch)
    if len(batch) == 0:
        raise ConfigError("empty batch")
    _check_labels(batch.labels, config)
    p = np.clip(forward(params, batch.features, config), LOG_CLAMP, 1.0 - LOG_CLAMP)
    y = np.zeros_like(p)
    y[np.arange(len(batch)), batch.labels] = 1.0
    bce = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    total = float(bce.sum(axis=1).mean())
    if config.regularizer_kind == "L2":
        w, _ = _split(params, config)
        total += 0.5 * config.regularizer_coeff * float(np.sum(w * w))
    return total


def gradient(params: np.ndarray, sample: Sample, config: ModelConfig) -> np.ndarray:
    """Gradient of the single-sample objective; same layout as ``params``."""
    return _gradient(params, sample.features, sample.label, config)


def _gradient(params, x, label, config):
    if not 0 <= label < config.num_classes:
        raise ConfigError(f"label {label} out of range")
    w, _ = _split(params, config)
    err = forward(params, x, config)
    err[label] -= 1.0
    grad = np.empty((config.num_classes, config.input_dim + 1))
    np.multiply.outer(err, x, out=grad[:, :-1])
    grad[:, -1] = err
    if config.regularizer_kind == "L2":
        grad[:, :-1] += config.regularizer_coeff * w
    return grad.reshape(-1)


def accumulate_minibatch_gradient(
    params: np.ndarray, batch: Batch, learning_rate: float, config: ModelConfig
) -> np.ndarray:
    """Sum over the batch of ``learning_rate * gradient``, accumulated in sample order."""
    batch = _as_set(batch)
    delta = np.zeros(config.num_params)
    for x, y in zip(batch.features, batch.labels):
        delta += learning_rate * _gradient(params, x, int(y), config)
    return delta


def elastic_update(slave: np.ndarray, master: np.ndarray, moving_rate: float):
    """One elastic exchange; returns the new (slave, master) pair."""
    if slave.shape != master.shape:
        raise ConfigError(f"length mismatch: {slave.shape} vs {master.shape}")
    if not 0 < moving_rate < 1:
        raise ConfigError("moving rate must lie in (0, 1)")
    pull = moving_rate * (slave - master)
    return slave - pull, master + pull


def predict(params: np.ndarray, features: np.ndarray, config: ModelConfig) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class index
    return np.argmax(forward(params, np.atleast_2d(features), config), axis=1)


def evaluate_accuracy(params: np.ndarray, test_set: Batch, config: ModelConfig) -> float:
    test_set = _as_set(test_set)
    if len(test_set) == 0:
        raise ConfigError("empty test set")
    hits = predict(params, test_set.features, config) == test_set.labels
    return float(np.count_nonzero(hits)) / len(test_set)


def all_finite(params: np.ndarray) -> bool:
    return bool(np.isfinite(params).all())


def mean_of(deltas: Sequence[np.ndarray]) -> np.ndarray:
    """Pairwise (tree) sum divided by the count.

    Tree order makes the mean of 2^k identical vectors exact, so replicated
    workers reproduce the single-worker trajectory bit for bit.
    """
    if not deltas:
        raise ConfigError("no deltas to average")

    def tree(lo, hi):
        if hi - lo == 1:
            return deltas[lo]
        mid = (lo + hi) // 2
        return tree(lo, mid) + tree(mid, hi)

    return tree(0, len(deltas)) / len(deltas)

