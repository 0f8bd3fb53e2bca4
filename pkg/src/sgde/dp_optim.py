"""DP-Adam: per-example clipping, Gaussian noise on the clipped sum, Adam update."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .accountant import MechanismParams
from .errors import ConfigurationError, DataError, NumericError
from .nn import AdamHyper, AdamState, adam_step

# A loss spec maps (arch, params, batch, rng) to (mean_loss, per_example_grads).
LossSpec = Callable[[object, np.ndarray, np.ndarray, np.random.Generator],
                    tuple[float, np.ndarray]]


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named consumer (init, batches, noise, ...)."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())])


@dataclass(frozen=True)
class DpTrainingConfig:
    clip_norm: float = 1.0
    noise_multiplier: Optional[float] = None  # None: calibrate to the server budget
    batch_size: int = 32
    epochs: int = 20
    adam: AdamHyper = field(default_factory=AdamHyper)
    seed: int = 0

    def __post_init__(self):
        if not self.clip_norm > 0:
            raise ConfigurationError("clip_norm must be positive")
        if self.noise_multiplier is not None and self.noise_multiplier < 0:
            raise ConfigurationError("noise_multiplier must be non-negative")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")

    def to_dict(self) -> dict:
        a = self.adam
        return {
            "clip_norm": self.clip_norm, "noise_multiplier": self.noise_multiplier,
            "batch_size": self.batch_size, "epochs": self.epochs, "seed": self.seed,
            "learning_rate": a.learning_rate, "beta1": a.beta1, "beta2": a.beta2,
            "eps_stability": a.eps_stability,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DpTrainingConfig":
        d = dict(d)
        adam = AdamHyper(**{k: d.pop(k) for k in ("learning_rate", "beta1", "beta2", "eps_stability")
                            if k in d})
        return cls(adam=adam, **d)


@dataclass(frozen=True)
class DpStepLog:
    steps_taken: int
    sampling_rate: float
    mechanism: Optional[MechanismParams]  # None when trained without noise
    n_examples: int


def steps_per_epoch(n: int, batch_size: int) -> int:
    return math.ceil(n / min(batch_size, n))


def sampling_rate(n: int, batch_size: int) -> float:
    return min(batch_size, n) / n


def clip_per_example(per_example_grads, clip_norm: float) -> np.ndarray:
    g = np.asarray(per_example_grads, dtype=np.float64)
    if not clip_norm > 0:
        raise ConfigurationError("clip_norm must be positive")
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite per-example gradient")
    if math.isinf(clip_norm):
        return g.copy()
    norms = np.linalg.norm(g, axis=1)
    scale = np.minimum(1.0, clip_norm / np.maximum(norms, 1e-300))
    return g * scale[:, None]


def noisy_aggregate(clipped, sigma: float, clip_norm: float, rng: np.random.Generator,
                    denominator: int | None = None) -> np.ndarray:
    """(sum of rows + N(0, sigma^2 C^2 I)) / L, with L the batch size by default."""
    clipped = np.asarray(clipped, dtype=np.float64)
    total = clipped.sum(axis=0)
    if sigma > 0:
        total = total + rng.normal(0.0, sigma * clip_norm, size=total.shape)
    return total / (denominator or clipped.shape[0])


def dp_train(arch, params: np.ndarray, dataset, loss_spec: LossSpec,
             config: DpTrainingConfig) -> tuple[np.ndarray, DpStepLog]:
    """Train ``params`` with DP-Adam.

    Each epoch shuffles the data and walks it in fixed-size batches without
    replacement; the mechanism is accounted at rate ``q = L / n``.
    """
    data = np.asarray(dataset, dtype=np.float64)
    n = data.shape[0]
    if n < 1:
        raise DataError("dp_train needs at least one example")
    sigma = config.noise_multiplier or 0.0
    L = min(config.batch_size, n)
    batch_rng = rng_stream(config.seed, "batches")
    noise_rng = rng_stream(config.seed, "noise")
    loss_rng = rng_stream(config.seed, "loss")
    state = AdamState.fresh(params.size, config.adam)
    params = np.array(params, dtype=np.float64)
    step = 0
    for _ in range(config.epochs):
        order = batch_rng.permutation(n)
        for start in range(0, n, L):
            batch = data[order[start:start + L]]
            loss, grads = loss_spec(arch, params, batch, loss_rng)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at step {step}")
            clipped = clip_per_example(grads, config.clip_norm)
            g = noisy_aggregate(clipped, sigma, config.clip_norm, noise_rng, denominator=L)
            params, state = adam_step(state, params, g)
            step += 1
    q = sampling_rate(n, config.batch_size)
    mech = (MechanismParams(sigma, q, step, config.clip_norm)
            if sigma > 0 and math.isfinite(config.clip_norm) else None)
    return params, DpStepLog(step, q, mech, n)
