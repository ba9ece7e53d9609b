"""Private gradient mechanics: per-sample clipping, Gaussian noising, descent step."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .models import Model, ModelParams, batch_grads
from .rng import RngStream

__all__ = [
    "PrivacySpec",
    "NoisyGradient",
    "NonFiniteGradientError",
    "clip",
    "clip_batch",
    "private_batch_gradient",
    "noisy_weighted_gradient",
    "dp_sgd_step",
]

DEFAULT_DELTA = 1e-5
DEFAULT_CLIP_CLASSIFICATION = 1.2
DEFAULT_CLIP_REGRESSION = 0.8


class NonFiniteGradientError(ValueError):
    """A gradient entering the private mechanism contains nan or inf."""


@dataclass(frozen=True)
class PrivacySpec:
    """Privacy parameters for one training run.

    ``noise_scale`` is the noise multiplier: the injected Gaussian has
    standard deviation noise_scale * clipping_bound per coordinate. When
    ``target_epsilon`` is set, noise_scale is expected to come from
    :func:`dpfair.accounting.calibrate_sigma`.
    """

    noise_scale: float
    clipping_bound: float
    sampling_rate: float
    total_steps: int
    delta: float = DEFAULT_DELTA
    target_epsilon: Optional[float] = None

    def __post_init__(self):
        if not (0.0 < self.delta < 1.0):
            raise ValueError("delta must be in (0, 1)")
        if self.clipping_bound <= 0.0:
            raise ValueError("clipping_bound must be > 0")
        if self.noise_scale < 0.0:
            raise ValueError("noise_scale must be >= 0")
        if not (0.0 < self.sampling_rate <= 1.0):
            raise ValueError("sampling_rate must be in (0, 1]")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.target_epsilon is not None and self.target_epsilon <= 0.0:
            raise ValueError("target_epsilon must be > 0 when set")

    def with_noise_scale(self, sigma: float) -> "PrivacySpec":
        return replace(self, noise_scale=sigma)


@dataclass
class NoisyGradient:
    """The privatized gradient estimate for one step."""

    value: np.ndarray
    batch_size_drawn: int


def clip(grad: np.ndarray, C: float) -> np.ndarray:
    """Scale grad to l2 norm at most C, preserving direction."""
    if C <= 0.0:
        raise ValueError("clipping bound must be > 0")
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradientError("gradient has non-finite entries")
    norm = float(np.linalg.norm(grad))
    if norm <= C:
        return grad.copy()
    return grad * (C / norm)


def clip_batch(grads: np.ndarray, C: float) -> np.ndarray:
    """Row-wise clip of an (n, p) per-example gradient matrix."""
    if C <= 0.0:
        raise ValueError("clipping bound must be > 0")
    if not np.all(np.isfinite(grads)):
        raise NonFiniteGradientError("gradient has non-finite entries")
    norms = np.linalg.norm(grads, axis=1)
    scale = np.minimum(1.0, C / np.maximum(norms, 1e-300))
    return grads * scale[:, None]


def noisy_weighted_gradient(
    model: Model,
    params: ModelParams,
    batch,
    weights: np.ndarray,
    spec: PrivacySpec,
    rng: RngStream,
    normalizer: float,
) -> NoisyGradient:
    """(sum_i w_i * clip(g_i, C) + xi) / normalizer.

    xi ~ Normal(0, (sigma * C * max_i w_i)^2 * I): one weighted example moves
    the sum by at most C * max w_i, so the noise is inflated to match that
    sensitivity. With all weights 1 and normalizer = max(1, n) this is the
    plain private batch gradient.
    """
    n = len(batch)
    p = model.num_params
    weights = np.asarray(weights, dtype=np.float64)
    if n > 0:
        grads = clip_batch(batch_grads(model, params, batch), spec.clipping_bound)
        total = weights @ grads
        w_max = float(weights.max())
    else:
        total = np.zeros(p)
        w_max = 1.0
    noise_std = spec.noise_scale * spec.clipping_bound * w_max
    xi = rng.gen.normal(0.0, 1.0, size=p) * noise_std
    return NoisyGradient((total + xi) / normalizer, n)


def private_batch_gradient(
    model: Model,
    params: ModelParams,
    batch,
    spec: PrivacySpec,
    rng: RngStream,
) -> NoisyGradient:
    """Clip each per-example gradient, sum, add Gaussian noise, average.

    The batch may be empty (a possible Poisson draw); the output is then
    pure noise. The Gaussian is always drawn so the rng stream advances by
    exactly one noise vector per step.
    """
    n = len(batch)
    return noisy_weighted_gradient(
        model, params, batch, np.ones(n), spec, rng, normalizer=float(max(1, n))
    )


def dp_sgd_step(params: ModelParams, noisy_grad: NoisyGradient, lr: float) -> ModelParams:
    """params - lr * noisy gradient; also used with noiseless gradients."""
    if lr < 0.0:
        raise ValueError("learning rate must be >= 0")
    return ModelParams(params.values - lr * noisy_grad.value, params.model)
