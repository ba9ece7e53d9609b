"""Small differentiable models with exact per-example gradients.

Three families, all with a single scalar output head:

* ``linear``   -- linear regression, squared-error loss
* ``logistic`` -- logistic binary classifier, cross-entropy loss
* ``mlp``      -- one tanh hidden layer, classification or regression head

Gradients are written out by hand (no autodiff) and vectorized over a
batch; the finite-difference suite pins them down to 1e-5 relative.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .data import CLASSIFICATION, REGRESSION, Example
from .rng import RngStream

__all__ = [
    "Model",
    "ModelParams",
    "DimensionMismatchError",
    "per_example_loss",
    "per_example_grad",
    "batch_losses",
    "batch_grads",
    "predict",
    "predict_batch",
    "init_params",
]

LINEAR = "linear"
LOGISTIC = "logistic"
MLP = "mlp"


class DimensionMismatchError(ValueError):
    """Feature or parameter vector length does not match the model shape."""


@dataclass(frozen=True)
class Model:
    """Shape descriptor for one model family.

    ``task`` is forced by the family for linear (regression) and logistic
    (classification); an mlp can head either way.
    """

    family: str
    input_dim: int
    hidden_size: int = 0
    task: str = ""

    def __post_init__(self):
        if self.family not in (LINEAR, LOGISTIC, MLP):
            raise ValueError(f"unknown model family {self.family!r}")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        forced = {LINEAR: REGRESSION, LOGISTIC: CLASSIFICATION}
        if self.family in forced:
            task = forced[self.family]
            if self.task and self.task != task:
                raise ValueError(f"{self.family} model implies task {task!r}")
            object.__setattr__(self, "task", task)
        else:
            if self.task not in (CLASSIFICATION, REGRESSION):
                raise ValueError("mlp model needs task='classification' or 'regression'")
            if self.hidden_size < 1:
                raise ValueError("mlp model needs hidden_size >= 1")

    @property
    def num_params(self) -> int:
        d = self.input_dim
        if self.family in (LINEAR, LOGISTIC):
            return d + 1
        h = self.hidden_size
        return h * d + h + h + 1


@dataclass
class ModelParams:
    """Flat trainable parameter vector plus its shape descriptor."""

    values: np.ndarray
    model: Model

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.model.num_params,):
            raise DimensionMismatchError(
                f"params length {self.values.shape} does not match "
                f"model with {self.model.num_params} parameters"
            )

    def copy(self) -> "ModelParams":
        return ModelParams(self.values.copy(), self.model)


def _check_features(model: Model, X: np.ndarray):
    if X.shape[-1] != model.input_dim:
        raise DimensionMismatchError(
            f"feature dimension {X.shape[-1]} does not match input_dim {model.input_dim}"
        )


def _split_mlp(model: Model, theta: np.ndarray):
    d, h = model.input_dim, model.hidden_size
    w1 = theta[: h * d].reshape(h, d)
    b1 = theta[h * d : h * d + h]
    w2 = theta[h * d + h : h * d + 2 * h]
    b2 = theta[-1]
    return w1, b1, w2, b2


def _raw_outputs(model: Model, params: ModelParams, X: np.ndarray):
    """Pre-head scalar outputs z for a (n, d) feature matrix.

    For the mlp also returns hidden activations, reused by the backward pass.
    """
    _check_features(model, X)
    theta = params.values
    if model.family in (LINEAR, LOGISTIC):
        return X @ theta[:-1] + theta[-1], None
    w1, b1, w2, b2 = _split_mlp(model, theta)
    hidden = np.tanh(X @ w1.T + b1)
    return hidden @ w2 + b2, hidden


def _losses_from_outputs(model: Model, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    if model.task == CLASSIFICATION:
        # cross-entropy from logits: log(1 + e^z) - y*z, stable for any z
        return np.logaddexp(0.0, z) - y * z
    return (z - y) ** 2


def _dloss_dz(model: Model, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    if model.task == CLASSIFICATION:
        p = 1.0 / (1.0 + np.exp(-z))
        return p - y
    return 2.0 * (z - y)


def batch_losses(model: Model, params: ModelParams, examples) -> np.ndarray:
    X, y = _as_arrays(examples)
    z, _ = _raw_outputs(model, params, X)
    return _losses_from_outputs(model, z, y)


def batch_grads(model: Model, params: ModelParams, examples) -> np.ndarray:
    """Per-example loss gradients, stacked as an (n, num_params) matrix."""
    X, y = _as_arrays(examples)
    z, hidden = _raw_outputs(model, params, X)
    dz = _dloss_dz(model, z, y)
    n = X.shape[0]
    if model.family in (LINEAR, LOGISTIC):
        out = np.empty((n, model.num_params))
        out[:, :-1] = dz[:, None] * X
        out[:, -1] = dz
        return out
    w1, b1, w2, b2 = _split_mlp(model, params.values)
    h = model.hidden_size
    d = model.input_dim
    grad_w2 = dz[:, None] * hidden
    grad_b2 = dz
    dpre = (dz[:, None] * w2[None, :]) * (1.0 - hidden**2)
    grad_w1 = dpre[:, :, None] * X[:, None, :]
    out = np.empty((n, model.num_params))
    out[:, : h * d] = grad_w1.reshape(n, h * d)
    out[:, h * d : h * d + h] = dpre
    out[:, h * d + h : h * d + 2 * h] = grad_w2
    out[:, -1] = grad_b2
    return out


def per_example_loss(model: Model, params: ModelParams, ex: Example) -> float:
    """Loss of one example: cross-entropy for classifiers, squared error otherwise."""
    return float(batch_losses(model, params, [ex])[0])


def per_example_grad(model: Model, params: ModelParams, ex: Example) -> np.ndarray:
    """Exact gradient of per_example_loss with respect to the flat parameters."""
    return batch_grads(model, params, [ex])[0]


def predict_batch(model: Model, params: ModelParams, examples) -> np.ndarray:
    X, _ = _as_arrays(examples, need_labels=False)
    z, _ = _raw_outputs(model, params, X)
    if model.task == CLASSIFICATION:
        # p >= 0.5 (z >= 0) predicts class 1; fixed tie rule
        return (z >= 0.0).astype(np.float64)
    return z


def predict(model: Model, params: ModelParams, ex: Example) -> float:
    return float(predict_batch(model, params, [ex])[0])


def init_params(model: Model, rng: RngStream) -> ModelParams:
    """Zeros for the convex families; uniform(+-1/sqrt(fan_in)) per mlp layer."""
    if model.family in (LINEAR, LOGISTIC):
        return ModelParams(np.zeros(model.num_params), model)
    d, h = model.input_dim, model.hidden_size
    gen = rng.gen
    bound1 = 1.0 / np.sqrt(d)
    bound2 = 1.0 / np.sqrt(h)
    values = np.concatenate(
        [
            gen.uniform(-bound1, bound1, size=h * d),
            gen.uniform(-bound1, bound1, size=h),
            gen.uniform(-bound2, bound2, size=h),
            gen.uniform(-bound2, bound2, size=1),
        ]
    )
    return ModelParams(values, model)


def _as_arrays(examples, need_labels: bool = True):
    if hasattr(examples, "features_matrix"):
        return examples.features_matrix, (examples.labels_array if need_labels else None)
    X = np.stack([ex.features for ex in examples])
    if not need_labels:
        return X, None
    y = np.array([ex.label for ex in examples], dtype=np.float64)
    return X, y
