"""ERM and Group DRO training loops, privately or in the clear.

Both trainers run fixed-step minibatch SGD and report final parameters (no
early stopping). Private runs draw Poisson batches at the accountant's
sampling rate and record one accountant step per optimizer step; non-private
runs draw uniform batches without replacement.

The DRO adversary is an exponentiated-gradient ascent over the group
simplex: q'_g proportional to q_g * exp(eta * loss_g). Groups absent from a
batch are left out of that step's update and of the descent mixture, which
renormalizes over the groups actually present.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .accounting import AccountantState, compose_and_convert
from .data import Dataset
from .dp import NoisyGradient, PrivacySpec, dp_sgd_step, noisy_weighted_gradient
from .models import Model, ModelParams, batch_grads, batch_losses, init_params
from .rng import RngStream

__all__ = [
    "GroupWeights",
    "TrainConfig",
    "TrainTrace",
    "worst_group_loss",
    "dro_weight_update",
    "train_erm",
    "train_dro",
]

ERM = "erm"
GROUP_DRO = "group-dro"

SIMPLEX_TOL = 1e-9


@dataclass
class GroupWeights:
    """A point on the probability simplex over groups."""

    q: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64)
        if self.q.ndim != 1 or self.q.size == 0:
            raise ValueError("q must be a non-empty vector")
        if np.any(self.q < 0) or abs(self.q.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError("q must be nonnegative and sum to 1")

    @classmethod
    def uniform(cls, num_groups: int) -> "GroupWeights":
        return cls(np.full(num_groups, 1.0 / num_groups))


@dataclass
class TrainConfig:
    objective: str
    steps: int
    lr: float
    batch_size: int
    dro_step_size: float = 0.01
    privacy: Optional[PrivacySpec] = None
    seed: int = 0

    def __post_init__(self):
        if self.objective not in (ERM, GROUP_DRO):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.dro_step_size < 0:
            raise ValueError("dro_step_size must be >= 0")


@dataclass
class TrainTrace:
    """What a run leaves behind besides the parameters."""

    epoch_losses: list = field(default_factory=list)
    realized_epsilon: Optional[float] = None
    final_group_weights: Optional[list] = None
    accountant_steps: int = 0


def worst_group_loss(
    model: Model, params: ModelParams, dataset: Dataset
) -> tuple[float, int]:
    """Maximum over groups of the group-mean loss; ties pick the lowest id."""
    losses = batch_losses(model, params, dataset)
    groups = dataset.groups_array
    means = np.empty(dataset.num_groups)
    for g in range(dataset.num_groups):
        mask = groups == g
        if not mask.any():
            raise ValueError(f"group {g} is empty")
        means[g] = losses[mask].mean()
    g_star = int(np.argmax(means))
    return float(means[g_star]), g_star


def _masked_weight_update(
    q: np.ndarray, losses: np.ndarray, present: np.ndarray, eta: float
) -> np.ndarray:
    """Exponentiated update on the present groups, preserving absent mass."""
    if not np.all(np.isfinite(losses[present])):
        raise ValueError("group losses must be finite")
    new = q.copy()
    shifted = eta * (losses[present] - losses[present].max())
    scaled = q[present] * np.exp(shifted)
    new[present] = scaled * (q[present].sum() / scaled.sum())
    return new


def dro_weight_update(
    q: GroupWeights, group_losses, eta_q: float
) -> GroupWeights:
    """q'_g proportional to q_g * exp(eta_q * loss_g), back on the simplex."""
    losses = np.asarray(group_losses, dtype=np.float64)
    if losses.shape != q.q.shape:
        raise ValueError("group_losses length must match q")
    present = np.ones(losses.size, dtype=bool)
    return GroupWeights(_masked_weight_update(q.q, losses, present, eta_q))


def _record_epoch_loss(trace, model, params, dataset):
    trace.epoch_losses.append(float(batch_losses(model, params, dataset).mean()))


def _draw_batch(dataset: Dataset, cfg: TrainConfig, batch_rng: RngStream) -> np.ndarray:
    n = len(dataset)
    if cfg.privacy is not None:
        mask = batch_rng.gen.random(n) < cfg.privacy.sampling_rate
        return np.flatnonzero(mask)
    size = min(cfg.batch_size, n)
    return batch_rng.gen.choice(n, size=size, replace=False)


def _setup(model, dataset, cfg, expected_objective):
    if cfg.objective != expected_objective:
        raise ValueError(f"config objective is {cfg.objective!r}")
    if cfg.privacy is not None and cfg.privacy.total_steps != cfg.steps:
        raise ValueError(
            "privacy.total_steps must equal cfg.steps so the calibrated "
            "budget matches the run"
        )
    rng = RngStream(cfg.seed, "train")
    params = init_params(model, rng.child("init"))
    return rng, params


def _finish(trace, cfg, acc):
    if cfg.privacy is not None:
        trace.realized_epsilon = compose_and_convert(acc, cfg.privacy.delta)
        trace.accountant_steps = acc.steps_recorded


def train_erm(
    model: Model, dataset: Dataset, cfg: TrainConfig
) -> tuple[ModelParams, TrainTrace]:
    """Minibatch SGD on the group-blind average loss."""
    rng, params = _setup(model, dataset, cfg, ERM)
    batch_rng, noise_rng = rng.child("batch"), rng.child("noise")
    acc = AccountantState()
    trace = TrainTrace()
    epoch_len = max(1, len(dataset) // cfg.batch_size)
    for step in range(cfg.steps):
        idx = _draw_batch(dataset, cfg, batch_rng)
        batch = dataset.subset(idx) if idx.size else []
        if cfg.privacy is not None:
            grad = noisy_weighted_gradient(
                model, params, batch, np.ones(idx.size), cfg.privacy, noise_rng,
                normalizer=float(max(1, idx.size)),
            )
            acc.record_steps(cfg.privacy.sampling_rate, cfg.privacy.noise_scale)
        else:
            grad = NoisyGradient(batch_grads(model, params, batch).mean(axis=0), idx.size)
        params = dp_sgd_step(params, grad, cfg.lr)
        if (step + 1) % epoch_len == 0 or step == cfg.steps - 1:
            _record_epoch_loss(trace, model, params, dataset)
    _finish(trace, cfg, acc)
    return params, trace


def train_dro(
    model: Model, dataset: Dataset, cfg: TrainConfig
) -> tuple[ModelParams, TrainTrace]:
    """Minimax training: adversarial group weights, descent on the mixture.

    Each step: per-group batch losses -> exponentiated q update -> descend
    on sum_g q_g * loss_g. Private steps clip each per-sample gradient
    first, then weight it by q_g * (P / batch-count of its group) with P
    the number of groups present, so one example moves the weighted sum by
    at most C * max(weights); the injected noise is scaled by that same
    bound before the accountant step is recorded.
    """
    rng, params = _setup(model, dataset, cfg, GROUP_DRO)
    batch_rng, noise_rng = rng.child("batch"), rng.child("noise")
    acc = AccountantState()
    trace = TrainTrace()
    G = dataset.num_groups
    q = GroupWeights.uniform(G)
    epoch_len = max(1, len(dataset) // cfg.batch_size)
    for step in range(cfg.steps):
        idx = _draw_batch(dataset, cfg, batch_rng)
        batch = dataset.subset(idx) if idx.size else []
        if idx.size:
            groups = batch.groups_array
            losses = batch_losses(model, params, batch)
            counts = np.bincount(groups, minlength=G)
            present = counts > 0
            group_losses = np.zeros(G)
            np.add.at(group_losses, groups, losses)
            group_losses[present] /= counts[present]
            q = GroupWeights(
                _masked_weight_update(q.q, group_losses, present, cfg.dro_step_size)
            )
            q_present = q.q[present] / q.q[present].sum()
            num_present = int(present.sum())
        else:
            present = np.zeros(G, dtype=bool)
            num_present = 1

        if cfg.privacy is not None:
            if idx.size:
                per_group_w = np.zeros(G)
                per_group_w[present] = q_present * num_present / counts[present]
                weights = per_group_w[groups]
            else:
                weights = np.zeros(0)
            grad = noisy_weighted_gradient(
                model, params, batch, weights, cfg.privacy, noise_rng,
                normalizer=float(num_present),
            )
            acc.record_steps(cfg.privacy.sampling_rate, cfg.privacy.noise_scale)
        else:
            if idx.size:
                grads = batch_grads(model, params, batch)
                value = np.zeros(model.num_params)
                for pos, g in enumerate(np.flatnonzero(present)):
                    value += q_present[pos] * grads[groups == g].mean(axis=0)
            else:
                value = np.zeros(model.num_params)
            grad = NoisyGradient(value, idx.size)
        params = dp_sgd_step(params, grad, cfg.lr)
        if (step + 1) % epoch_len == 0 or step == cfg.steps - 1:
            _record_epoch_loss(trace, model, params, dataset)
    _finish(trace, cfg, acc)
    trace.final_group_weights = [float(v) for v in q.q]
    return params, trace
