"""Primal-dual saddle-point training loop.

Each dual iteration runs a burst of minibatch SGD steps on the empirical
Lagrangian, then evaluates constraint slacks on the full per-task data and
performs projected dual ascent. Constraint data for past tasks comes from
the replay buffer's per-task slots; the current task constrains itself on
its full training set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from pdcl.nncore import Batch, MlpSpec, grad_lagrangian, loss_mean, per_sample_losses, sgd_step

EPS_FLOOR = 1e-3


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainerConfig:
    primal_lr: float = 0.001
    dual_lr: float = 0.05
    primal_steps: int = 10  # SGD steps per dual iteration
    dual_iters: int = 200
    batch_size: int = 32
    weight_decay: float = 1e-4

    def __post_init__(self):
        if self.primal_lr <= 0 or self.dual_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.primal_steps < 1 or self.dual_iters < 1:
            raise ValueError("need at least one primal step and dual iteration")

    @property
    def steps_per_task(self) -> int:
        return self.primal_steps * self.dual_iters


@dataclass
class Tolerances:
    """Forgetting tolerances derived from recorded unconstrained minima."""

    eps: np.ndarray
    m: np.ndarray
    factor: float

    def __post_init__(self):
        self.eps = np.asarray(self.eps, dtype=np.float64)
        self.m = np.asarray(self.m, dtype=np.float64)


def set_tolerances(m_values, factor: float = 1.15) -> Tolerances:
    """eps_k = factor * m_k, floored at EPS_FLOOR when m_k degenerates to 0."""
    if factor <= 1:
        raise ValueError("tolerance factor must exceed 1")
    m = np.asarray(m_values, dtype=np.float64)
    if np.any(m < 0):
        raise ValueError("unconstrained minima must be nonnegative")
    eps = np.maximum(factor * m, EPS_FLOOR)
    return Tolerances(eps=eps, m=m, factor=factor)


def slack(spec: MlpSpec, theta, data_k: Batch, eps_k: float) -> float:
    """Constraint slack: mean loss on the task's data minus its tolerance."""
    return loss_mean(spec, theta, data_k) - eps_k


def dual_ascent(lam_k: float, s_k: float, dual_lr: float) -> float:
    """Projected ascent step on the nonnegative orthant."""
    if lam_k < 0:
        raise ValueError("multiplier must be nonnegative")
    if dual_lr <= 0:
        raise ValueError("dual learning rate must be positive")
    return max(0.0, lam_k + dual_lr * s_k)


def sample_dual_update(lam_xy: float, loss_value: float, eps_xy: float, dual_lr: float) -> float:
    """Per-sample projected dual ascent; same rule as the task level."""
    return dual_ascent(lam_xy, loss_value - eps_xy, dual_lr)


@dataclass
class IterationRecord:
    task: int
    iteration: int
    lam: np.ndarray
    slacks: np.ndarray
    train_loss: float


@dataclass
class TaskResult:
    theta: np.ndarray
    lam: np.ndarray
    sample_duals: dict[int, float] = field(default_factory=dict)


def _draw(rng, batch: Batch, batch_size: int) -> Batch:
    # Sampling with replacement; small slots are used whole.
    if len(batch) <= batch_size:
        return batch
    return batch.take(rng.integers(0, len(batch), size=batch_size))


def train_task(
    spec: MlpSpec,
    theta_init: np.ndarray,
    train: Batch,
    past_slots: list[Batch],
    eps: np.ndarray,
    cfg: TrainerConfig,
    rng: np.random.Generator,
    sample_level: bool = False,
    on_iteration=None,
) -> TaskResult:
    """Run the saddle-point loop for one task.

    ``past_slots`` holds the buffer batches of tasks 0..t-2 in task order;
    the current training set is appended as constraint t-1, so ``eps`` has
    one entry per seen task. Multipliers start at zero each task. In
    sample-level mode, per-sample duals over the current task are updated
    from full-set losses every dual iteration (with the task's own
    tolerance as a uniform per-sample tolerance) and reported for sample
    selection.
    """
    t = len(past_slots) + 1
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != (t,):
        raise ValueError(f"expected {t} tolerances, got {eps.shape}")

    constraint_data = list(past_slots) + [train]
    theta = np.array(theta_init, dtype=np.float64, copy=True)
    lam = np.zeros(t)
    sample_duals = dict.fromkeys((int(i) for i in train.ids), 0.0) if sample_level else {}

    for it in range(cfg.dual_iters):
        for _ in range(cfg.primal_steps):
            current_mb = _draw(rng, train, cfg.batch_size)
            constraint_mbs = [
                (_draw(rng, data, cfg.batch_size), eps[k])
                for k, data in enumerate(constraint_data)
            ]
            g = grad_lagrangian(spec, theta, lam, current_mb, constraint_mbs)
            theta = sgd_step(theta, g, cfg.primal_lr, cfg.weight_decay)

        slacks = np.array(
            [slack(spec, theta, data, eps[k]) for k, data in enumerate(constraint_data)]
        )
        if not np.all(np.isfinite(slacks)):
            raise TrainingDiverged(
                f"non-finite loss at task iteration {it}; lower the primal learning rate"
            )
        for k in range(t):
            lam[k] = dual_ascent(lam[k], slacks[k], cfg.dual_lr)

        if sample_level:
            losses = per_sample_losses(spec, theta, train)
            for sid, li in zip(train.ids, losses):
                key = int(sid)
                sample_duals[key] = sample_dual_update(
                    sample_duals[key], float(li), eps[t - 1], cfg.dual_lr
                )

        if on_iteration is not None:
            on_iteration(
                IterationRecord(
                    task=t - 1,
                    iteration=it,
                    lam=lam.copy(),
                    slacks=slacks,
                    train_loss=float(slacks[t - 1] + eps[t - 1]),
                )
            )

    return TaskResult(theta=theta, lam=lam, sample_duals=sample_duals)


def train_unconstrained(
    spec: MlpSpec,
    theta_init: np.ndarray,
    train: Batch,
    steps: int,
    cfg: TrainerConfig,
    rng: np.random.Generator,
    replay: Batch = None,
):
    """Plain minibatch SGD, optionally with an experience-replay term.

    With ``replay`` given, each step adds the gradient of the replay
    minibatch's mean loss to the current one (unit weight). Returns the
    final parameters and the final full-set mean training loss.
    """
    theta = np.array(theta_init, dtype=np.float64, copy=True)
    for step in range(steps):
        mb = _draw(rng, train, cfg.batch_size)
        if replay is None:
            g = grad_lagrangian(spec, theta, np.zeros(0), mb, [])
        else:
            rb = _draw(rng, replay, cfg.batch_size)
            g = grad_lagrangian(spec, theta, np.ones(1), mb, [(rb, 0.0)])
        theta = sgd_step(theta, g, cfg.primal_lr, cfg.weight_decay)
    final_loss = loss_mean(spec, theta, train)
    if not np.isfinite(final_loss):
        raise TrainingDiverged("non-finite loss; lower the primal learning rate")
    return theta, final_loss
