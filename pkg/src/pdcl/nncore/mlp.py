"""MLP parameterization, flat parameter vector layout, and loss gradients.

Parameters live in a single flat float64 vector. The layout is
``[W_0, b_0, W_1, b_1, ...]`` with each ``W_l`` stored row-major with shape
``(width_l, width_{l+1})``. All functions here are pure; the heavy lifting
is delegated to the selected kernel backend.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of a dense ReLU network.

    ``layer_widths`` is ``(input_dim, hidden..., n_classes)``.
    """

    layer_widths: tuple[int, ...]
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if len(self.layer_widths) < 2:
            raise ValueError("need at least input and output layers")
        if any(w < 1 for w in self.layer_widths):
            raise ValueError("all layer widths must be >= 1")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation: {self.activation}")

    @property
    def n_classes(self) -> int:
        return self.layer_widths[-1]

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]


@dataclass
class Batch:
    """Labeled minibatch: features, integer labels, and stable sample ids."""

    x: np.ndarray
    y: np.ndarray
    ids: np.ndarray = field(default=None)

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float64)
        self.y = np.ascontiguousarray(self.y, dtype=np.int64)
        if self.ids is None:
            self.ids = np.arange(len(self.y), dtype=np.int64)
        else:
            self.ids = np.ascontiguousarray(self.ids, dtype=np.int64)
        if self.x.ndim != 2 or len(self.y) != self.x.shape[0]:
            raise ValueError("x must be (n, d) with matching label count")
        if len(self.y) < 1:
            raise ValueError("batch must be nonempty")

    def __len__(self) -> int:
        return len(self.y)

    def take(self, idx) -> "Batch":
        return Batch(self.x[idx], self.y[idx], self.ids[idx])


def param_count(spec: MlpSpec) -> int:
    widths = spec.layer_widths
    return sum(widths[i] * widths[i + 1] + widths[i + 1] for i in range(len(widths) - 1))


def unpack_params(spec: MlpSpec, theta: np.ndarray):
    """Zero-copy views (ws, bs) into the flat parameter vector."""
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    if theta.shape != (param_count(spec),):
        raise ValueError(
            f"parameter vector has length {theta.shape}, expected ({param_count(spec)},)"
        )
    widths = spec.layer_widths
    ws, bs = [], []
    off = 0
    for i in range(len(widths) - 1):
        n_in, n_out = widths[i], widths[i + 1]
        ws.append(theta[off : off + n_in * n_out].reshape(n_in, n_out))
        off += n_in * n_out
        bs.append(theta[off : off + n_out])
        off += n_out
    return ws, bs


def init_params(spec: MlpSpec) -> np.ndarray:
    """Fan-in scaled uniform weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(spec.seed)
    theta = np.zeros(param_count(spec), dtype=np.float64)
    ws, _ = unpack_params(spec, theta)
    for w in ws:
        bound = 1.0 / np.sqrt(w.shape[0])
        w[...] = rng.uniform(-bound, bound, size=w.shape)
    return theta


def forward(spec: MlpSpec, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    from pdcl.nncore import kernels

    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(f"x must be (n, {spec.input_dim})")
    ws, bs = unpack_params(spec, theta)
    return kernels.forward(ws, bs, x)


def loss_mean(spec: MlpSpec, theta: np.ndarray, batch: Batch) -> float:
    from pdcl.nncore import kernels

    ws, bs = unpack_params(spec, theta)
    return float(kernels.per_sample_losses(ws, bs, batch.x, batch.y).mean())


def per_sample_losses(spec: MlpSpec, theta: np.ndarray, batch: Batch) -> np.ndarray:
    from pdcl.nncore import kernels

    ws, bs = unpack_params(spec, theta)
    return kernels.per_sample_losses(ws, bs, batch.x, batch.y)


def _flatten_grads(spec: MlpSpec, gws, gbs) -> np.ndarray:
    g = np.empty(param_count(spec), dtype=np.float64)
    vws, vbs = unpack_params(spec, g)
    for dst, src in zip(vws, gws):
        dst[...] = src
    for dst, src in zip(vbs, gbs):
        dst[...] = src
    return g


def grad_loss_mean(spec: MlpSpec, theta: np.ndarray, batch: Batch):
    """Gradient of the mean cross-entropy loss. Returns (loss, flat grad)."""
    from pdcl.nncore import kernels

    ws, bs = unpack_params(spec, theta)
    loss, gws, gbs = kernels.loss_and_grad(ws, bs, batch.x, batch.y)
    return loss, _flatten_grads(spec, gws, gbs)


def grad_lagrangian(
    spec: MlpSpec,
    theta: np.ndarray,
    lam: np.ndarray,
    current: Batch,
    constraint_batches,
) -> np.ndarray:
    """Gradient of  L(theta) + sum_k lam_k * (L_k(theta) - eps_k).

    ``constraint_batches`` is a list of ``(Batch, eps_k)`` pairs; the eps
    terms are constant in theta and contribute no gradient. Terms with
    ``lam_k == 0`` are skipped, so the result is bitwise equal to the plain
    objective gradient when all multipliers vanish.
    """
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape != (len(constraint_batches),):
        raise ValueError("lam length must match number of constraint batches")
    if np.any(lam < 0):
        raise ValueError("multipliers must be nonnegative")
    _, g = grad_loss_mean(spec, theta, current)
    for lam_k, (batch_k, _eps_k) in zip(lam, constraint_batches):
        if lam_k == 0.0:
            continue
        _, gk = grad_loss_mean(spec, theta, batch_k)
        g += lam_k * gk
    return g


def sgd_step(theta: np.ndarray, g: np.ndarray, lr: float, weight_decay: float = 0.0) -> np.ndarray:
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if weight_decay < 0:
        raise ValueError("weight decay must be nonnegative")
    if weight_decay == 0.0:
        return theta - lr * g
    return theta - lr * (g + weight_decay * theta)
