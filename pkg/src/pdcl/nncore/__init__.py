"""Minimal dense neural network with analytic gradients.

Two interchangeable kernel backends exist: a compiled Cython extension and
a pure-numpy fallback. The extension is preferred when importable; set
``PDCL_BACKEND=numpy`` or ``PDCL_BACKEND=cython`` to force a choice.
"""

import os

_requested = os.environ.get("PDCL_BACKEND", "").lower()

if _requested == "numpy":
    from . import _kernels_np as kernels

    BACKEND = "numpy"
elif _requested == "cython":
    from . import _kernels_cy as kernels

    BACKEND = "cython"
else:
    try:
        from . import _kernels_cy as kernels

        BACKEND = "cython"
    except ImportError:
        from . import _kernels_np as kernels

        BACKEND = "numpy"

from .mlp import (
    Batch,
    MlpSpec,
    forward,
    grad_lagrangian,
    grad_loss_mean,
    init_params,
    loss_mean,
    param_count,
    per_sample_losses,
    sgd_step,
    unpack_params,
)

__all__ = [
    "BACKEND",
    "Batch",
    "MlpSpec",
    "forward",
    "grad_lagrangian",
    "grad_loss_mean",
    "init_params",
    "kernels",
    "loss_mean",
    "param_count",
    "per_sample_losses",
    "sgd_step",
    "unpack_params",
]
