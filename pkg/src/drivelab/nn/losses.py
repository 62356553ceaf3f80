"""Training losses: L1 pose error with auxiliary past-step terms, plus
squared-norm regularization of the parameters."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, absolute, add, as_tensor, constant, mean, mul, tensor_sum


def l1_loss(pred, target) -> Tensor:
    """Sum of absolute errors over every element."""
    diff = add(as_tensor(pred), mul(as_tensor(target), -1.0))
    return tensor_sum(absolute(diff))


def trajectory_loss(pred, target, aux_weight: float, valid=None) -> Tensor:
    """Pose-prediction loss over all history steps.

    pred/target: (B, H, T, 3); index h = 0 is the prediction made at the
    current step and is weighted 1, predictions made at older steps are the
    auxiliary terms weighted `aux_weight`. Absolute errors are summed over
    future steps and pose channels, weighted-summed over history, then
    averaged over the batch. `valid` (B, H) optionally masks padded rows,
    which then contribute exactly zero.
    """
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    b, h = pred.shape[0], pred.shape[1]
    weights = np.full(h, aux_weight, dtype=np.float64)
    weights[0] = 1.0
    if valid is not None:
        weights = weights[None, :] * np.asarray(valid, dtype=np.float64)
    else:
        weights = np.broadcast_to(weights[None, :], (b, h))
    per_step = tensor_sum(absolute(add(pred, mul(target, -1.0))), axis=(-2, -1))  # (B, H)
    return mean(tensor_sum(mul(per_step, constant(weights)), axis=1))


def l2_regularization(params, weight: float) -> Tensor:
    """(weight / 2) * sum of squared parameters, exactly decomposable."""
    total = constant(0.0)
    for p in params:
        total = add(total, tensor_sum(mul(p, p)))
    return mul(total, weight / 2.0)
