"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np


def finite_difference_gradient(f, param, h: float = 1e-6, entries=None) -> np.ndarray:
    """Numeric gradient of the scalar f() with respect to one parameter.

    f is re-evaluated with single entries of `param.value` displaced by
    +/- h. With `entries` given (flat indices), only those are probed and
    the rest of the returned array is NaN.
    """
    flat = param.value.reshape(-1)
    grad = np.full(flat.shape, np.nan)
    idx = range(flat.size) if entries is None else entries
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        f_plus = float(f())
        flat[i] = orig - h
        f_minus = float(f())
        flat[i] = orig
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad.reshape(param.value.shape)


def max_relative_error(
    analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6, noise_floor: float = 1e-7
) -> float:
    """max |a - n| / max(|a|, |n|, floor), ignoring unprobed (NaN) entries.

    Absolute differences below `noise_floor` are treated as zero: central
    differences at h = 1e-6 carry ~(|f| * 1e-16 / 2e-6) of roundoff noise,
    which would otherwise dominate entries whose true gradient is zero.
    """
    mask = ~np.isnan(numeric)
    if not np.any(mask):
        return 0.0
    a, n = np.asarray(analytic)[mask], np.asarray(numeric)[mask]
    diff = np.abs(a - n)
    diff = np.where(diff < noise_floor, 0.0, diff)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(diff / denom))


def check_gradients(build_loss, params, h: float = 1e-6, rng=None, max_entries: int | None = None) -> float:
    """Backprop through build_loss() once, then compare every parameter's
    analytic gradient against central differences; returns the worst
    relative error. `max_entries` probes a random subset per parameter."""
    for p in params:
        p.zero_grad()
    loss = build_loss()
    loss.backward()
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.value) if p.grad is None else p.grad
        entries = None
        if max_entries is not None and p.value.size > max_entries:
            if rng is None:
                raise ValueError("sampled gradient checks need an rng")
            entries = rng.choice(p.value.size, size=max_entries, replace=False)
        numeric = finite_difference_gradient(lambda: build_loss().value, p, h=h, entries=entries)
        worst = max(worst, max_relative_error(analytic, numeric))
    return worst
