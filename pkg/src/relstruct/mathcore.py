"""Shared differentiable scalar/array kernels and the gradient-check harness.

The numpy-level functions here (``sparsemax``, ``sigmoid``,
``gaussian_bump``, ``softplus``) are the reference forms; the autodiff ops
in :mod:`relstruct.autodiff` compute the same values on graph tensors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    sparsemax_np as sparsemax,
    sparsemax_backward_np as sparsemax_backward,
    _sigmoid_np,
    _softplus_np,
)

__all__ = [
    "sparsemax",
    "sparsemax_backward",
    "sigmoid",
    "softplus",
    "gaussian_bump",
    "GradReport",
    "finite_diff_check",
]


def sigmoid(x):
    return _sigmoid_np(np.asarray(x, dtype=np.float64)) if np.isscalar(x) else _sigmoid_np(np.asarray(x))


def softplus(x):
    return _softplus_np(np.asarray(x, dtype=np.float64)) if np.isscalar(x) else _softplus_np(np.asarray(x))


def softplus_inverse(y):
    """Inverse of softplus, used to initialize unconstrained raw parameters."""
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def gaussian_bump(x, target, width):
    """exp(-(x-target)^2 / (2 width^2)); equals 1 at x == target."""
    if np.any(np.asarray(width) <= 0):
        raise ValueError("gaussian_bump: width must be strictly positive")
    x = np.asarray(x)
    d = x - target
    return np.exp(-(d * d) / (2.0 * np.asarray(width) ** 2))


@dataclass
class GradReport:
    max_rel_err: float
    worst_param: str
    analytic: float
    numeric: float

    def __post_init__(self):
        assert self.max_rel_err >= 0.0


def finite_diff_check(loss_fn, params, h=1e-5, h_fallback=None):
    """Compare analytic gradients of ``loss_fn`` against central differences.

    ``params`` maps names to leaf Tensors that ``loss_fn`` closes over.
    Every coordinate of every parameter is perturbed by +-h and the central
    difference (f(x+h) - f(x-h)) / 2h is compared to the accumulated
    ``.grad``.  Relative error uses max(|analytic|, |numeric|, 1e-8) as
    denominator.  Evaluate in float64; float32 central differences are too
    noisy to be meaningful at these tolerances.
    """
    for p in params.values():
        p.data = np.asarray(p.data)  # 0-d numpy scalars would break in-place perturbation
        p.zero_grad()
        p.requires_grad = True
    loss = loss_fn()
    value = float(loss.data)
    if not np.isfinite(value):
        raise FloatingPointError("finite_diff_check: loss is non-finite at the base point")
    loss.backward()
    analytic = {}
    for name, p in params.items():
        analytic[name] = np.zeros_like(p.data) if p.grad is None else p.grad.copy()

    def central(flat, i, step, where):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(loss_fn().data)
        flat[i] = orig - step
        fm = float(loss_fn().data)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(
                f"finite_diff_check: non-finite loss while perturbing {where}")
        return (fp - fm) / (2.0 * step)

    report = GradReport(0.0, "", 0.0, 0.0)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        ga = analytic[name].reshape(-1)
        for i in range(flat.size):
            num = central(flat, i, h, f"{name}[{i}]")
            ana = float(ga[i])
            rel = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            if rel > 1e-6 and h_fallback is not None:
                # near-zero gradients are roundoff-limited at small h; a larger
                # step trades truncation error for noise — keep the better match
                num2 = central(flat, i, h_fallback, f"{name}[{i}]")
                rel2 = abs(ana - num2) / max(abs(ana), abs(num2), 1e-8)
                if rel2 < rel:
                    rel, num = rel2, num2
            if rel > report.max_rel_err:
                report = GradReport(rel, f"{name}[{i}]", ana, num)
    return report
