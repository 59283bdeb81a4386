"""Differentiable spatial relation kernels over primitive descriptors.

Every kernel maps a tuple of primitive descriptors to a satisfaction score
in (0, 1].  Shape parameters (sharpness, margins, tolerance widths, target
angles) live in a single :class:`PredicateVocabulary` shared across all
primitive tuples and all classes; only the per-class composition weights
are class-specific (see :mod:`relstruct.scoring`).

Angles are radians internally.  All strictly-positive parameters are
stored as unconstrained raws and mapped through softplus plus a 1e-3
floor, so no projection step is needed during optimization.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .mathcore import softplus_inverse

EDGE_NORM_FLOOR = 1e-6
POSITIVE_FLOOR = 1e-3
ANGLE_DIVERSITY_EPS = 0.01

BINARY_KINDS = ("above", "left", "contains", "h_align", "v_align", "near")
ORDERED_BINARY = ("above", "left", "contains")
SYMMETRIC_BINARY = ("h_align", "v_align", "near")


def _raw(value, dtype):
    """Unconstrained raw for a softplus-plus-floor positive parameter."""
    return Tensor(np.asarray(softplus_inverse(np.asarray(value, dtype=np.float64) - POSITIVE_FLOOR),
                             dtype=dtype), requires_grad=True)


class PredicateVocabulary:
    """Globally shared learnable shape parameters for all predicate families.

    Default target-angle counts: 3 interior angles, 1 turning angle, 4 edge
    orientations.  Angle targets are stored directly in radians; widths and
    sharpness parameters are positive via softplus(raw) + 1e-3.
    """

    def __init__(self, n_tri=3, n_turn=1, n_orient=4, dtype=np.float32):
        self.n_tri = int(n_tri)
        self.n_turn = int(n_turn)
        self.n_orient = int(n_orient)
        self.dtype = dtype
        deg = math.pi / 180.0
        self.params = {
            "kappa_above": _raw(5.0, dtype),
            "kappa_left": _raw(5.0, dtype),
            "kappa_contains": _raw(5.0, dtype),
            "margin_above": Tensor(np.asarray(0.0, dtype=dtype), requires_grad=True),
            "margin_left": Tensor(np.asarray(0.0, dtype=dtype), requires_grad=True),
            "tau_h": _raw(0.2, dtype),
            "tau_v": _raw(0.2, dtype),
            "rho": _raw(0.2, dtype),
            "psi": Tensor(np.asarray([60, 90, 120][:n_tri], dtype=np.float64) * deg,
                          requires_grad=True, dtype=dtype),
            "beta": _raw([0.3] * n_tri, dtype),
            "phi_turn": Tensor(np.asarray([90] * n_turn, dtype=np.float64) * deg,
                               requires_grad=True, dtype=dtype),
            "eta": _raw([0.3] * n_turn, dtype),
            "phi_orient": Tensor(np.asarray([0, 60, 120, 180][:n_orient], dtype=np.float64) * deg,
                                 requires_grad=True, dtype=dtype),
            "gamma": _raw([0.3] * n_orient, dtype),
            "tau_d": _raw(0.5, dtype),
        }

    def __getitem__(self, name):
        if name in ("margin_above", "margin_left", "psi", "phi_turn", "phi_orient"):
            return self.params[name]
        return ad.softplus(self.params[name]) + POSITIVE_FLOOR

    @classmethod
    def from_values(cls, dtype=np.float64, **values):
        """Build a vocabulary whose constrained parameters equal ``values``.

        Convenience for tests: positive parameters are inverted through the
        softplus-plus-floor map, angle/margin parameters are set directly.
        """
        counts = {}
        for key, n_key in (("psi", "n_tri"), ("phi_turn", "n_turn"), ("phi_orient", "n_orient")):
            if key in values:
                counts[n_key] = len(np.atleast_1d(values[key]))
        vocab = cls(dtype=dtype, **counts)
        for name, val in values.items():
            if name in ("margin_above", "margin_left", "psi", "phi_turn", "phi_orient"):
                vocab.params[name] = Tensor(np.asarray(val, dtype=dtype), requires_grad=True)
            else:
                vocab.params[name] = _raw(val, dtype)
        return vocab


# ---------------------------------------------------------------------------
# kernel building blocks (autodiff tensors throughout)
# ---------------------------------------------------------------------------

def bump(x, target, width):
    d = x - target
    return ad.exp(-(d * d) / (2.0 * width * width))


def _floored_norm(v):
    """Euclidean norm over the last axis, floored at EDGE_NORM_FLOOR."""
    sq = ad.sum_(v * v, axis=-1)
    return ad.sqrt(ad.clamp_min(sq, EDGE_NORM_FLOOR * EDGE_NORM_FLOOR))


def _component(t, j):
    """Select component j of the last axis (length-2 coordinate pairs)."""
    return ad.take(t, np.array(j), axis=t.data.ndim - 1)


def eval_presence(sigma):
    """Unary presence score: the descriptor's presence confidence, unchanged."""
    return sigma


def eval_binary(kind, vocab, c_i, c_j, box_i=None, box_j=None):
    """Pairwise kernels over centers (and soft boxes for containment).

    ``c_i``/``c_j`` are (..., 2) tensors; boxes are (..., 4) corner tensors
    ordered (x1, y1, x2, y2) and required only for ``contains``.
    """
    if kind == "above":
        dy = _component(c_j, 1) - _component(c_i, 1)
        return ad.sigmoid(vocab["kappa_above"] * (dy - vocab["margin_above"]))
    if kind == "left":
        dx = _component(c_j, 0) - _component(c_i, 0)
        return ad.sigmoid(vocab["kappa_left"] * (dx - vocab["margin_left"]))
    if kind == "h_align":
        dy = _component(c_i, 1) - _component(c_j, 1)
        return bump(dy, 0.0, vocab["tau_h"])
    if kind == "v_align":
        dx = _component(c_i, 0) - _component(c_j, 0)
        return bump(dx, 0.0, vocab["tau_v"])
    if kind == "near":
        d = c_i - c_j
        rho = vocab["rho"]
        return ad.exp(-ad.sum_(d * d, axis=-1) / (2.0 * rho * rho))
    if kind == "contains":
        margins = ad.stack([
            _component(box_j, 0) - _component(box_i, 0),
            _component(box_j, 1) - _component(box_i, 1),
            _component(box_i, 2) - _component(box_j, 2),
            _component(box_i, 3) - _component(box_j, 3),
        ], axis=-1)
        return ad.sigmoid(vocab["kappa_contains"] * ad.reduce_min_last(margins))
    raise ValueError(f"unknown binary predicate kind: {kind}")


def interior_angle(c_i, c_j, c_k):
    """Angle at c_i between the rays to c_j and c_k, via clamped arccos."""
    u = c_j - c_i
    w = c_k - c_i
    cos = ad.sum_(u * w, axis=-1) / (_floored_norm(u) * _floored_norm(w))
    return ad.arccos_clamped(cos)


def turning_angle(c_i, c_j, c_k):
    """Turn magnitude along the ordered chain i -> j -> k, in [0, pi].

    Defined through arccos of a unit-vector dot product, so left and right
    turns of the same magnitude are indistinguishable by construction.
    """
    u = c_j - c_i
    w = c_k - c_j
    cos = ad.sum_(u * w, axis=-1) / (_floored_norm(u) * _floored_norm(w))
    return ad.arccos_clamped(cos)


def eval_ternary(kind, vocab, c_i, c_j, c_k, instance=0):
    """Three-primitive kernels: 'tri' (interior angle) and 'turn' (chain turn)."""
    if kind == "tri":
        alpha = interior_angle(c_i, c_j, c_k)
        psi = ad.take(vocab["psi"], np.array(instance), axis=0)
        beta = ad.take(vocab["beta"], np.array(instance), axis=0)
        return bump(alpha, psi, beta)
    if kind == "turn":
        theta = turning_angle(c_i, c_j, c_k)
        phi = ad.take(vocab["phi_turn"], np.array(instance), axis=0)
        eta = ad.take(vocab["eta"], np.array(instance), axis=0)
        return bump(theta, phi, eta)
    raise ValueError(f"unknown ternary predicate kind: {kind}")


def eval_quaternary(kind, vocab, c_i, c_j, c_k, c_l, instance=0):
    """Edge-pair kernels: 'orient' (relative orientation) and 'eqdist' (length ratio)."""
    v1 = c_j - c_i
    v2 = c_l - c_k
    if kind == "orient":
        dot = ad.sum_(v1 * v2, axis=-1) / (_floored_norm(v1) * _floored_norm(v2))
        phi = ad.take(vocab["phi_orient"], np.array(instance), axis=0)
        gamma = ad.take(vocab["gamma"], np.array(instance), axis=0)
        diff = dot - _cos(phi)
        return ad.exp(-(diff * diff) / (2.0 * gamma * gamma))
    if kind == "eqdist":
        ratio = ad.log(_floored_norm(v1) / _floored_norm(v2))
        tau_d = vocab["tau_d"]
        return ad.exp(-(ratio * ratio) / (2.0 * tau_d * tau_d))
    raise ValueError(f"unknown quaternary predicate kind: {kind}")


def _cos(t):
    """cos as a composite op (sin/cos are not autodiff primitives)."""
    return _cos_primitive(t)


def _cos_primitive(t):
    t = ad._as_tensor(t)
    out = np.cos(t.data)

    def backward(g):
        ad._accum(t, -g * np.sin(t.data))

    return ad._make(out, (t,), backward)


def loss_angle_diversity(vocab):
    """Inverse-distance repulsion between orientation targets in cosine space.

    Applies only to the orientation angle targets of the edge-orientation
    kernel; interior-angle and turning-angle targets are not covered.
    """
    n = vocab.n_orient
    if n < 2:
        return Tensor(np.asarray(0.0, dtype=vocab.dtype))
    cos = _cos(vocab["phi_orient"])
    terms = []
    for m in range(n):
        for m2 in range(m + 1, n):
            d = ad.take(cos, np.array(m), axis=0) - ad.take(cos, np.array(m2), axis=0)
            terms.append(1.0 / (d * d + ANGLE_DIVERSITY_EPS))
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / float(len(terms)))
