"""Concept bottleneck: feature maps -> K heatmaps -> primitive descriptors.

Each heatmap is temperature-normalized into a spatial probability map;
from it we read a soft coordinate (expectation of the normalized grid),
a presence confidence (sigmoid of the max logit, gradient routed to the
argmax cell, row-major tie-break), and an extent equal to twice the
coordinate-wise standard deviation.  Descriptors and soft boxes feed the
relation kernels.  The two heatmap regularizers (pairwise overlap and
spatial spread) also live here.
"""

from __future__ import annotations

import warnings

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .mathcore import softplus_inverse

T_MIN = 0.05
T_INIT = 0.5
EPS_VAR = 1e-8
EPS_EXT = 1e-3
CONC_EPS = 0.01


def make_projection_params(C, K, rng, dtype=np.float32):
    """3x3 conv (C -> K) with bias; He-style init."""
    w = rng.normal(0.0, np.sqrt(2.0 / (C * 9)), size=(K, C, 3, 3))
    return {
        "cb_w": Tensor(w.astype(dtype), requires_grad=True),
        "cb_b": Tensor(np.zeros(K, dtype=dtype), requires_grad=True),
        "t_raw": Tensor(np.asarray(softplus_inverse(T_INIT - T_MIN), dtype=dtype),
                        requires_grad=True),
    }


def temperature(params):
    """T = T_MIN + softplus(t_raw): positive without projection steps."""
    return ad.softplus(params["t_raw"]) + T_MIN


def project_features(F, params):
    """Feature map (B, C, Hf, Wf) -> heatmap logits (B, K, Hf, Wf)."""
    if F.shape[1] != params["cb_w"].shape[1]:
        raise ValueError(
            f"project_features: feature channels {F.shape[1]} != projection input {params['cb_w'].shape[1]}")
    return ad.conv2d(F, params["cb_w"], params["cb_b"], stride=1, padding=1)


def grid_coords(hf, wf, dtype=np.float32):
    """Normalized grid g[h, w] = (2w/(Wf-1)-1, 2h/(Hf-1)-1), each in [-1, 1]."""
    if hf < 2 or wf < 2:
        raise ValueError("grid_coords: spatial dims must be >= 2")
    gx = 2.0 * np.arange(wf) / (wf - 1) - 1.0
    gy = 2.0 * np.arange(hf) / (hf - 1) - 1.0
    gxx, gyy = np.meshgrid(gx, gy)
    return gxx.astype(dtype), gyy.astype(dtype)


def normalize_heatmap(H, T):
    """Spatial softmax of H/T per primitive; cells sum to 1."""
    B, K, hf, wf = H.shape
    flat = ad.reshape(H, (B, K, hf * wf)) / T
    return ad.reshape(ad.softmax_last(flat), (B, K, hf, wf))


def soft_coordinates(Hn):
    """Expected grid coordinate under the normalized heatmap: (B, K, 2) in [-1, 1]^2."""
    B, K, hf, wf = Hn.shape
    gx, gy = grid_coords(hf, wf, Hn.dtype)
    flat = ad.reshape(Hn, (B, K, hf * wf))
    cx = ad.sum_(flat * gx.reshape(-1), axis=-1)
    cy = ad.sum_(flat * gy.reshape(-1), axis=-1)
    return ad.stack([cx, cy], axis=-1)


def presence(H):
    """sigmoid(max over cells); gradient flows to the (first) argmax cell."""
    B, K, hf, wf = H.shape
    return ad.sigmoid(ad.reduce_max_last(ad.reshape(H, (B, K, hf * wf))))


def extent(Hn, c):
    """Twice the coordinate-wise standard deviation about the soft mean.

    Variance is taken about the soft coordinate (not the grid center); a
    small constant inside the sqrt avoids the gradient blow-up at one-hot
    maps and the result is floored at EPS_EXT.
    """
    B, K, hf, wf = Hn.shape
    gx, gy = grid_coords(hf, wf, Hn.dtype)
    flat = ad.reshape(Hn, (B, K, hf * wf))
    cx = ad.reshape(ad.take(c, np.array(0), axis=2), (B, K, 1))
    cy = ad.reshape(ad.take(c, np.array(1), axis=2), (B, K, 1))
    dx = gx.reshape(-1) - cx
    dy = gy.reshape(-1) - cy
    var_x = ad.sum_(flat * dx * dx, axis=-1)
    var_y = ad.sum_(flat * dy * dy, axis=-1)
    ex = ad.clamp_min(2.0 * ad.sqrt(var_x + EPS_VAR), EPS_EXT)
    ey = ad.clamp_min(2.0 * ad.sqrt(var_y + EPS_VAR), EPS_EXT)
    return ad.stack([ex, ey], axis=-1)


def soft_boxes(c, delta):
    """Corner boxes (x1, y1, x2, y2) = (c - delta, c + delta)."""
    return ad.concat([c - delta, c + delta], axis=-1)


def describe(H, T):
    """Full heatmap stack -> (normalized maps, centers, presence, extents, boxes)."""
    Hn = normalize_heatmap(H, T)
    c = soft_coordinates(Hn)
    sig = presence(H)
    delta = extent(Hn, c)
    return Hn, c, sig, delta, soft_boxes(c, delta)


def loss_diversity(Hn):
    """Mean pairwise cosine similarity of the flattened normalized heatmaps.

    Nonnegative maps give a value in [0, 1]; 1 iff all maps are positively
    proportional (here: identical, since each sums to 1).
    """
    B, K, hf, wf = Hn.shape
    if K < 2:
        warnings.warn("loss_diversity: needs K >= 2 heatmaps, returning 0")
        return Tensor(np.asarray(0.0, dtype=Hn.dtype))
    flat = ad.reshape(Hn, (B, K, hf * wf))
    norm = ad.sqrt(ad.clamp_min(ad.sum_(flat * flat, axis=-1, keepdims=True), 1e-24))
    unit = flat / norm
    gram = unit @ ad.transpose(unit, (0, 2, 1))           # (B, K, K)
    total = ad.sum_(gram) - float(B * K)                  # drop the diagonal
    return total * (1.0 / float(B * K * (K - 1)))


def loss_concentration(Hn):
    """-(1/K) sum_k sum_cells Hn log(Hn + eps); lower for peaked maps."""
    B, K, _, _ = Hn.shape
    return ad.sum_(-Hn * ad.log(Hn + CONC_EPS)) * (1.0 / float(B * K))
