"""Small trainable convolutional feature extractor and style mixing.

Three 3x3 conv + ReLU blocks (stride 2 on the first two) map a 64x64 RGB
image to a C x 16 x 16 feature map.  Style mixing perturbs per-channel
spatial statistics by blending each instance's mean/std with those of a
permuted batch partner; it is applied between blocks 1 and 2 when
enabled.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

DEFAULT_WIDTHS = (32, 64, 64)
STYLE_MIX_PROB = 0.5
STYLE_MIX_BETA = 0.1
STD_FLOOR = 1e-6


def make_backbone_params(widths=DEFAULT_WIDTHS, in_channels=3, rng=None, dtype=np.float32,
                         bias=True):
    params = {}
    c_in = in_channels
    for i, c_out in enumerate(widths):
        w = rng.normal(0.0, np.sqrt(2.0 / (c_in * 9)), size=(c_out, c_in, 3, 3))
        params[f"conv{i}_w"] = Tensor(w.astype(dtype), requires_grad=True)
        b = np.zeros(c_out, dtype=dtype)
        params[f"conv{i}_b"] = Tensor(b, requires_grad=True)
        c_in = c_out
    return params


def forward(images, params, widths=DEFAULT_WIDTHS, style_mix_after=None):
    """Images (B, 3, H, W) in [0, 1] -> features (B, widths[-1], H/4, W/4).

    ``style_mix_after``, when given, is a callable applied to the block-1
    output (the style-mixing hook point).
    """
    x = images if isinstance(images, Tensor) else Tensor(images)
    for i in range(len(widths)):
        stride = 2 if i < 2 else 1
        x = ad.relu(ad.conv2d(x, params[f"conv{i}_w"], params[f"conv{i}_b"],
                              stride=stride, padding=1))
        if i == 0 and style_mix_after is not None:
            x = style_mix_after(x)
    return x


def style_mix(F, lam_mix, permutation):
    """Blend per-instance channel statistics with a permuted partner's.

    F' = (F - mu) / max(std, 1e-6) * std_mix + mu_mix with
    mu_mix = lam * mu + (1-lam) * mu_perm (same for std).  lam_mix = 1 or
    an identity permutation reproduce F exactly.
    """
    lam_mix = float(lam_mix)
    if not 0.0 <= lam_mix <= 1.0:
        raise ValueError("style_mix: lam_mix must be in [0, 1]")
    B, C, H, W = F.shape
    perm_arr = np.asarray(permutation)
    if lam_mix == 1.0 or np.array_equal(perm_arr, np.arange(B)):
        return F  # exact identity, not merely numerically close
    flat = ad.reshape(F, (B, C, H * W))
    mu = ad.mean(flat, axis=2, keepdims=True)
    var = ad.mean((flat - mu) * (flat - mu), axis=2, keepdims=True)
    std = ad.sqrt(ad.clamp_min(var, STD_FLOOR * STD_FLOOR))
    perm = np.asarray(permutation)
    mu_p = ad.take(mu, perm, axis=0)
    std_p = ad.take(std, perm, axis=0)
    mu_mix = lam_mix * mu + (1.0 - lam_mix) * mu_p
    std_mix = lam_mix * std + (1.0 - lam_mix) * std_p
    out = (flat - mu) / std * std_mix + mu_mix
    return ad.reshape(out, (B, C, H, W))
