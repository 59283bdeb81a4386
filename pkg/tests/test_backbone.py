"""Backbone shapes, gradients, and the style-mixing augmentation."""

import numpy as np
import pytest

from relstruct import autodiff as ad
from relstruct import backbone as bb
from relstruct.autodiff import Tensor
from relstruct.mathcore import finite_diff_check


def test_output_shape_64_to_16():
    rng = np.random.default_rng(0)
    params = bb.make_backbone_params((8, 12, 12), rng=rng, dtype=np.float64)
    out = bb.forward(rng.random((2, 3, 64, 64)), params, (8, 12, 12))
    assert out.shape == (2, 12, 16, 16)


def test_zero_image_zero_params_zero_features():
    widths = (4, 4)
    params = {f"conv{i}_w": Tensor(np.zeros((4, c_in, 3, 3)))
              for i, c_in in enumerate((3, 4))}
    params.update({f"conv{i}_b": Tensor(np.zeros(4)) for i in range(2)})
    out = bb.forward(np.zeros((1, 3, 16, 16)), params, widths)
    np.testing.assert_array_equal(out.data, 0.0)


def test_backbone_gradcheck_two_layers():
    rng = np.random.default_rng(1)
    widths = (3, 4)
    params = bb.make_backbone_params(widths, rng=rng, dtype=np.float64)
    for p in params.values():
        p.data = p.data + rng.normal(0.0, 0.05, size=p.data.shape)
    x = rng.random((2, 3, 8, 8))
    v = rng.normal(size=(2, 4, 2, 2))

    rep = finite_diff_check(lambda: ad.sum_(bb.forward(x, params, widths) * v),
                            params, h=1e-6, h_fallback=1e-4)
    assert rep.max_rel_err <= 1e-4, rep


def test_style_mix_identity_cases():
    rng = np.random.default_rng(2)
    F = Tensor(rng.normal(size=(4, 3, 5, 5)))
    perm = np.array([2, 3, 0, 1])
    # lam = 1 keeps own statistics exactly
    assert bb.style_mix(F, 1.0, perm) is F
    # identity permutation mixes an instance with itself
    assert bb.style_mix(F, 0.25, np.arange(4)) is F


def test_style_mix_swaps_statistics_at_lam_zero():
    rng = np.random.default_rng(3)
    F = Tensor(rng.normal(2.0, 1.5, size=(2, 4, 6, 6)))
    out = bb.style_mix(F, 0.0, np.array([1, 0])).data
    mu = F.data.mean(axis=(2, 3))
    sd = F.data.std(axis=(2, 3))
    np.testing.assert_allclose(out.mean(axis=(2, 3)), mu[::-1], atol=1e-9)
    np.testing.assert_allclose(out.std(axis=(2, 3)), sd[::-1], rtol=1e-5)


def test_style_mix_halfway_means():
    rng = np.random.default_rng(4)
    F = Tensor(rng.normal(0.0, 1.0, size=(2, 3, 4, 4)))
    out = bb.style_mix(F, 0.5, np.array([1, 0])).data
    mu = F.data.mean(axis=(2, 3))
    pair_avg = 0.5 * (mu + mu[::-1])
    np.testing.assert_allclose(out.mean(axis=(2, 3)), pair_avg, atol=1e-9)


def test_style_mix_validation_and_gradient():
    rng = np.random.default_rng(5)
    with pytest.raises(ValueError):
        bb.style_mix(Tensor(rng.normal(size=(2, 2, 3, 3))), 1.5, np.array([1, 0]))
    F = Tensor(rng.normal(size=(2, 2, 4, 4)), requires_grad=True)
    v = rng.normal(size=(2, 2, 4, 4))
    rep = finite_diff_check(
        lambda: ad.sum_(bb.style_mix(F, 0.3, np.array([1, 0])) * v), {"F": F}, h=1e-6)
    assert rep.max_rel_err <= 1e-5, rep
