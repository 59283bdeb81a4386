"""Relation kernel values and their symmetry/invariance properties."""

import numpy as np
import pytest

from relstruct import predicates as pred
from relstruct.autodiff import Tensor
from relstruct.mathcore import sigmoid


def T(x):
    return Tensor(np.asarray(x, dtype=np.float64))


def rot(points, theta):
    R = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    return points @ R.T


@pytest.fixture(scope="module")
def vocab():
    return pred.PredicateVocabulary(dtype=np.float64)


# ---------------------------------------------------------------------------
# vocabulary parameterization
# ---------------------------------------------------------------------------

def test_vocabulary_defaults(vocab):
    assert float(vocab["kappa_above"].data) == pytest.approx(5.0, rel=1e-6)
    assert float(vocab["tau_h"].data) == pytest.approx(0.2, rel=1e-6)
    assert float(vocab["rho"].data) == pytest.approx(0.2, rel=1e-6)
    assert float(vocab["tau_d"].data) == pytest.approx(0.5, rel=1e-6)
    assert float(vocab["margin_above"].data) == 0.0
    np.testing.assert_allclose(vocab["psi"].data, np.deg2rad([60, 90, 120]), atol=1e-12)
    np.testing.assert_allclose(vocab["phi_turn"].data, np.deg2rad([90]), atol=1e-12)
    np.testing.assert_allclose(vocab["phi_orient"].data, np.deg2rad([0, 60, 120, 180]),
                               atol=1e-12)
    assert vocab.n_tri == 3 and vocab.n_turn == 1 and vocab.n_orient == 4


def test_vocabulary_positivity_floor():
    v = pred.PredicateVocabulary(dtype=np.float64)
    v.params["kappa_above"].data = np.asarray(-1e6)  # arbitrarily negative raw
    assert float(v["kappa_above"].data) >= pred.POSITIVE_FLOOR


def test_vocabulary_from_values_round_trip():
    v = pred.PredicateVocabulary.from_values(kappa_above=4.0, margin_above=0.1,
                                             psi=np.deg2rad([60.0]), beta=[0.3])
    assert float(v["kappa_above"].data) == pytest.approx(4.0, rel=1e-9)
    assert float(v["margin_above"].data) == pytest.approx(0.1)
    assert v.n_tri == 1


# ---------------------------------------------------------------------------
# pinned kernel values
# ---------------------------------------------------------------------------

def test_presence_identity(vocab):
    for s in (1.0, 0.0, 0.37):
        assert float(pred.eval_presence(T(s)).data) == s


def test_above_value():
    v = pred.PredicateVocabulary.from_values(kappa_above=4.0, margin_above=0.1)
    out = pred.eval_binary("above", v, T([0.0, 0.0]), T([0.0, 0.6]))
    assert float(out.data) == pytest.approx(float(sigmoid(2.0)), abs=1e-6)
    assert float(out.data) == pytest.approx(0.88080, abs=1e-5)


def test_contains_value():
    v = pred.PredicateVocabulary.from_values(kappa_contains=10.0)
    out = pred.eval_binary("contains", v, T([0, 0]), T([0, 0]),
                           T([-0.5, -0.5, 0.5, 0.5]), T([-0.2, -0.2, 0.2, 0.2]))
    assert float(out.data) == pytest.approx(float(sigmoid(3.0)), abs=1e-6)
    assert float(out.data) == pytest.approx(0.95257, abs=1e-5)


def test_alignment_and_near_peaks(vocab):
    assert float(pred.eval_binary("near", vocab, T([0.3, -0.2]), T([0.3, -0.2])).data) == 1.0
    assert float(pred.eval_binary("h_align", vocab, T([0.1, 0.4]), T([-0.7, 0.4])).data) == 1.0
    assert float(pred.eval_binary("v_align", vocab, T([0.1, 0.4]), T([0.1, -0.5])).data) == 1.0
    with pytest.raises(ValueError):
        pred.eval_binary("sideways", vocab, T([0, 0]), T([1, 1]))


def test_tri_equilateral(vocab):
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]])
    out = pred.eval_ternary("tri", vocab, T(pts[0]), T(pts[1]), T(pts[2]), instance=0)
    assert float(out.data) == pytest.approx(1.0, abs=1e-9)  # psi_0 = 60 degrees


def test_tri_one_width_deviation():
    v = pred.PredicateVocabulary.from_values(psi=np.deg2rad([60.0]),
                                             beta=[np.deg2rad(30.0)])
    # right angle at the apex, target 60 deg, width 30 deg: one-sigma deviation
    out = pred.eval_ternary("tri", v, T([0.0, 0.0]), T([1.0, 0.0]), T([0.0, 1.0]))
    assert float(out.data) == pytest.approx(np.exp(-0.5), abs=1e-6)


def test_turn_collinear():
    v = pred.PredicateVocabulary.from_values(phi_turn=[0.0], eta=[0.3])
    out = pred.eval_ternary("turn", v, T([0.0, 0.0]), T([0.5, 0.0]), T([1.2, 0.0]))
    # the arccos clamp (eps 1e-6) leaves a ~1e-5 gap at exactly zero turn
    assert float(out.data) == pytest.approx(1.0, abs=1e-4)
    with pytest.raises(ValueError):
        pred.eval_ternary("spin", v, T([0, 0]), T([1, 0]), T([2, 0]))


def test_orient_parallel(vocab):
    out = pred.eval_quaternary("orient", vocab, T([0.0, 0.0]), T([1.0, 0.0]),
                               T([0.3, 0.5]), T([0.9, 0.5]), instance=0)
    assert float(out.data) == pytest.approx(1.0, abs=1e-9)  # phi_0 = 0, cos = 1


def test_eqdist_values(vocab):
    out = pred.eval_quaternary("eqdist", vocab, T([0.0, 0.0]), T([0.7, 0.0]),
                               T([0.1, 0.2]), T([0.1, 0.9]))
    assert float(out.data) == pytest.approx(1.0, abs=1e-9)  # equal lengths
    v = pred.PredicateVocabulary.from_values(tau_d=1.0)
    out = pred.eval_quaternary("eqdist", v, T([0.0, 0.0]), T([1.0, 0.0]),
                               T([0.0, 0.0]), T([np.e, 0.0]))
    assert float(out.data) == pytest.approx(np.exp(-0.5), abs=1e-6)  # log ratio 1
    with pytest.raises(ValueError):
        pred.eval_quaternary("skew", v, T([0, 0]), T([1, 0]), T([0, 1]), T([1, 1]))


# ---------------------------------------------------------------------------
# angle diversity regularizer
# ---------------------------------------------------------------------------

def test_angle_diversity_coincident():
    v = pred.PredicateVocabulary.from_values(phi_orient=[0.5, 0.5], gamma=[0.3, 0.3])
    assert float(pred.loss_angle_diversity(v).data) == pytest.approx(100.0, abs=1e-9)


def test_angle_diversity_opposed():
    v = pred.PredicateVocabulary.from_values(phi_orient=[0.0, np.pi], gamma=[0.3, 0.3])
    assert float(pred.loss_angle_diversity(v).data) == pytest.approx(1.0 / 4.01, abs=1e-9)


def test_angle_diversity_monotone_decreasing():
    vals = []
    for sep in (0.1, 0.3, 0.6, 1.0):
        v = pred.PredicateVocabulary.from_values(phi_orient=[0.2, 0.2 + sep],
                                                 gamma=[0.3, 0.3])
        vals.append(float(pred.loss_angle_diversity(v).data))
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_angle_diversity_single_target_zero():
    v = pred.PredicateVocabulary.from_values(phi_orient=[0.7], gamma=[0.3])
    assert float(pred.loss_angle_diversity(v).data) == 0.0


# ---------------------------------------------------------------------------
# property suite: range / symmetry / translation / rotation
# ---------------------------------------------------------------------------

N_PROP = 500   # the acceptance suite runs the full 10^4-configuration sweep
TOL = 1e-5


def _random_config(rng):
    return rng.uniform(-1.0, 1.0, size=(4, 2))


def test_property_range_and_symmetry(vocab):
    rng = np.random.default_rng(17)
    for _ in range(N_PROP):
        p = _random_config(rng)
        d = np.abs(rng.normal(0.3, 0.1, size=(2, 2))) + 0.05
        boxes = [np.concatenate([p[i] - d[i % 2], p[i] + d[i % 2]]) for i in range(2)]
        for kind in pred.BINARY_KINDS:
            out = float(pred.eval_binary(kind, vocab, T(p[0]), T(p[1]),
                                         T(boxes[0]), T(boxes[1])).data)
            assert 0.0 <= out <= 1.0 + TOL
        for kind in pred.SYMMETRIC_BINARY:
            ab = float(pred.eval_binary(kind, vocab, T(p[0]), T(p[1])).data)
            ba = float(pred.eval_binary(kind, vocab, T(p[1]), T(p[0])).data)
            assert abs(ab - ba) <= TOL
        # tri is symmetric in its wing arguments; turn in its endpoints
        tri_a = float(pred.eval_ternary("tri", vocab, T(p[0]), T(p[1]), T(p[2])).data)
        tri_b = float(pred.eval_ternary("tri", vocab, T(p[0]), T(p[2]), T(p[1])).data)
        assert abs(tri_a - tri_b) <= TOL
        turn_a = float(pred.eval_ternary("turn", vocab, T(p[0]), T(p[1]), T(p[2])).data)
        turn_b = float(pred.eval_ternary("turn", vocab, T(p[2]), T(p[1]), T(p[0])).data)
        assert abs(turn_a - turn_b) <= TOL
        assert 0.0 <= tri_a <= 1.0 + TOL and 0.0 <= turn_a <= 1.0 + TOL
        for kind in ("orient", "eqdist"):
            out = float(pred.eval_quaternary(kind, vocab, *(T(q) for q in p)).data)
            assert 0.0 <= out <= 1.0 + TOL


def test_property_translation_invariance(vocab):
    rng = np.random.default_rng(23)
    for _ in range(N_PROP):
        p = _random_config(rng)
        t = rng.uniform(-0.5, 0.5, size=2)
        d = np.abs(rng.normal(0.3, 0.1, size=2)) + 0.05
        for kind in pred.BINARY_KINDS:
            if kind == "contains":
                b = [np.concatenate([p[i] - d, p[i] + d]) for i in range(2)]
                bt = [np.concatenate([p[i] + t - d, p[i] + t + d]) for i in range(2)]
                a0 = float(pred.eval_binary(kind, vocab, T(p[0]), T(p[1]),
                                            T(b[0]), T(b[1])).data)
                a1 = float(pred.eval_binary(kind, vocab, T(p[0] + t), T(p[1] + t),
                                            T(bt[0]), T(bt[1])).data)
            else:
                a0 = float(pred.eval_binary(kind, vocab, T(p[0]), T(p[1])).data)
                a1 = float(pred.eval_binary(kind, vocab, T(p[0] + t), T(p[1] + t)).data)
            assert abs(a0 - a1) <= TOL, kind
        for kind in ("tri", "turn"):
            a0 = float(pred.eval_ternary(kind, vocab, T(p[0]), T(p[1]), T(p[2])).data)
            a1 = float(pred.eval_ternary(kind, vocab, T(p[0] + t), T(p[1] + t),
                                         T(p[2] + t)).data)
            assert abs(a0 - a1) <= TOL, kind
        for kind in ("orient", "eqdist"):
            a0 = float(pred.eval_quaternary(kind, vocab, *(T(q) for q in p)).data)
            a1 = float(pred.eval_quaternary(kind, vocab, *(T(q + t) for q in p)).data)
            assert abs(a0 - a1) <= TOL, kind


def test_property_rotation_invariance(vocab):
    # only the angle-based families are rotation invariant; above/left are not
    rng = np.random.default_rng(29)
    for _ in range(N_PROP):
        p = _random_config(rng)
        theta = rng.uniform(0.0, 2.0 * np.pi)
        q = rot(p, theta)
        for kind in ("tri", "turn"):
            a0 = float(pred.eval_ternary(kind, vocab, T(p[0]), T(p[1]), T(p[2])).data)
            a1 = float(pred.eval_ternary(kind, vocab, T(q[0]), T(q[1]), T(q[2])).data)
            assert abs(a0 - a1) <= TOL, kind
        a0 = float(pred.eval_quaternary("eqdist", vocab, *(T(x) for x in p)).data)
        a1 = float(pred.eval_quaternary("eqdist", vocab, *(T(x) for x in q)).data)
        assert abs(a0 - a1) <= TOL
        # orient depends only on the angle between the two edges
        a0 = float(pred.eval_quaternary("orient", vocab, *(T(x) for x in p)).data)
        a1 = float(pred.eval_quaternary("orient", vocab, *(T(x) for x in q)).data)
        assert abs(a0 - a1) <= TOL


def test_above_not_rotation_invariant(vocab):
    a0 = float(pred.eval_binary("above", vocab, T([0.0, 0.0]), T([0.0, 0.8])).data)
    p = rot(np.array([[0.0, 0.0], [0.0, 0.8]]), np.pi)
    a1 = float(pred.eval_binary("above", vocab, T(p[0]), T(p[1])).data)
    assert abs(a0 - a1) > 0.1


def test_near_coincident_degenerate_edges_stay_finite(vocab):
    # zero-length edges hit the norm floor instead of dividing by zero
    out = pred.eval_quaternary("eqdist", vocab, T([0.1, 0.1]), T([0.1, 0.1]),
                               T([0.0, 0.0]), T([0.5, 0.5]))
    assert np.isfinite(float(out.data))
    out = pred.eval_ternary("tri", vocab, T([0.2, 0.2]), T([0.2, 0.2]), T([0.5, 0.1]))
    assert np.isfinite(float(out.data))
