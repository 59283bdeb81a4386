"""Gradient integrity harness: full-model finite-difference verification.

Builds small random models in float64 and checks every parameter group's
analytic gradient against central differences.  Points too close to a
non-smooth region (relu/max/min kinks, sparsemax support boundaries,
clamps, arccos saturation) are excluded by construction: the forward pass
is instrumented with a kink monitor and inputs are resampled until all
margins exceed a safe multiple of the step size.
"""

from __future__ import annotations

import numpy as np

from .autodiff import KinkMonitor
from .mathcore import finite_diff_check
from .model import Model, ModelConfig
from .scoring import LossConfig
from .synthdata import stream_rng

TOY_CONFIG = dict(k=4, n_classes=2, image_size=16, widths=(4, 5))
MARGIN_FACTOR = 10.0
MAX_RESAMPLES = 50


def make_toy_model(seed, families="all", jitter=0.05):
    """Small random model + batch, resampled until clear of kinks."""
    cfg = ModelConfig(families=families, **TOY_CONFIG)
    model = Model(cfg, rng=stream_rng(seed, 0), dtype=np.float64)
    rng = stream_rng(seed, 1)
    # small random perturbation decorrelates parameters from their init symmetry
    for name, p in model.params.items():
        p.data = np.asarray(p.data + rng.normal(0.0, jitter, size=p.data.shape))
    images = rng.random((2, 3, cfg.image_size, cfg.image_size))
    labels = rng.integers(0, cfg.n_classes, size=2)
    return model, images, labels


def gradcheck_model(seed, h=1e-5, families="all", loss_cfg=None):
    """One toy model: returns {group_name: GradReport}.

    Resamples the model seed until the forward pass stays at least
    MARGIN_FACTOR * h away from every non-smooth point.
    """
    loss_cfg = loss_cfg or LossConfig()
    attempt = 0
    while True:
        model, images, labels = make_toy_model(seed + 7919 * attempt, families)
        with KinkMonitor() as mon:
            loss, _ = model.loss(images, labels, loss_cfg)
        if np.isfinite(float(loss.data)) and mon.min_margin > MARGIN_FACTOR * h:
            break
        attempt += 1
        if attempt > MAX_RESAMPLES:
            raise RuntimeError("gradcheck: could not find a kink-free sample point")

    def loss_fn():
        return model.loss(images, labels, loss_cfg)[0]

    reports = {}
    for group, params in model.param_groups().items():
        if not params:
            continue
        reports[group] = finite_diff_check(loss_fn, params, h=h, h_fallback=100 * h)
    return reports


def gradcheck(n_models=5, h=1e-5, seed=0, families="all"):
    """Gradient check across several random toy models.

    Returns (worst relative error, list of per-model report dicts).
    """
    all_reports = []
    worst = 0.0
    for i in range(n_models):
        reports = gradcheck_model(seed + 1000 * i, h=h, families=families)
        all_reports.append(reports)
        worst = max(worst, max(r.max_rel_err for r in reports.values()))
    return worst, all_reports
