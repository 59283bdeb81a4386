"""Post-training structural pruning.

Sparsemax drives most class-relation weights to exact zero, so after
training many relation applications carry zero weight in every class.
Dropping them (threshold 0) slices the activation vector and the
log-weight matrix without changing any logit; a positive threshold
additionally drops low-weight columns, trading exactness for size.
Pruned rows are deliberately not renormalized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import scoring
from .model import Model


@dataclass
class CompactionPlan:
    tau: float
    active: list                       # sorted surviving flat indices
    index_map: dict                    # old index -> new index
    source_fingerprint: str

    @property
    def n_active(self):
        return len(self.active)


@dataclass
class CompactionReport:
    m_before: int
    m_after: int
    params_before: int
    params_after: int
    reduction: float
    top1_agreement: float = None
    max_logit_deviation: float = None

    def to_dict(self):
        return {"m_before": self.m_before, "m_after": self.m_after,
                "structural_params_before": self.params_before,
                "structural_params_after": self.params_after,
                "reduction": self.reduction,
                "top1_agreement": self.top1_agreement,
                "max_logit_deviation": self.max_logit_deviation}


def active_set(W, tau, source_fingerprint=""):
    """Columns whose maximum class weight exceeds ``tau`` (tau=0: any nonzero)."""
    if tau < 0:
        raise ValueError("active_set: tau must be >= 0")
    W = np.asarray(W)
    col_max = W.max(axis=0)
    active = sorted(int(m) for m in np.nonzero(col_max > tau)[0])
    return CompactionPlan(float(tau), active, {m: i for i, m in enumerate(active)},
                          source_fingerprint)


def plan_for_model(model: Model, tau=0.0):
    W = scoring.class_weights(model.params["lambda"]).data
    return active_set(W, tau, model.catalog.fingerprint())


def structural_param_count(model: Model):
    """Parameters tied to the enumeration size: the class-relation matrix."""
    return int(model.params["lambda"].size)


def compact(model: Model, plan: CompactionPlan):
    """Restrict the catalog and slice lambda columns to the plan's active set.

    The plan must have been built from this model's current weights; the
    source fingerprint guards against mixing plans across catalogs.
    """
    if plan.source_fingerprint and plan.source_fingerprint != model.catalog.fingerprint():
        raise ValueError("compact: plan fingerprint does not match model catalog")
    new_catalog = model.catalog.restrict(plan.active)
    out = Model(model.config, rng=np.random.default_rng(0), dtype=model.dtype)
    for name, t in model.params.items():
        if name == "lambda":
            continue
        out.params[name].data = t.data.copy()
    out.params["lambda"].data = model.params["lambda"].data[:, plan.active].copy()
    out.set_catalog(new_catalog)
    return out


def verify_equivalence(original: Model, compacted: Model, images, batch=64):
    """Compare logits of both models over a sample; reports agreement and drift."""
    m_before = original.catalog.M
    m_after = compacted.catalog.M
    p_before = structural_param_count(original)
    p_after = structural_param_count(compacted)
    max_dev = 0.0
    agree = 0
    total = 0
    for lo in range(0, len(images), batch):
        xb = images[lo:lo + batch]
        la = original.forward(xb)["logits"].data
        lb = compacted.forward(xb)["logits"].data
        max_dev = max(max_dev, float(np.max(np.abs(la - lb))))
        agree += int(np.sum(np.argmax(la, axis=-1) == np.argmax(lb, axis=-1)))
        total += len(xb)
    return CompactionReport(m_before, m_after, p_before, p_after,
                            1.0 - p_after / p_before if p_before else 0.0,
                            agree / total if total else None, max_dev)
