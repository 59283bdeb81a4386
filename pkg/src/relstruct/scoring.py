"""Class-specific structural compositions and the training objective.

Each class holds a row of log-weights over the M enumerated relation
applications; sparsemax turns the row into a sparse convex combination,
and the class score is its dot product with the activation vector.  Raw
scores lie in [0, 1], which leaves tiny logit gaps for cross-entropy, so
a single learnable positive scale multiplies all scores before the
softmax (argmax over classes is unchanged).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .mathcore import softplus_inverse

OMEGA_INIT = 10.0
LAMBDA_INIT_STD = 0.01


@dataclass
class LossConfig:
    lambda_sparse: float = 1e-4
    lambda_bn: float = 0.1
    lambda_conc: float = 0.1
    lambda_ang: float = 1e-3

    def __post_init__(self):
        if min(self.lambda_sparse, self.lambda_bn, self.lambda_conc, self.lambda_ang) < 0:
            raise ValueError("LossConfig: regularizer weights must be nonnegative")


def make_structure_params(n_classes, M, rng, dtype=np.float32):
    lam = rng.normal(0.0, LAMBDA_INIT_STD, size=(n_classes, M))
    return {
        "lambda": Tensor(lam.astype(dtype), requires_grad=True),
        "omega_raw": Tensor(np.asarray(softplus_inverse(OMEGA_INIT), dtype=dtype),
                            requires_grad=True),
    }


def class_weights(lam):
    """Row-wise sparsemax of the log-weight matrix; exact zeros preserved."""
    return ad.sparsemax_rows(lam)


def class_scores(W, a, omega):
    """s_c = w^c . a  (convex combination of [0,1] activations), logits = omega * s."""
    if W.shape[1] != a.shape[-1]:
        raise ValueError(f"class_scores: weight width {W.shape[1]} != activation length {a.shape[-1]}")
    s = a @ ad.transpose(W, (1, 0))
    return s, s * omega


def omega(params):
    return ad.softplus(params["omega_raw"])


def cross_entropy(logits, labels):
    """Mean -log softmax(logits)[label] over the batch."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= logits.shape[-1]:
        raise ValueError("cross_entropy: label out of range")
    logp = ad.log_softmax_last(logits)
    return -ad.mean(ad.pick_rows(logp, labels))


def sparsity_penalty(lam):
    """Mean absolute value of the log-weight matrix."""
    return ad.mean(ad.absolute(lam))


def total_loss(logits, labels, lam, Hn, vocab, cfg: LossConfig):
    """Cross-entropy plus the three regularizer groups.

    loss = CE + ls * mean|lambda| + lb * (L_div + lc * L_conc) + la * L_ang
    with (ls, lb, lc, la) from ``cfg``.
    """
    from . import bottleneck as bn
    from . import predicates as pred

    loss = cross_entropy(logits, labels)
    if cfg.lambda_sparse:
        loss = loss + cfg.lambda_sparse * sparsity_penalty(lam)
    if cfg.lambda_bn:
        reg = bn.loss_diversity(Hn)
        if cfg.lambda_conc:
            reg = reg + cfg.lambda_conc * bn.loss_concentration(Hn)
        loss = loss + cfg.lambda_bn * reg
    if cfg.lambda_ang:
        loss = loss + cfg.lambda_ang * pred.loss_angle_diversity(vocab)
    return loss
