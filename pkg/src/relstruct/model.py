"""Full pipeline: backbone -> bottleneck -> relation catalog -> class scores.

The model owns a flat parameter registry (name -> leaf tensor) so the
optimizer, checkpointing, and gradient checks all see one namespace.
With relation families disabled (``families == 'none'``) the structural
layer is replaced by a plain linear classifier over the flattened
primitive descriptors; this is the no-relations ablation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import backbone as bb
from . import bottleneck as bn
from . import catalog as cat
from . import scoring
from .autodiff import Tensor
from .predicates import PredicateVocabulary

FAMILY_SETS = {
    "all": ("presence", "binary", "ternary", "quaternary"),
    "presence": ("presence",),
    "binary": ("presence", "binary"),
    "ternary": ("presence", "binary", "ternary"),
    "quaternary": ("presence", "binary", "quaternary"),
    "none": (),
}


@dataclass
class ModelConfig:
    k: int = 16
    n_classes: int = 8
    image_size: int = 64
    widths: tuple = bb.DEFAULT_WIDTHS
    families: str = "all"
    n_tri: int = 3
    n_turn: int = 1
    n_orient: int = 4

    def family_tuple(self):
        if self.families not in FAMILY_SETS:
            raise ValueError(f"unknown predicate-family switch: {self.families}")
        return FAMILY_SETS[self.families]

    def to_dict(self):
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["widths"] = tuple(d["widths"])
        return cls(**d)


class Model:
    def __init__(self, config: ModelConfig, rng, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        self.no_relations = config.families == "none"
        self.params = {}
        self.params.update(bb.make_backbone_params(config.widths, rng=rng, dtype=dtype))
        self.params.update(bn.make_projection_params(config.widths[-1], config.k, rng, dtype=dtype))
        self.vocab = PredicateVocabulary(config.n_tri, config.n_turn, config.n_orient, dtype=dtype)
        for name, t in self.vocab.params.items():
            self.params[f"vocab.{name}"] = t
        if self.no_relations:
            self.catalog = None
            w = rng.normal(0.0, 0.01, size=(config.n_classes, config.k * 5))
            self.params["lin_w"] = Tensor(w.astype(dtype), requires_grad=True)
            self.params["lin_b"] = Tensor(np.zeros(config.n_classes, dtype=dtype),
                                          requires_grad=True)
        else:
            self.catalog = cat.build_catalog(config.k, config.n_tri, config.n_turn,
                                             config.n_orient, config.family_tuple())
            self.params.update(scoring.make_structure_params(
                config.n_classes, self.catalog.M, rng, dtype=dtype))

    # -- parameter groups (used by the gradient-check harness) -------------

    def param_groups(self):
        groups = {"backbone": {}, "bottleneck": {}, "vocabulary": {}, "structure": {}}
        for name, t in self.params.items():
            if name.startswith("conv"):
                groups["backbone"][name] = t
            elif name.startswith(("cb_", "t_raw")):
                groups["bottleneck"][name] = t
            elif name.startswith("vocab."):
                groups["vocabulary"][name] = t
            else:
                groups["structure"][name] = t
        return groups

    def set_catalog(self, new_catalog):
        """Swap in a restricted catalog (after compaction); widths must match lambda."""
        if new_catalog.M != self.params["lambda"].shape[1]:
            raise ValueError("set_catalog: catalog size does not match lambda width")
        self.catalog = new_catalog

    def forward(self, images, style_mix_fn=None):
        """Images (B, 3, S, S) float in [0, 1] -> dict of graph tensors."""
        images = np.asarray(images, dtype=self.dtype)
        if images.ndim != 4 or images.shape[2] != self.config.image_size:
            raise ValueError(f"forward: expected (B, 3, {self.config.image_size}, "
                             f"{self.config.image_size}) images, got {images.shape}")
        F = bb.forward(images, self.params, self.config.widths, style_mix_fn)
        H = bn.project_features(F, self.params)
        T = bn.temperature(self.params)
        Hn, c, sig, delta, boxes = bn.describe(H, T)
        out = {"features": F, "heatmaps": H, "normalized": Hn,
               "centers": c, "sigma": sig, "delta": delta, "boxes": boxes}
        if self.no_relations:
            B = images.shape[0]
            desc = ad.concat([ad.reshape(c, (B, self.config.k * 2)),
                              sig,
                              ad.reshape(delta, (B, self.config.k * 2))], axis=1)
            out["logits"] = desc @ ad.transpose(self.params["lin_w"], (1, 0)) + self.params["lin_b"]
        else:
            a = cat.evaluate_activations(self.catalog, self.vocab, c, sig, boxes)
            W = scoring.class_weights(self.params["lambda"])
            s, logits = scoring.class_scores(W, a, scoring.omega(self.params))
            out.update({"activations": a, "weights": W, "scores": s, "logits": logits})
        return out

    def loss(self, images, labels, cfg: scoring.LossConfig, style_mix_fn=None):
        out = self.forward(images, style_mix_fn)
        if self.no_relations:
            loss = scoring.cross_entropy(out["logits"], labels)
            if cfg.lambda_bn:
                reg = bn.loss_diversity(out["normalized"])
                if cfg.lambda_conc:
                    reg = reg + cfg.lambda_conc * bn.loss_concentration(out["normalized"])
                loss = loss + cfg.lambda_bn * reg
            return loss, out
        return scoring.total_loss(out["logits"], labels, self.params["lambda"],
                                  out["normalized"], self.vocab, cfg), out

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()

    def astype(self, dtype):
        """Cast all parameters in place (float32 <-> float64 verification mode)."""
        self.dtype = dtype
        for t in self.params.values():
            t.data = t.data.astype(dtype)
        self.vocab.dtype = dtype
        return self
