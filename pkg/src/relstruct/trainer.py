"""End-to-end optimization, leave-one-domain-out harness, persistence.

The checkpoint container is deliberately language-neutral: an 8-byte
magic, a little-endian u64 header length, a UTF-8 JSON header describing
tensor names/shapes/offsets, then a concatenated little-endian float32
payload.  Loading a checkpoint and re-running the forward pass is
bit-exact with respect to the saved model.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import scoring
from .backbone import style_mix, STYLE_MIX_PROB, STYLE_MIX_BETA
from .model import Model, ModelConfig
from .synthdata import load_split, load_images, load_manifest, stream_rng

CHECKPOINT_MAGIC = b"PARSEv01"
FORMAT_VERSION = 1
STYLE_MIX_HOOK = "after_block_1"

# Philox stream ids (data generation uses 0..999; training streams live higher)
INIT_STREAM = 2_000_000
ORDER_STREAM = 2_100_000
MIX_STREAM = 2_200_000


@dataclass
class TrainConfig:
    k: int = 16
    batch_size: int = 32
    lr: float = 1e-3
    epochs: int = 10
    seed: int = 0
    families: str = "all"
    loss: scoring.LossConfig = field(default_factory=scoring.LossConfig)
    style_mix: bool = True
    deterministic: bool = True
    val_fraction: float = 0.2
    widths: tuple = (32, 64, 64)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("TrainConfig: lr must be >= 0")
        if self.style_mix and self.batch_size < 2:
            raise ValueError("TrainConfig: style mixing needs batch_size >= 2")

    def to_dict(self):
        d = asdict(self)
        d["loss"] = asdict(self.loss)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["loss"] = scoring.LossConfig(**d.get("loss", {}))
        d["widths"] = tuple(d.get("widths", (32, 64, 64)))
        return cls(**d)


def benchmark_config(families="all", seed=0):
    """Reference configuration for the 8-class / 4-domain / K=8 toy benchmark.

    The heatmap regularizers are run well above their conservative defaults:
    strongly part-like primitives are what make the relational compositions
    transfer across domains.
    """
    return TrainConfig(k=8, epochs=6, seed=seed, families=families,
                       loss=scoring.LossConfig(lambda_sparse=1e-4, lambda_bn=1.0,
                                               lambda_conc=2.0, lambda_ang=1e-3))


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            if self.lr:
                p.data -= (self.lr * (self.m[k] / b1t)
                           / (np.sqrt(self.v[k] / b2t) + self.eps)).astype(p.data.dtype)


@dataclass
class MetricsRecord:
    epochs: list
    test_accuracy: float = None
    per_class_accuracy: list = None
    support_mean: float = None
    support_max: int = None

    def to_dict(self):
        return asdict(self)


def _accuracy(model, images, labels, batch=64):
    preds = []
    for lo in range(0, len(images), batch):
        out = model.forward(images[lo:lo + batch])
        preds.append(np.argmax(out["logits"].data, axis=-1))
    preds = np.concatenate(preds)
    return preds, float(np.mean(preds == labels))


def evaluate(model, images, labels):
    """Top-1 and per-class accuracy plus sparsemax support statistics."""
    preds, acc = _accuracy(model, images, labels)
    n_classes = model.config.n_classes
    per_class = [float(np.mean(preds[labels == c] == c)) if np.any(labels == c) else float("nan")
                 for c in range(n_classes)]
    rec = MetricsRecord(epochs=[], test_accuracy=acc, per_class_accuracy=per_class)
    if not model.no_relations:
        W = scoring.class_weights(model.params["lambda"]).data
        support = (W > 0).sum(axis=1)
        rec.support_mean = float(support.mean())
        rec.support_max = int(support.max())
    return rec


def train(cfg: TrainConfig, data_dir, target_domain, log=None):
    """Train on all domains except ``target_domain``; keep the best-val epoch.

    Returns (model, MetricsRecord).  Model selection is best validation
    top-1, ties resolved toward the earlier epoch.
    """
    manifest = load_manifest(data_dir)
    train_recs, val_recs, test_recs = load_split(data_dir, target_domain,
                                                 cfg.val_fraction, cfg.seed)
    if not train_recs or not val_recs:
        raise ValueError("train: empty train/val split")
    x_train, y_train = load_images(data_dir, train_recs)
    x_val, y_val = load_images(data_dir, val_recs)

    n_classes = len(manifest.classes)
    mcfg = ModelConfig(k=cfg.k, n_classes=n_classes, image_size=manifest.image_size,
                       widths=cfg.widths, families=cfg.families)
    model = Model(mcfg, rng=stream_rng(cfg.seed, INIT_STREAM))

    opt = Adam(model.params, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    best = {"acc": -1.0, "epoch": -1, "params": None}
    history = []
    n = len(x_train)
    for epoch in range(cfg.epochs):
        order = stream_rng(cfg.seed, ORDER_STREAM + epoch).permutation(n)
        mix_rng = stream_rng(cfg.seed, MIX_STREAM + epoch)
        total_loss, steps = 0.0, 0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            mix_fn = None
            if cfg.style_mix and len(idx) >= 2:
                coin = mix_rng.random()
                lam = float(mix_rng.beta(STYLE_MIX_BETA, STYLE_MIX_BETA))
                perm = mix_rng.permutation(len(idx))
                if coin < STYLE_MIX_PROB:
                    mix_fn = lambda F, lam=lam, perm=perm: style_mix(F, lam, perm)
            model.zero_grad()
            loss, _ = model.loss(xb, yb, cfg.loss, mix_fn)
            lval = float(loss.data)
            if not np.isfinite(lval):
                raise FloatingPointError(
                    f"train: non-finite loss at epoch {epoch} step {steps}")
            loss.backward()
            opt.step()
            total_loss += lval
            steps += 1
        _, val_acc = _accuracy(model, x_val, y_val)
        rec = {"epoch": epoch, "train_loss": total_loss / max(steps, 1), "val_acc": val_acc}
        history.append(rec)
        if log:
            log(rec)
        # ties go to the later epoch: once val saturates, prefer the most-trained model
        if val_acc >= best["acc"]:
            best = {"acc": val_acc, "epoch": epoch,
                    "params": {k: p.data.copy() for k, p in model.params.items()}}
    if best["params"] is not None:
        for k, p in model.params.items():
            p.data = best["params"][k]

    metrics = MetricsRecord(epochs=history)
    if test_recs:
        x_test, y_test = load_images(data_dir, test_recs)
        test_metrics = evaluate(model, x_test, y_test)
        metrics.test_accuracy = test_metrics.test_accuracy
        metrics.per_class_accuracy = test_metrics.per_class_accuracy
        metrics.support_mean = test_metrics.support_mean
        metrics.support_max = test_metrics.support_max
    return model, metrics


def lodo(cfg: TrainConfig, data_dir, log=None):
    """Train/evaluate once per target domain; returns per-target rows plus mean."""
    manifest = load_manifest(data_dir)
    rows = []
    for domain in manifest.domains:
        _, metrics = train(cfg, data_dir, domain, log=log)
        rows.append({"target": domain, "test_acc": metrics.test_accuracy})
        if log:
            log(rows[-1])
    mean = float(np.mean([r["test_acc"] for r in rows]))
    return {"rows": rows, "mean": mean}


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

def save_checkpoint(path, model, train_cfg=None, metrics=None):
    names = sorted(model.params)
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "train_config": train_cfg.to_dict() if train_cfg else None,
        "metrics": metrics.to_dict() if metrics is not None else None,
        "style_mix_hook": STYLE_MIX_HOOK,
        "catalog": model.catalog.descriptor() if model.catalog is not None else None,
        "tensors": [],
    }
    offset = 0
    payloads = []
    for name in names:
        data = model.params[name].data.astype("<f4")
        header["tensors"].append({"name": name, "dtype": "f32",
                                  "shape": list(data.shape), "offset": offset})
        payloads.append(data.tobytes())
        offset += len(payloads[-1])
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for p in payloads:
            fh.write(p)


def load_checkpoint(path):
    """Rebuild a model from a checkpoint; validates magic, version, fingerprint."""
    from . import catalog as cat

    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"load_checkpoint: bad magic in {path}")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValueError(f"load_checkpoint: corrupt header at offset 16: {e}")
    if header["format_version"] != FORMAT_VERSION:
        raise ValueError(f"load_checkpoint: unsupported format version {header['format_version']}")
    mcfg = ModelConfig.from_dict(header["model_config"])
    model = Model(mcfg, rng=np.random.default_rng(0))
    cat_desc = header["catalog"]
    if cat_desc is not None and cat_desc.get("restricted"):
        full = cat.build_catalog(mcfg.k, mcfg.n_tri, mcfg.n_turn, mcfg.n_orient,
                                 mcfg.family_tuple())
        entries = [(f, inst, tuple(t)) for f, inst, t in cat_desc["entries"]]
        keep = [full.index_of(e) for e in entries]
        restricted = full.restrict(keep)
        lam = model.params["lambda"]
        lam.data = lam.data[:, :len(entries)].copy()
        model.set_catalog(restricted)
    payload_start = 16 + hlen
    for spec in header["tensors"]:
        name = spec["name"]
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = payload_start + spec["offset"]
        end = start + 4 * count
        if end > len(raw):
            raise ValueError(f"load_checkpoint: truncated payload for {name} at offset {start}")
        arr = np.frombuffer(raw[start:end], dtype="<f4").reshape(shape)
        if name not in model.params:
            raise ValueError(f"load_checkpoint: unexpected tensor {name}")
        model.params[name].data = arr.astype(np.float32).copy()
    if cat_desc is not None:
        rebuilt = model.catalog.fingerprint()
        if rebuilt != cat_desc["fingerprint"]:
            raise ValueError("load_checkpoint: catalog fingerprint mismatch "
                             f"({rebuilt} != {cat_desc['fingerprint']})")
    return model, header
