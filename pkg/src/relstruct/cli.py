"""Command-line entry point.

Subcommands: gen-data, train, eval, lodo, compact, inspect, gradcheck.
Config files are JSON with keys mirroring TrainConfig; command-line flags
win on conflict.  Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import CHECKPOINT_FORMAT_VERSION, CATALOG_CANONICAL_VERSION, __version__
from . import compaction, synthdata, trainer, verify


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _add_shared(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--deterministic", action="store_true", default=True)
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--float64", action="store_true")


def build_parser():
    parser = _Parser(prog="relstruct",
                     description="structural classification over learned visual primitives")
    parser.add_argument("--version", action="version",
                        version=(f"relstruct {__version__} "
                                 f"(checkpoint format v{CHECKPOINT_FORMAT_VERSION}, "
                                 f"catalog canonicalization v{CATALOG_CANONICAL_VERSION})"))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic multi-domain dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--domains", type=str, default=",".join(synthdata.DOMAINS))
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--sigma-jit", type=float, default=0.05)
    _add_shared(p)

    p = sub.add_parser("train", help="train on all domains except the target")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--target", type=str, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--metrics", type=Path, default=None,
                   help="newline-delimited JSON metrics (one object per epoch)")
    _add_shared(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a target domain")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--target", type=str, required=True)
    p.add_argument("--out", type=Path, default=None)
    _add_shared(p)

    p = sub.add_parser("lodo", help="leave-one-domain-out over all domains")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None)
    _add_shared(p)

    p = sub.add_parser("compact", help="prune zero-weight relation applications")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--report", type=Path, default=None)
    p.add_argument("--data", type=Path, default=None,
                   help="dataset for the equivalence check (optional)")
    p.add_argument("--samples", type=int, default=100)
    _add_shared(p)

    p = sub.add_parser("inspect", help="heatmap overlays and top relations for one image")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--top", type=int, default=10)
    _add_shared(p)

    p = sub.add_parser("gradcheck", help="finite-difference verification of all gradients")
    p.add_argument("--models", type=int, default=5)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--out", type=Path, default=None)
    _add_shared(p)
    return parser


def _train_config(args):
    cfg_dict = {}
    if getattr(args, "config", None):
        cfg_dict = json.loads(Path(args.config).read_text())
    cfg = trainer.TrainConfig.from_dict(cfg_dict) if cfg_dict else trainer.TrainConfig()
    if "seed" not in cfg_dict:
        cfg.seed = args.seed
    return cfg


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------

def cmd_gen_data(args):
    manifest = synthdata.make_manifest(
        n_classes=args.classes, domains=args.domains.split(","),
        per_class=args.per_class, image_size=args.image_size,
        seed=args.seed, sigma_jit=args.sigma_jit)
    synthdata.generate(manifest, args.out)
    print(f"wrote {len(manifest.classes) * len(manifest.domains) * manifest.per_class} "
          f"samples to {args.out}")
    return 0


def cmd_train(args):
    cfg = _train_config(args)
    lines = []
    model, metrics = trainer.train(cfg, args.data, args.target,
                                   log=lambda rec: lines.append(rec))
    trainer.save_checkpoint(args.out, model, cfg, metrics)
    if args.metrics:
        with open(args.metrics, "w") as fh:
            for rec in lines:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.write(json.dumps({"summary": metrics.to_dict()}, sort_keys=True) + "\n")
    print(f"saved {args.out} (target={args.target}, "
          f"test_acc={metrics.test_accuracy})")
    return 0


def cmd_eval(args):
    model, header = trainer.load_checkpoint(args.ckpt)
    if args.float64:
        model.astype(np.float64)
    _, _, test = synthdata.load_split(args.data, args.target)
    x, y = synthdata.load_images(args.data, test, dtype=model.dtype)
    rec = trainer.evaluate(model, x, y)
    out = rec.to_dict()
    print(json.dumps(out, sort_keys=True))
    if args.out:
        Path(args.out).write_text(json.dumps(out, sort_keys=True, indent=1))
    return 0


def cmd_lodo(args):
    cfg = _train_config(args)
    result = trainer.lodo(cfg, args.data, log=lambda rec: print(json.dumps(rec, sort_keys=True)))
    print(json.dumps(result, sort_keys=True))
    if args.out:
        Path(args.out).write_text(json.dumps(result, sort_keys=True, indent=1))
    return 0


def cmd_compact(args):
    model, header = trainer.load_checkpoint(args.ckpt)
    plan = compaction.plan_for_model(model, args.tau)
    small = compaction.compact(model, plan)
    trainer.save_checkpoint(args.out, small,
                            trainer.TrainConfig.from_dict(header["train_config"])
                            if header.get("train_config") else None)
    if args.data:
        labels = synthdata.load_labels(args.data)[:args.samples]
        x, _ = synthdata.load_images(args.data, labels)
    else:
        rng = synthdata.stream_rng(args.seed, 3)
        size = model.config.image_size
        x = rng.random((args.samples, 3, size, size), dtype=np.float32)
    if args.float64:
        model.astype(np.float64)
        small.astype(np.float64)
    report = compaction.verify_equivalence(model, small, x)
    print(json.dumps(report.to_dict(), sort_keys=True))
    if args.report:
        Path(args.report).write_text(json.dumps(report.to_dict(), sort_keys=True, indent=1))
    return 0


def cmd_inspect(args):
    model, header = trainer.load_checkpoint(args.ckpt)
    img = Image.open(args.image).convert("RGB")
    size = model.config.image_size
    if img.size != (size, size):
        raise ValueError(f"inspect: image must be {size}x{size}, got {img.size}")
    x = (np.asarray(img, dtype=np.float32) / 255.0).transpose(2, 0, 1)[None]
    out = model.forward(x)
    args.out.mkdir(parents=True, exist_ok=True)

    base = np.asarray(img, dtype=np.float32)
    Hn = out["normalized"].data[0]
    for k in range(model.config.k):
        hm = Hn[k] / max(Hn[k].max(), 1e-12)
        # nearest-neighbour upsampling: no sub-cell precision is implied
        up = np.kron(hm, np.ones((size // hm.shape[0], size // hm.shape[1])))
        overlay = base * 0.4
        overlay[..., 0] += 0.6 * 255 * up
        Image.fromarray(np.clip(overlay, 0, 255).astype(np.uint8)).save(
            args.out / f"primitive_{k}.png")

    pred = int(np.argmax(out["logits"].data[0]))
    report = {"predicted_class": pred, "entries": []}
    if not model.no_relations:
        w = out["weights"].data[pred]
        a = out["activations"].data[0]
        top = np.argsort(-w, kind="stable")[:args.top]
        for m in top:
            if w[m] <= 0:
                break
            fam, inst, tup = model.catalog.tuple_of(int(m))
            report["entries"].append({"weight": float(w[m]), "family": fam,
                                      "instance": int(inst), "primitives": list(tup),
                                      "activation": float(a[m])})
    (args.out / "relations.json").write_text(json.dumps(report, sort_keys=True, indent=1))
    print(json.dumps({"predicted_class": pred, "overlays": model.config.k,
                      "report": str(args.out / 'relations.json')}))
    return 0


def cmd_gradcheck(args):
    worst, reports = verify.gradcheck(args.models, h=args.step, seed=args.seed)
    payload = {"max_rel_err": worst, "models": [
        {g: {"max_rel_err": r.max_rel_err, "worst_param": r.worst_param}
         for g, r in rep.items()} for rep in reports]}
    print(json.dumps(payload, sort_keys=True, indent=1))
    if args.out:
        Path(args.out).write_text(json.dumps(payload, sort_keys=True, indent=1))
    return 0 if worst <= 1e-4 else 2


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "lodo": cmd_lodo,
    "compact": cmd_compact,
    "inspect": cmd_inspect,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError, FloatingPointError, KeyError) as e:
        sys.stderr.write(f"error: {e}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
