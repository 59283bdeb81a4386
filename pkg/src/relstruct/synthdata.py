"""Multi-domain synthetic dataset: classes are part layouts, domains are styles.

A class is a fixed arrangement of 3-5 glyphs (circle / triangle / square /
cross) with canonical centers at least 0.3 apart in normalized [-1, 1]
coordinates.  Rendering style (fill, outline, noise texture, inverted
palette with clutter) is controlled entirely by the domain and never
moves the parts, so layout is the domain-invariant signal.

All randomness flows through counter-based Philox streams keyed by
(seed, stream id), so generation is reproducible sample-by-sample
regardless of ordering.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

GLYPHS = ("circle", "triangle", "square", "cross")
DOMAINS = ("solid", "outline", "textured", "inverted")
PALETTE = [(204, 52, 52), (52, 102, 204), (52, 168, 82), (240, 166, 30),
           (142, 68, 173), (22, 160, 133), (231, 84, 128), (120, 120, 40)]
MIN_PART_DIST = 0.3
SUPERSAMPLE = 4

SPEC_STREAM = 0
SPLIT_STREAM = 1
SAMPLE_STREAM_BASE = 1000


def stream_rng(seed, stream):
    """Philox generator keyed by (seed, stream): independent, reproducible."""
    return np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF,
                                                     stream & 0xFFFFFFFFFFFFFFFF]))


@dataclass
class ClassSpec:
    class_id: int
    parts: list          # [(glyph, cx, cy, radius), ...] in normalized coords
    sigma_jit: float

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(d["class_id"], [tuple(p) for p in d["parts"]], d["sigma_jit"])


@dataclass
class DatasetManifest:
    classes: list        # list[ClassSpec]
    domains: list
    per_class: int
    image_size: int
    seed: int
    val_fraction: float = 0.2
    global_jitter: float = 0.15    # whole-layout translation; relative structure unchanged

    def to_dict(self):
        return {"classes": [c.to_dict() for c in self.classes],
                "domains": list(self.domains), "per_class": self.per_class,
                "image_size": self.image_size, "seed": self.seed,
                "val_fraction": self.val_fraction, "global_jitter": self.global_jitter}

    @classmethod
    def from_dict(cls, d):
        return cls([ClassSpec.from_dict(c) for c in d["classes"]], d["domains"],
                   d["per_class"], d["image_size"], d["seed"], d.get("val_fraction", 0.2),
                   d.get("global_jitter", 0.15))


def make_class_specs(n_classes, rng, sigma_jit=0.05):
    """Random layouts: 3-5 parts, rejection-sampled to keep centers apart."""
    specs = []
    for cid in range(n_classes):
        n_parts = int(rng.integers(3, 6))
        centers = []
        while len(centers) < n_parts:
            cand = rng.uniform(-0.72, 0.72, size=2)
            if all(np.hypot(*(cand - c)) >= MIN_PART_DIST for c in centers):
                centers.append(cand)
        parts = []
        for c in centers:
            glyph = GLYPHS[int(rng.integers(len(GLYPHS)))]
            radius = float(rng.uniform(0.12, 0.2))
            parts.append((glyph, float(c[0]), float(c[1]), radius))
        specs.append(ClassSpec(cid, parts, sigma_jit))
    return specs


def make_manifest(n_classes=8, domains=DOMAINS, per_class=100, image_size=64, seed=0,
                  sigma_jit=0.05, global_jitter=0.15):
    specs = make_class_specs(n_classes, stream_rng(seed, SPEC_STREAM), sigma_jit)
    return DatasetManifest(specs, list(domains), per_class, image_size, seed,
                           global_jitter=global_jitter)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def _to_px(x, size):
    return (x + 1.0) / 2.0 * (size - 1)


def _draw_glyph(draw, glyph, cx, cy, r, fill, outline, width):
    if glyph == "circle":
        draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=fill, outline=outline, width=width)
    elif glyph == "square":
        draw.rectangle([cx - r, cy - r, cx + r, cy + r], fill=fill, outline=outline, width=width)
    elif glyph == "triangle":
        pts = [(cx, cy - r), (cx - r, cy + r), (cx + r, cy + r)]
        draw.polygon(pts, fill=fill, outline=outline)
        if outline and width > 1:
            draw.line(pts + [pts[0]], fill=outline, width=width)
    elif glyph == "cross":
        t = max(2, int(r * 0.45))
        color = fill if fill is not None else outline
        draw.rectangle([cx - r, cy - t, cx + r, cy + t], fill=color)
        draw.rectangle([cx - t, cy - r, cx + t, cy + r], fill=color)
    else:
        raise ValueError(f"unknown glyph: {glyph}")


def render_sample(spec: ClassSpec, domain: str, rng, image_size=64, global_jitter=0.15):
    """One sample: 8-bit RGB image plus the jittered ground-truth centers.

    The whole layout is translated by a per-sample uniform offset (clamped
    so every part stays in frame), which leaves relative structure intact
    while decorrelating absolute positions.  Per-part jitter is Gaussian
    (sigma_jit) and clipped to the frame.  The domain picks fill style,
    palette, and background noise but never the layout.
    """
    if domain not in DOMAINS:
        raise ValueError(f"unknown domain: {domain}")
    S = image_size * SUPERSAMPLE
    if domain == "inverted":
        bg = (110, 110, 118)
    elif domain == "outline":
        bg = (255, 255, 255)
    else:
        bg = (232, 232, 228)
    img = Image.new("RGB", (S, S), bg)
    draw = ImageDraw.Draw(img)

    # clamp the global offset so no glyph would leave the frame
    lims = np.array([1.0 - r - 0.02 for _, _, _, r in spec.parts])
    cs = np.array([(cx, cy) for _, cx, cy, _ in spec.parts])
    g = rng.uniform(-global_jitter, global_jitter, size=2)
    lo = np.max(-lims[:, None] - cs, axis=0)
    hi = np.min(lims[:, None] - cs, axis=0)
    g = np.clip(g, np.minimum(lo, 0.0), np.maximum(hi, 0.0))

    centers = []
    for p_idx, (glyph, cx, cy, radius) in enumerate(spec.parts):
        jit = rng.normal(0.0, spec.sigma_jit, size=2)
        lim = 1.0 - radius - 0.02
        jx = float(np.clip(cx + g[0] + jit[0], -lim, lim))
        jy = float(np.clip(cy + g[1] + jit[1], -lim, lim))
        centers.append([jx, jy])
        px, py = _to_px(jx, S), _to_px(jy, S)
        pr = radius / 2.0 * (S - 1)
        color = PALETTE[p_idx % len(PALETTE)]
        if domain == "solid":
            _draw_glyph(draw, glyph, px, py, pr, fill=color, outline=None, width=1)
        elif domain == "outline":
            _draw_glyph(draw, glyph, px, py, pr, fill=None, outline=(40, 40, 40),
                        width=SUPERSAMPLE * 2)
        elif domain == "textured":
            _draw_glyph(draw, glyph, px, py, pr, fill=color, outline=None, width=1)
        elif domain == "inverted":
            # same palette on a dark ground: brightness polarity flips, hue does not
            _draw_glyph(draw, glyph, px, py, pr, fill=color, outline=None, width=1)

    img = img.resize((image_size, image_size), Image.Resampling.BOX)
    arr = np.asarray(img, dtype=np.int16)

    if domain == "textured":
        # speckle noise inside the glyphs only (where pixels differ from bg)
        mask = np.any(np.abs(arr - np.array(bg)) > 12, axis=-1)
        noise = rng.integers(-90, 90, size=mask.sum())[:, None]
        arr[mask] = np.clip(arr[mask] + noise, 0, 255)
    elif domain == "inverted":
        # background clutter: small random bright dots
        n_dots = int(rng.integers(30, 60))
        ys = rng.integers(0, image_size, size=n_dots)
        xs = rng.integers(0, image_size, size=n_dots)
        vals = rng.integers(120, 255, size=(n_dots, 3))
        arr[ys, xs] = vals
    elif domain == "solid":
        grain = rng.integers(-6, 7, size=arr.shape)
        arr = np.clip(arr + grain, 0, 255)

    return arr.astype(np.uint8), centers


# ---------------------------------------------------------------------------
# dataset directory
# ---------------------------------------------------------------------------

def sample_stream(manifest, domain_idx, class_id, index):
    n_cells = len(manifest.classes) * manifest.per_class
    return SAMPLE_STREAM_BASE + (domain_idx * n_cells + class_id * manifest.per_class + index)


def generate(manifest: DatasetManifest, out_dir):
    """Write PNGs as {domain}/{class}/{index}.png plus manifest.json / labels.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labels = []
    for d_idx, domain in enumerate(manifest.domains):
        for spec in manifest.classes:
            cell_dir = out / domain / str(spec.class_id)
            cell_dir.mkdir(parents=True, exist_ok=True)
            for i in range(manifest.per_class):
                rng = stream_rng(manifest.seed, sample_stream(manifest, d_idx, spec.class_id, i))
                arr, centers = render_sample(spec, domain, rng, manifest.image_size,
                                             manifest.global_jitter)
                rel = f"{domain}/{spec.class_id}/{i}.png"
                Image.fromarray(arr).save(cell_dir / f"{i}.png")
                labels.append({"path": rel, "class": spec.class_id, "domain": domain,
                               "centers": centers})
    (out / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=1, sort_keys=True))
    (out / "labels.json").write_text(json.dumps(labels, indent=1, sort_keys=True))
    return out


def load_manifest(data_dir):
    return DatasetManifest.from_dict(json.loads((Path(data_dir) / "manifest.json").read_text()))


def load_labels(data_dir):
    return json.loads((Path(data_dir) / "labels.json").read_text())


def load_split(data_dir, target_domain, val_fraction=0.2, seed=None):
    """Leave-one-domain-out split.

    Test: every sample of the target domain.  The remaining domains are
    split per (class, domain) cell into train/val with the given fraction
    held out, deterministic in the manifest seed (or ``seed`` if given).
    Split assignment depends only on indices and the seed, never on pixels.
    """
    manifest = load_manifest(data_dir)
    if target_domain not in manifest.domains:
        raise ValueError(f"unknown target domain: {target_domain}")
    labels = load_labels(data_dir)
    if seed is None:
        seed = manifest.seed
    rng = stream_rng(seed, SPLIT_STREAM)
    test = [r for r in labels if r["domain"] == target_domain]
    train, val = [], []
    for domain in manifest.domains:
        if domain == target_domain:
            continue
        for spec in manifest.classes:
            cell = [r for r in labels if r["domain"] == domain and r["class"] == spec.class_id]
            order = rng.permutation(len(cell))
            n_val = int(round(val_fraction * len(cell)))
            val.extend(cell[i] for i in order[:n_val])
            train.extend(cell[i] for i in order[n_val:])
    return train, val, test


def load_images(data_dir, records, dtype=np.float32):
    """Decode records into (N, 3, S, S) arrays in [0, 1] plus label vector."""
    data_dir = Path(data_dir)
    imgs, ys = [], []
    for r in records:
        arr = np.asarray(Image.open(data_dir / r["path"]), dtype=dtype) / 255.0
        imgs.append(arr.transpose(2, 0, 1))
        ys.append(r["class"])
    return np.stack(imgs), np.asarray(ys, dtype=np.int64)
