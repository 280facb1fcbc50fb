"""Synthetic fine-grained benchmark with one planted discriminative patch.

Every image is class-independent clutter (smooth colour noise, solid
shapes and high-contrast speckle blobs) plus a single striped patch whose
orientation, and for more than four classes its colours, encode the class.
Outside the patch the classes are identically distributed.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import UsageError
from .raster import write_ppm

# dark/light stripe colours; later pairs are tinted variants of the first
PATCH_COLORS = [
    ((0.15, 0.15, 0.15), (0.85, 0.85, 0.85)),
    ((0.25, 0.1, 0.1), (0.95, 0.75, 0.75)),
    ((0.1, 0.1, 0.25), (0.75, 0.75, 0.95)),
]


@dataclass
class SynthConfig:
    classes: int = 2
    images_per_class: int = 200
    image_side: int = 128
    patch_side: int = 16
    seed: int = 0
    test_fraction: float = 0.5
    stripe_period: float = 4.0
    patch_contrast: float = 0.8
    shapes: int = 10
    speckles: int = 3
    noise: float = 0.08
    orientations: int = 0   # 0: min(classes, 4)


def class_signature(c: int, classes: int, orientations: int = 0) -> tuple[float, tuple]:
    """(stripe angle in degrees, colour pair) of class ``c``.

    Classes cycle through ``orientations`` evenly spaced angles first, then
    through tints, so classes sharing an angle differ only in colour.
    """
    n_orient = orientations or min(classes, 4)
    angle = 180.0 * (c % n_orient) / n_orient
    return angle, PATCH_COLORS[(c // n_orient) % len(PATCH_COLORS)]


def _background(rng, side: int, noise: float) -> np.ndarray:
    base = rng.uniform(0.35, 0.65, size=3)
    smooth = ndimage.gaussian_filter(rng.standard_normal((side, side, 3)), sigma=(6, 6, 0))
    smooth *= noise / (smooth.std() + 1e-12)
    fine = rng.standard_normal((side, side, 3)) * noise * 0.25
    return base + smooth + fine


def _draw_shapes(img: np.ndarray, rng, n: int) -> None:
    side = img.shape[0]
    yy, xx = np.mgrid[0:side, 0:side]
    for _ in range(n):
        w, h = rng.integers(6, 36, size=2)
        cx, cy = rng.uniform(0, side, size=2)
        color = rng.uniform(0.0, 1.0, size=3)
        if rng.random() < 0.5:
            mask = (np.abs(xx - cx) <= w / 2) & (np.abs(yy - cy) <= h / 2)
        else:
            mask = ((xx - cx) / (w / 2)) ** 2 + ((yy - cy) / (h / 2)) ** 2 <= 1.0
        img[mask] = color


def _draw_speckles(img: np.ndarray, rng, n: int) -> None:
    side = img.shape[0]
    for _ in range(n):
        s = int(rng.integers(12, 21))
        x0, y0 = rng.integers(0, side - s + 1, size=2)
        dots = rng.random((s, s)) < 0.5
        img[y0:y0 + s, x0:x0 + s] = np.where(dots[:, :, None], 0.95, 0.05)


def stripe_patch(side: int, angle_deg: float, period: float, colors, phase: float,
                 contrast: float = 1.0) -> np.ndarray:
    yy, xx = np.mgrid[0:side, 0:side] + 0.5
    t = math.radians(angle_deg)
    # stripes run along ``angle``: intensity varies across it
    u = -xx * math.sin(t) + yy * math.cos(t)
    on = np.sin(2 * math.pi * u / period + phase) >= 0
    a, b = np.asarray(colors[0]), np.asarray(colors[1])
    mid = 0.5 * (a + b)
    a = mid + contrast * (a - mid)
    b = mid + contrast * (b - mid)
    return np.where(on[:, :, None], b, a)


def render_image(cfg: SynthConfig, label: int, rng) -> tuple[np.ndarray, tuple[float, float]]:
    side = cfg.image_side
    img = _background(rng, side, cfg.noise)
    _draw_shapes(img, rng, cfg.shapes)
    _draw_speckles(img, rng, cfg.speckles)
    angle, colors = class_signature(label, cfg.classes, cfg.orientations)
    p = cfg.patch_side
    x0, y0 = rng.integers(0, side - p + 1, size=2)
    patch = stripe_patch(p, angle, cfg.stripe_period, colors,
                         rng.uniform(0, 2 * math.pi), cfg.patch_contrast)
    img[y0:y0 + p, x0:x0 + p] = patch
    return np.clip(img, 0.0, 1.0), (x0 + p / 2.0, y0 + p / 2.0)


def generate_synthetic(out_dir, cfg: SynthConfig | None = None,
                       min_patch_side: int = 1) -> Path:
    """Write images, ``manifest.jsonl`` and ``groundtruth.jsonl`` under ``out_dir``.

    Returns the manifest path.  ``min_patch_side`` is the extractor's
    receptive field; smaller patches are rejected.
    """
    cfg = cfg or SynthConfig()
    if cfg.patch_side < min_patch_side:
        raise UsageError(f"patch side {cfg.patch_side} is below the receptive field {min_patch_side}")
    if cfg.patch_side > cfg.image_side:
        raise UsageError("patch side exceeds image side")
    if cfg.classes < 2 or cfg.images_per_class < 2:
        raise UsageError("need at least 2 classes and 2 images per class")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    n_test = int(round(cfg.images_per_class * cfg.test_fraction))
    manifest, truth = [], []
    index = 0
    for c in range(cfg.classes):
        for j in range(cfg.images_per_class):
            rng = np.random.default_rng([cfg.seed, c, j])
            img, (cx, cy) = render_image(cfg, c, rng)
            rel = f"images/c{c:02d}_{j:04d}.ppm"
            write_ppm(out / rel, img)
            split = "test" if j >= cfg.images_per_class - n_test else "train"
            name = f"class{c}"
            manifest.append({"path": rel, "label": name, "split": split})
            truth.append({"path": rel, "cx": cx, "cy": cy, "label": name})
            index += 1
    _write_jsonl(out / "manifest.jsonl", manifest)
    _write_jsonl(out / "groundtruth.jsonl", truth)
    (out / "synth_config.json").write_text(json.dumps(asdict(cfg), indent=1) + "\n")
    return out / "manifest.jsonl"


def _write_jsonl(path: Path, rows) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("".join(json.dumps(r) + "\n" for r in rows))
    tmp.replace(path)
