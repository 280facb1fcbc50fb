"""Accuracy, per-class F-measure, localization and CAM-consistency metrics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import cam as cammod
from . import explorer as ex
from .errors import DataError
from .featurizer import gap
from .raster import Window
from .trainkit import ClassifierStack, Entry, load_image, parallel_map

VARIANTS = ("baseline", "late", "early", "early-accum", "same-classifier",
            "saliency", "random")


def iou(a: Window, b: Window) -> float:
    ix = max(0, min(a.x0 + a.w, b.x0 + b.w) - max(a.x0, b.x0))
    iy = max(0, min(a.y0 + a.h, b.y0 + b.h) - max(a.y0, b.y0))
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def per_class_prf(pred, truth, n_classes: int) -> dict:
    """Precision, recall and F1 per class; F1 is 0 when P + R = 0."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    out = {"precision": [], "recall": [], "f1": [], "support": []}
    for c in range(n_classes):
        tp = int(np.sum((pred == c) & (truth == c)))
        n_pred = int(np.sum(pred == c))
        n_true = int(np.sum(truth == c))
        p = tp / n_pred if n_pred else 0.0
        r = tp / n_true if n_true else 0.0
        out["precision"].append(p)
        out["recall"].append(r)
        out["f1"].append(f1_score(p, r))
        out["support"].append(n_true)
    return out


def f1_score(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass
class EvalReport:
    classes: list[str]
    n_test: int
    accuracy: dict = field(default_factory=dict)      # variant -> accuracy
    per_class: dict = field(default_factory=dict)     # variant -> P/R/F1 lists
    per_depth_accuracy: list = field(default_factory=list)
    localization_hit_rate: float | None = None
    cam_consistency_iou: float | None = None
    random_peak_iou: float | None = None

    def to_dict(self) -> dict:
        return {
            "classes": self.classes,
            "n_test": self.n_test,
            "accuracy": {k: self.accuracy[k] for k in VARIANTS if k in self.accuracy},
            "per_depth_accuracy": self.per_depth_accuracy,
            "localization_hit_rate": self.localization_hit_rate,
            "cam_consistency_iou": self.cam_consistency_iou,
            "random_peak_iou": self.random_peak_iou,
            "per_class": {k: self.per_class[k] for k in VARIANTS if k in self.per_class},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def to_text(self) -> str:
        lines = [f"test images: {self.n_test}", "", f"{'variant':<18}{'accuracy':>10}"]
        for k in VARIANTS:
            if k in self.accuracy:
                lines.append(f"{k:<18}{self.accuracy[k]:>10.4f}")
        if self.per_depth_accuracy:
            lines += ["", f"{'depth':<18}{'accuracy':>10}"]
            lines += [f"{d:<18}{a:>10.4f}" for d, a in enumerate(self.per_depth_accuracy)]
        for name, val in (("localization hit-rate", self.localization_hit_rate),
                          ("CAM-consistency IoU", self.cam_consistency_iou),
                          ("random-peak IoU", self.random_peak_iou)):
            if val is not None:
                lines.append(f"{name:<24}{val:>8.4f}")
        for variant, prf in self.per_class.items():
            lines += ["", f"per-class ({variant})",
                      f"{'class':<16}{'precision':>10}{'recall':>10}{'f1':>10}{'support':>9}"]
            for c, name in enumerate(self.classes):
                lines.append(f"{name:<16}{prf['precision'][c]:>10.4f}{prf['recall'][c]:>10.4f}"
                             f"{prf['f1'][c]:>10.4f}{prf['support'][c]:>9d}")
        return "\n".join(lines) + "\n"


def f_measure_delta(report: EvalReport, variant_a: str, variant_b: str) -> list[float]:
    """Per-class F1(b) - F1(a).  Depth variants are named ``depth-<t>``."""
    fa = report.per_class[variant_a]["f1"]
    fb = report.per_class[variant_b]["f1"]
    return [b - a for a, b in zip(fa, fb)]


# --- per-image evaluation --------------------------------------------------------------

@dataclass
class ImageResult:
    key: str
    label: int
    predictions: dict      # variant -> class index
    depth_predictions: list
    tree: ex.ExplorationTree


def evaluate_image(img, label: int, key: str, stack: ClassifierStack, image_key: int,
                   iterations: int | None = None, with_same: bool = True) -> ImageResult:
    cfg = stack.config.explore_config()
    if iterations is not None:
        cfg.iterations = iterations
    tree = ex.explore(img, stack, stack.extractor, cfg, image_key=image_key)
    route = ex.select_route(tree)
    preds = {
        "baseline": route.nodes[0].scores.predicted,
        "late": ex.fuse_late(route).predicted,
        "early": ex.fuse_early(route, stack.early[len(route) - 1]).predicted,
        "early-accum": ex.fuse_early_accum(route, stack.early).predicted,
    }
    if with_same:
        same_tree = ex.explore(img, stack.same_classifier(), stack.extractor, cfg,
                               image_key=image_key)
        preds["same-classifier"] = ex.fuse_late(ex.select_route(same_tree)).predicted
    return ImageResult(key, label, preds, [n.scores.predicted for n in route.nodes], tree)


def evaluate(stack: ClassifierStack, entries: list[Entry], iterations: int | None = None,
             groundtruth: dict | None = None, radius: float = 16.0,
             ablations: dict | None = None, consistency: bool = True,
             seed: int = 0) -> tuple[EvalReport, list[ImageResult]]:
    """Evaluate every variant on ``entries``.

    ``ablations`` maps a variant name (``saliency``/``random``) to a stack
    trained under that guidance policy; its early-accum accuracy is
    reported under that name.
    """
    classes = stack.classes
    labels = [classes.index(e.label) for e in entries]

    def run(i):
        img = load_image(entries[i])
        res = evaluate_image(img, labels[i], entries[i].key, stack, i, iterations)
        extra = {}
        for name, abl in (ablations or {}).items():
            r = evaluate_image(img, labels[i], entries[i].key, abl, i, iterations,
                               with_same=False)
            extra[name] = r.predictions["early-accum"]
        res.predictions.update(extra)
        cons = cam_consistency_one(img, labels[i], stack) if consistency else None
        ctrl = random_peak_iou_one(img, stack, seed, i) if consistency else None
        return res, cons, ctrl

    out = parallel_map(run, range(len(entries)))
    results = [o[0] for o in out]
    truth = np.array(labels)
    report = EvalReport(list(classes), len(entries))
    for variant in VARIANTS:
        if variant not in results[0].predictions:
            continue
        pred = np.array([r.predictions[variant] for r in results])
        report.accuracy[variant] = float(np.mean(pred == truth))
        report.per_class[variant] = per_class_prf(pred, truth, len(classes))
    depth = max(len(r.depth_predictions) for r in results)
    for t in range(depth):
        pred = np.array([r.depth_predictions[min(t, len(r.depth_predictions) - 1)]
                         for r in results])
        report.per_depth_accuracy.append(float(np.mean(pred == truth)))
        report.per_class[f"depth-{t}"] = per_class_prf(pred, truth, len(classes))
    if consistency:
        report.cam_consistency_iou = float(np.mean([o[1] for o in out]))
        report.random_peak_iou = float(np.mean([o[2] for o in out]))
    if groundtruth is not None:
        report.localization_hit_rate = localization_hit_rate(
            [r.tree for r in results], [r.key for r in results], groundtruth, radius)
    return report, results


# --- localization and CAM consistency ---------------------------------------------------

def depth1_peak(tree: ex.ExplorationTree):
    """Image point of the root's top-class peak, i.e. the greedy depth-1 centre."""
    route = ex.select_route(tree)
    return route.nodes[1].peak if len(route) > 1 else None


def localization_hit_rate(trees, keys, groundtruth: dict, radius: float) -> float:
    """Fraction of trees whose depth-1 peak lies within ``radius`` of the patch centre."""
    if not trees:
        return 0.0
    hits = 0
    for tree, key in zip(trees, keys):
        if key not in groundtruth:
            raise DataError(f"no ground-truth entry for {key}")
        gt = groundtruth[key]
        p = depth1_peak(tree)
        if p is not None and math.hypot(p[0] - gt["cx"], p[1] - gt["cy"]) <= radius:
            hits += 1
    return hits / len(trees)


def _root_view(img, stack: ClassifierStack):
    cfg = stack.config
    return ex.view_window(img, Window.full(img), stack.extractor, cfg.input_side,
                          cfg.preserve_aspect)


def consistency_iou(fm, clf, label: int, window: Window, cell_stride, img_shape,
                    zoom: float, min_side: int) -> float:
    """IoU of the windows proposed from ``label``'s map and the best other class's map.

    "Best other" is the highest-scoring non-``label`` class on ``gap(fm)``.
    """
    sv = ex.score(clf, gap(fm))
    other = next(c for c in sv.top(len(sv.scores)) if c != label)
    wins = []
    for c in (label, other):
        m = cammod.compute_cam(fm, clf.weights[c], c, window, cell_stride)
        wins.append(ex.child_window(window, cammod.find_peak(m), img_shape, zoom, min_side))
    return iou(*wins)


def cam_consistency_one(img, label: int, stack: ClassifierStack) -> float:
    """Root-level CAM-consistency IoU of one image under ``stack``'s E_0."""
    view = _root_view(img, stack)
    return consistency_iou(view.fm, stack.classifiers[0], label, view.window, view.cell_stride,
                           img.shape, stack.config.zoom, stack.extractor.receptive_field)


def random_peak_iou_one(img, stack: ClassifierStack, seed: int, image_key: int) -> float:
    """IoU of two windows centred on independent uniformly random cells."""
    view = _root_view(img, stack)
    rng = np.random.default_rng([seed, image_key, 7919])
    m = cammod.ClassActivationMap(np.zeros((view.fm.h, view.fm.w)), -1, view.window,
                                  view.cell_stride)
    wins = []
    for _ in range(2):
        gy, gx = divmod(int(rng.integers(view.fm.h * view.fm.w)), view.fm.w)
        wins.append(ex.child_window(view.window, cammod.peak_at(m, gx, gy), img.shape,
                                    stack.config.zoom, stack.extractor.receptive_field))
    return iou(*wins)


def cam_consistency(stack: ClassifierStack, images, labels) -> float:
    return float(np.mean([cam_consistency_one(im, y, stack) for im, y in zip(images, labels)]))
