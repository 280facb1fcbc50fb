"""Exploration trees: alternate classification and introspection, then fuse.

A tree is grown breadth-first from the full image.  Every node at depth
``t`` is scored by the depth-``t`` classifier; its ``beam_width`` best
classes each produce one child, a square sub-window centred on the peak of
that class's activation map.  Routes from the root are fused by summing
scores (late fusion) or by scoring averaged normalised features with a
route-length classifier (early fusion).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import cam as cammod
from .classifier import LinearClassifier, ScoreVector, l2_normalize, score
from .errors import FormatError, ShapeError, TooSmallInputError
from .featurizer import ExtractorSpec, FeatureMap, extract, gap
from .raster import Window, crop, resize_smaller_side

POLICIES = ("cam", "saliency", "random")
DEBUG = bool(os.environ.get("INTROSPECT_DEBUG"))


@dataclass
class ExploreConfig:
    iterations: int = 4           # T: route length in nodes, root included
    beam_width: int = 1           # k
    zoom: float = cammod.DEFAULT_ZOOM
    input_side: int = 128
    preserve_aspect: bool = True
    policy: str = "cam"
    seed: int = 0
    min_side: int | None = None   # defaults to the extractor's receptive field

    def validate(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 1 <= self.beam_width <= 3:
            raise ValueError("beam width must lie in [1, 3]")
        if not 0.0 < self.zoom < 1.0:
            raise ValueError("zoom must lie in (0, 1)")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}; expected one of {POLICIES}")

    def snapshot(self) -> dict:
        return {"iterations": self.iterations, "beam_width": self.beam_width,
                "zoom": self.zoom, "input_side": self.input_side,
                "preserve_aspect": self.preserve_aspect, "policy": self.policy,
                "seed": self.seed}


@dataclass
class ExplorationNode:
    id: int
    depth: int
    window: Window
    feature: np.ndarray
    scores: ScoreVector
    parent: int | None = None
    chosen_class: int | None = None     # class whose map at the parent produced this node
    peak: tuple[int, int] | None = None  # image point the window was centred on
    children: list[int] = field(default_factory=list)


@dataclass
class ExplorationTree:
    nodes: list[ExplorationNode]
    config: dict
    image_size: tuple[int, int]  # (width, height)
    root: int = 0

    def node(self, i: int) -> ExplorationNode:
        return self.nodes[i]


@dataclass
class Route:
    nodes: list[ExplorationNode]

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def features(self) -> list[np.ndarray]:
        return [n.feature for n in self.nodes]

    @property
    def scores(self) -> list[ScoreVector]:
        return [n.scores for n in self.nodes]

    def prefix(self, length: int) -> "Route":
        return Route(self.nodes[:length])


# --- per-window machinery shared with training ---------------------------------

@dataclass(frozen=True, eq=False)
class WindowView:
    """A window cropped, resized to the input side and featurised."""

    window: Window
    pixels: np.ndarray       # resized crop fed to the extractor
    fm: FeatureMap
    cell_stride: tuple       # original-image pixels per feature cell (x, y)

    @property
    def feature(self) -> np.ndarray:
        return gap(self.fm)


def view_window(img: np.ndarray, win: Window, extractor: ExtractorSpec,
                input_side: int, preserve_aspect: bool = True) -> WindowView:
    patch = crop(img, win)
    if min(win.w, win.h) < extractor.receptive_field:
        raise TooSmallInputError(f"window {win} below receptive field {extractor.receptive_field}")
    pixels = resize_smaller_side(patch, input_side, preserve_aspect)
    fm = extract(extractor, pixels)
    sx = extractor.stride_total * win.w / pixels.shape[1]
    sy = extractor.stride_total * win.h / pixels.shape[0]
    return WindowView(win, pixels, fm, (sx, sy))


def saliency_grid(view: WindowView, radius: int) -> np.ndarray:
    """Gradient-magnitude saliency pooled onto the feature grid.

    Central differences of luminance, box blur of the given radius, then
    the mean over each feature cell.
    """
    lum = view.pixels.mean(axis=2)
    gx = np.zeros_like(lum)
    gy = np.zeros_like(lum)
    gx[:, 1:-1] = 0.5 * (lum[:, 2:] - lum[:, :-2])
    gy[1:-1, :] = 0.5 * (lum[2:, :] - lum[:-2, :])
    mag = ndimage.uniform_filter(np.hypot(gx, gy), size=2 * radius + 1, mode="nearest")
    s = view.fm.stride
    h, w = view.fm.h, view.fm.w
    return mag[:h * s, :w * s].reshape(h, s, w, s).mean(axis=(1, 3))


def guidance_peaks(view: WindowView, clf: LinearClassifier, scores: ScoreVector,
                   k: int, policy: str = "cam", rng=None,
                   check: bool = DEBUG) -> list[tuple[int, cammod.Peak]]:
    """One (class, peak) per expanded class, best class first."""
    classes = scores.top(k)
    if policy == "cam":
        out = []
        for c in classes:
            m = cammod.compute_cam(view.fm, clf.weights[c], c, view.window, view.cell_stride)
            if check:
                cammod.check_decomposition(view.fm, m, clf.weights[c])
            out.append((c, cammod.find_peak(m)))
        return out
    if policy == "saliency":
        grid = saliency_grid(view, view.fm.stride)
        m = cammod.ClassActivationMap(grid, -1, view.window, view.cell_stride)
        p = cammod.find_peak(m)
        return [(c, p) for c in classes]
    if policy == "random":
        m = cammod.ClassActivationMap(np.zeros((view.fm.h, view.fm.w)), -1,
                                      view.window, view.cell_stride)
        out = []
        for c in classes:
            cell = int(rng.integers(view.fm.h * view.fm.w))
            gy, gx = divmod(cell, view.fm.w)
            out.append((c, cammod.peak_at(m, gx, gy)))
        return out
    raise ValueError(f"unknown policy {policy!r}")


def child_window(parent: Window, peak: cammod.Peak, img_shape, zoom: float,
                 min_side: int) -> Window:
    h, w = img_shape[:2]
    return cammod.propose_subwindow(parent, peak, zoom, w, h, min_side)


def node_rng(seed: int, image_key: int, node_id: int):
    return np.random.default_rng([seed, image_key, node_id])


# --- exploration ---------------------------------------------------------------

def explore(img: np.ndarray, stack, extractor: ExtractorSpec,
            config: ExploreConfig | None = None, image_key: int = 0) -> ExplorationTree:
    """Grow the exploration tree for one image.

    ``stack.classifiers[t]`` scores depth-``t`` windows.  ``image_key``
    feeds the random policy's stream together with ``config.seed``.
    """
    cfg = config or ExploreConfig()
    cfg.validate()
    clfs = stack.classifiers
    if len(clfs) < cfg.iterations:
        raise ShapeError(f"stack has {len(clfs)} classifiers, exploration needs {cfg.iterations}")
    min_side = cfg.min_side if cfg.min_side is not None else extractor.receptive_field

    root_win = Window.full(img)
    root_view = view_window(img, root_win, extractor, cfg.input_side, cfg.preserve_aspect)
    nodes = [ExplorationNode(0, 0, root_win, root_view.feature,
                             score(clfs[0], root_view.feature))]
    frontier = [(nodes[0], root_view)]
    for depth in range(cfg.iterations - 1):
        nxt = []
        for parent, view in frontier:
            rng = node_rng(cfg.seed, image_key, parent.id) if cfg.policy == "random" else None
            for c, peak in guidance_peaks(view, clfs[depth], parent.scores,
                                          cfg.beam_width, cfg.policy, rng):
                win = child_window(parent.window, peak, img.shape, cfg.zoom, min_side)
                try:
                    child_view = view_window(img, win, extractor, cfg.input_side,
                                             cfg.preserve_aspect)
                except TooSmallInputError:
                    continue
                child = ExplorationNode(len(nodes), depth + 1, win, child_view.feature,
                                        score(clfs[depth + 1], child_view.feature),
                                        parent=parent.id, chosen_class=c,
                                        peak=(peak.image_x, peak.image_y))
                nodes.append(child)
                parent.children.append(child.id)
                nxt.append((child, child_view))
        frontier = nxt
    return ExplorationTree(nodes, cfg.snapshot(), (img.shape[1], img.shape[0]))


def select_route(tree: ExplorationTree) -> Route:
    """Greedy route: follow the child produced by each node's top class."""
    node = tree.nodes[tree.root]
    path = [node]
    while node.children:
        nxt = [tree.nodes[i] for i in node.children
               if tree.nodes[i].chosen_class == node.scores.predicted]
        if not nxt:
            break
        node = nxt[0]
        path.append(node)
    return Route(path)


def all_routes(tree: ExplorationTree) -> list[Route]:
    out = []

    def walk(i, acc):
        acc = acc + [tree.nodes[i]]
        if not tree.nodes[i].children:
            out.append(Route(acc))
        for c in tree.nodes[i].children:
            walk(c, acc)

    walk(tree.root, [])
    return out


# --- fusion ---------------------------------------------------------------------

def fuse_late(route: Route) -> ScoreVector:
    if len(route) == 0:
        raise ValueError("empty route")
    if len(route) == 1:
        return route.nodes[0].scores
    return ScoreVector.from_scores(np.sum([s.scores for s in route.scores], axis=0))


def early_feature(route: Route) -> np.ndarray:
    """Arithmetic mean of the route's l2-normalised features."""
    feats = [l2_normalize(f) for f in route.features]
    if len({f.shape for f in feats}) != 1:
        raise ShapeError("route features differ in dimension")
    return np.mean(feats, axis=0)


def fuse_early(route: Route, clf_for_length: LinearClassifier) -> ScoreVector:
    return score(clf_for_length, early_feature(route))


def fuse_early_accum(route: Route, clfs_per_length) -> ScoreVector:
    """Sum of early-fusion scores over every route prefix 1..len(route)."""
    if len(clfs_per_length) < len(route):
        raise ShapeError(f"need early-fusion classifiers for lengths 1..{len(route)}")
    total = np.sum([fuse_early(route.prefix(n), clfs_per_length[n - 1]).scores
                    for n in range(1, len(route) + 1)], axis=0)
    return ScoreVector.from_scores(total)


# --- serialisation ----------------------------------------------------------------

def tree_to_dict(tree: ExplorationTree) -> dict:
    """Canonical layout; key order is fixed and part of the format."""
    return {
        "config": tree.config,
        "image": {"width": tree.image_size[0], "height": tree.image_size[1]},
        "root": tree.root,
        "nodes": [
            {
                "id": n.id,
                "depth": n.depth,
                "parent": n.parent,
                "window": n.window.as_dict(),
                "chosen_class": n.chosen_class,
                "peak": list(n.peak) if n.peak is not None else None,
                "scores": [float(s) for s in n.scores.scores],
                "feature": [float(f) for f in n.feature],
                "children": list(n.children),
            }
            for n in tree.nodes
        ],
    }


def serialize_tree(tree: ExplorationTree) -> str:
    return json.dumps(tree_to_dict(tree), indent=1) + "\n"


def load_tree(text: str) -> ExplorationTree:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"tree JSON parse error at byte offset {exc.pos}: {exc.msg}") from None
    try:
        nodes = []
        for d in doc["nodes"]:
            w = d["window"]
            nodes.append(ExplorationNode(
                int(d["id"]), int(d["depth"]), Window(w["x0"], w["y0"], w["w"], w["h"]),
                np.asarray(d["feature"], dtype=np.float64),
                ScoreVector.from_scores(d["scores"]),
                parent=d["parent"], chosen_class=d["chosen_class"],
                peak=tuple(d["peak"]) if d["peak"] is not None else None,
                children=list(d["children"])))
        tree = ExplorationTree(nodes, doc["config"],
                               (doc["image"]["width"], doc["image"]["height"]), doc["root"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"tree JSON missing or malformed field: {exc}") from None
    validate_tree(tree)
    return tree


def validate_tree(tree: ExplorationTree) -> None:
    w, h = tree.image_size
    for i, n in enumerate(tree.nodes):
        if n.id != i:
            raise FormatError(f"node {i} carries id {n.id}")
        if not n.window.inside(w, h):
            raise FormatError(f"node {i} window {n.window} outside {w}x{h} image")
        for c in n.children:
            if not 0 <= c < len(tree.nodes) or tree.nodes[c].depth != n.depth + 1 \
                    or tree.nodes[c].parent != i:
                raise FormatError(f"node {i} has inconsistent child {c}")
    if tree.nodes[tree.root].window != Window(0, 0, w, h):
        raise FormatError("root window is not the full image")
