"""Class activation maps, their score decomposition, peaks and sub-windows."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .featurizer import FeatureMap, gap
from .raster import Window, crop, resize_bilinear

DEFAULT_ZOOM = 1.0 / math.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class ClassActivationMap:
    values: np.ndarray           # (h, w)
    class_id: int
    window: Window | None = None
    stride: tuple = (1.0, 1.0)   # original-image pixels per cell along (x, y)

    @property
    def h(self) -> int:
        return self.values.shape[0]

    @property
    def w(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Peak:
    grid_x: int
    grid_y: int
    image_x: int
    image_y: int
    value: float


def _stride_pair(stride) -> tuple[float, float]:
    if np.isscalar(stride):
        return float(stride), float(stride)
    sx, sy = stride
    return float(sx), float(sy)


def compute_cam(fm: FeatureMap, weights, class_id: int = 0,
                window: Window | None = None, stride=None) -> ClassActivationMap:
    """M(x, y) = sum_k weights[k] * f_k(x, y).

    ``stride`` maps cells to original-image pixels; it defaults to the
    extractor stride (window not rescaled).
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (fm.k,):
        raise ShapeError(f"weight vector of shape {w.shape} does not match K={fm.k}")
    m = fm.values @ w
    return ClassActivationMap(m, int(class_id), window,
                              _stride_pair(fm.stride if stride is None else stride))


def cam_mean(cam: ClassActivationMap) -> float:
    return float(cam.values.mean())


def decomposition_residual(cam: ClassActivationMap, score_minus_bias: float) -> float:
    """|mean over cells of M - (S_c - b_c)|."""
    return abs(cam_mean(cam) - float(score_minus_bias))


def check_decomposition(fm: FeatureMap, cam: ClassActivationMap, weights,
                        rtol: float = 1e-9) -> float:
    """Relative residual of the mean-map identity against ``weights . gap(fm)``.

    The scale is sum_k |w_k| * mean|f_k|, which bounds any cancellation in
    either side; raises ``AssertionError`` beyond ``rtol``.
    """
    w = np.asarray(weights, dtype=np.float64)
    target = float(w @ gap(fm))
    scale = float(np.abs(w) @ np.abs(fm.values).mean(axis=(0, 1)))
    rel = decomposition_residual(cam, target) / scale if scale > 0 else 0.0
    if rel > rtol:
        raise AssertionError(f"CAM decomposition residual {rel:.3e} exceeds {rtol:.1e}")
    return rel


def _cell_to_image(cam: ClassActivationMap, gx: int, gy: int) -> tuple[int, int]:
    sx, sy = cam.stride
    ox, oy = (cam.window.x0, cam.window.y0) if cam.window is not None else (0, 0)
    return (int(math.floor(ox + (gx + 0.5) * sx + 0.5)),
            int(math.floor(oy + (gy + 0.5) * sy + 0.5)))


def peak_at(cam: ClassActivationMap, gx: int, gy: int) -> Peak:
    ix, iy = _cell_to_image(cam, gx, gy)
    return Peak(gx, gy, ix, iy, float(cam.values[gy, gx]))


def find_peak(cam: ClassActivationMap) -> Peak:
    """Global argmax; ties go to the smallest row-major index."""
    if cam.values.size < 1:
        raise ShapeError("empty activation map")
    idx = int(np.argmax(cam.values))
    gy, gx = divmod(idx, cam.w)
    return peak_at(cam, gx, gy)


def propose_subwindow(parent: Window, peak_xy, zoom: float, img_w: int, img_h: int,
                      min_side: int = 1) -> Window:
    """Square child window centred on ``peak_xy`` and translated into the image.

    Side = round(zoom * sqrt(parent.w * parent.h)), at least ``min_side``
    and at most the smaller image side.
    """
    if not 0.0 < zoom < 1.0:
        raise ValueError(f"zoom must lie in (0, 1), got {zoom}")
    if isinstance(peak_xy, Peak):
        px, py = peak_xy.image_x, peak_xy.image_y
    else:
        px, py = peak_xy
    side = int(math.floor(zoom * math.sqrt(parent.w * parent.h) + 0.5))
    side = min(max(side, min_side, 1), img_w, img_h)
    x0 = int(math.floor(px - side / 2.0 + 0.5))
    y0 = int(math.floor(py - side / 2.0 + 0.5))
    x0 = min(max(x0, 0), img_w - side)
    y0 = min(max(y0, 0), img_h - side)
    return Window(x0, y0, side, side)


# --- rendering ---------------------------------------------------------------

# blue -> yellow -> red at 0, 0.5, 1
COLORMAP_STOPS = np.array([[0.0, 0.0, 1.0], [1.0, 1.0, 0.0], [1.0, 0.0, 0.0]])


def normalized_map(cam: ClassActivationMap) -> np.ndarray:
    """Min-max normalised values; a constant map becomes 0.5 everywhere."""
    v = cam.values
    lo, hi = float(v.min()), float(v.max())
    if hi - lo <= 0.0:
        return np.full(v.shape, 0.5)
    return (v - lo) / (hi - lo)


def colormap(t: np.ndarray) -> np.ndarray:
    t = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)
    lo = np.where(t < 0.5, 0, 1)
    f = np.where(t < 0.5, t / 0.5, (t - 0.5) / 0.5)[..., None]
    a, b = COLORMAP_STOPS[lo], COLORMAP_STOPS[lo + 1]
    return a + (b - a) * f


def _target_size(cam: ClassActivationMap) -> tuple[int, int]:
    if cam.window is not None:
        return cam.window.w, cam.window.h
    sx, sy = cam.stride
    return max(1, round(cam.w * sx)), max(1, round(cam.h * sy))


def render_heatmap(cam: ClassActivationMap) -> np.ndarray:
    """Single-channel heatmap of the normalised map at the window's size."""
    w, h = _target_size(cam)
    return resize_bilinear(normalized_map(cam)[:, :, None], w, h)


def render_overlay(cam: ClassActivationMap, img: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Blend the colour-mapped heatmap onto the crop of ``img`` under the window."""
    base = crop(img, cam.window) if cam.window is not None else np.asarray(img, dtype=np.float64)
    if base.shape[2] == 1:
        base = np.repeat(base, 3, axis=2)
    if alpha == 0.0:
        return base
    heat = resize_bilinear(normalized_map(cam)[:, :, None], base.shape[1], base.shape[0])[:, :, 0]
    return (1.0 - alpha) * base + alpha * colormap(heat)
