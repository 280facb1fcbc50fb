"""Images, windows, bilinear resampling and binary PPM/PGM I/O.

Images are float64 arrays of shape ``(height, width, channels)`` with
``channels`` in {1, 3} and intensities in [0, 1].  Windows are expressed in
the pixel frame of the original image.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BoundsError, FormatError, ShapeError

__all__ = [
    "Window",
    "as_image",
    "crop",
    "resize_bilinear",
    "resize_smaller_side",
    "read_ppm",
    "write_ppm",
    "write_pgm",
    "write_image",
]


@dataclass(frozen=True)
class Window:
    x0: int
    y0: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise BoundsError(f"window {self} has non-positive size")

    @classmethod
    def full(cls, img: np.ndarray) -> "Window":
        return cls(0, 0, img.shape[1], img.shape[0])

    @property
    def area(self) -> int:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return self.x0 + self.w / 2.0, self.y0 + self.h / 2.0

    def inside(self, img_w: int, img_h: int) -> bool:
        return (self.x0 >= 0 and self.y0 >= 0
                and self.x0 + self.w <= img_w and self.y0 + self.h <= img_h)

    def as_dict(self) -> dict:
        return {"x0": self.x0, "y0": self.y0, "w": self.w, "h": self.h}


def as_image(data) -> np.ndarray:
    """Validate ``data`` as an image and return it as a float64 (H, W, C) array.

    2-D input is promoted to a single channel.
    """
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ShapeError(f"expected (H, W, 1|3) image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"image has empty dimension: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ShapeError("image contains non-finite intensities")
    return arr


def crop(img: np.ndarray, win: Window) -> np.ndarray:
    """Exact crop; the window must already be inside the image."""
    h, w = img.shape[:2]
    if not win.inside(w, h):
        raise BoundsError(f"window {win} outside {w}x{h} image")
    return img[win.y0:win.y0 + win.h, win.x0:win.x0 + win.w].copy()


def _sample_axis(n_in: int, n_out: int):
    # half-pixel centres: s = (d + 0.5) * in/out - 0.5, clamped to [0, in-1]
    d = np.arange(n_out, dtype=np.float64)
    s = (d + 0.5) * (n_in / n_out) - 0.5
    s = np.clip(s, 0.0, n_in - 1)
    i0 = np.floor(s).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, s - i0


def resize_bilinear(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    if out_w < 1 or out_h < 1:
        raise ShapeError(f"target size must be positive, got {out_w}x{out_h}")
    img = np.asarray(img, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    in_h, in_w = img.shape[:2]
    if (in_w, in_h) == (out_w, out_h):
        out = img.copy()
        return out[:, :, 0] if squeeze else out

    # a + (b - a) * f keeps constant runs exact
    i0, i1, fy = _sample_axis(in_h, out_h)
    a = img[i0]
    rows = a + (img[i1] - a) * fy[:, None, None]
    j0, j1, fx = _sample_axis(in_w, out_w)
    a = rows[:, j0]
    out = a + (rows[:, j1] - a) * fx[None, :, None]
    np.clip(out, img.min(), img.max(), out=out)
    return out[:, :, 0] if squeeze else out


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def resize_smaller_side(img: np.ndarray, target: int, preserve_aspect: bool = True) -> np.ndarray:
    """Resize so the smaller side equals ``target``.

    With ``preserve_aspect`` off the result is a ``target`` x ``target`` warp.
    """
    if target < 1:
        raise ShapeError(f"target side must be positive, got {target}")
    h, w = img.shape[:2]
    if not preserve_aspect:
        return resize_bilinear(img, target, target)
    if w <= h:
        out_w, out_h = target, max(1, _round_half_up(target * h / w))
    else:
        out_w, out_h = max(1, _round_half_up(target * w / h)), target
    return resize_bilinear(img, out_w, out_h)


# --- Netpbm I/O ------------------------------------------------------------

_WHITESPACE = b" \t\n\r\x0b\x0c"


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c in _WHITESPACE and c:
            pos += 1
        elif c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    start = pos
    while pos < n and buf[pos:pos + 1] not in _WHITESPACE and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError(f"truncated header at byte offset {start}")
    return buf[start:pos], pos


def _read_int(buf: bytes, pos: int, what: str) -> tuple[int, int]:
    tok, pos = _read_token(buf, pos)
    if not tok.isdigit():
        raise FormatError(f"bad {what} {tok!r} at byte offset {pos - len(tok)}")
    return int(tok), pos


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 (RGB) or P5 (gray) file with maxval 255."""
    buf = Path(path).read_bytes()
    magic = buf[:2]
    if magic not in (b"P6", b"P5"):
        raise FormatError(f"unsupported format {magic!r} at byte offset 0 "
                          "(only binary P5/P6 are supported)")
    channels = 3 if magic == b"P6" else 1
    width, pos = _read_int(buf, 2, "width")
    height, pos = _read_int(buf, pos, "height")
    maxval, pos = _read_int(buf, pos, "maxval")
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval} at byte offset {pos - len(str(maxval))}")
    if width < 1 or height < 1:
        raise FormatError(f"empty image {width}x{height} in header")
    if pos >= len(buf) or buf[pos:pos + 1] not in _WHITESPACE:
        raise FormatError(f"missing separator after header at byte offset {pos}")
    pos += 1
    need = width * height * channels
    payload = buf[pos:pos + need]
    if len(payload) < need:
        raise FormatError(f"truncated payload at byte offset {pos + len(payload)}: "
                          f"expected {need} bytes, found {len(payload)}")
    data = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return data.astype(np.float64) / 255.0


def _quantize(img: np.ndarray) -> bytes:
    q = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    return q.tobytes()


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def write_ppm(path, img: np.ndarray) -> None:
    img = as_image(img)
    if img.shape[2] != 3:
        raise ShapeError("write_ppm needs a 3-channel image")
    h, w = img.shape[:2]
    _atomic_write(path, b"P6\n%d %d\n255\n" % (w, h) + _quantize(img))


def write_pgm(path, img: np.ndarray) -> None:
    img = as_image(img)
    if img.shape[2] != 1:
        raise ShapeError("write_pgm needs a 1-channel image")
    h, w = img.shape[:2]
    _atomic_write(path, b"P5\n%d %d\n255\n" % (w, h) + _quantize(img))


def write_image(path, img: np.ndarray) -> None:
    """Dispatch to PPM or PGM by channel count."""
    img = as_image(img)
    (write_ppm if img.shape[2] == 3 else write_pgm)(path, img)
