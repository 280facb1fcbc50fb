"""Feature extractors producing spatial feature maps, and GAP features.

Two extractors share one contract (:func:`extract`):

``tiny-conv``
    Zero-padded 3x3 convolutions with ReLU and 2x2/stride-2 max pooling,
    weights from a seed or a weight container.

``filter-bank``
    A fixed linear bank of 16 5x5 filters over RGB (see
    :func:`filter_bank_kernels`), densely correlated with zero padding.
    Each response ``z`` is split into ``relu(z)`` and ``relu(-z)`` (channels
    ``2i`` and ``2i+1``), then averaged over non-overlapping
    ``stride x stride`` cells.  K = 32.

Weight container layout (all little-endian)::

    b"INTW"  u32 version=1  u32 kind (0 tiny-conv, 1 filter-bank)
    u32 stride_total  u32 receptive_field  u32 n_layers
    per layer: u32 type (0 conv, 1 maxpool2)  u32 in_ch  u32 out_ch  u32 kh  u32 kw
               conv only: f64[out_ch*in_ch*kh*kw] weights (out, in, kh, kw order)
                          f64[out_ch] biases
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import FormatError, ShapeError, TooSmallInputError
from .raster import _atomic_write

MAGIC = b"INTW"
VERSION = 1
KINDS = ("tiny-conv", "filter-bank")

_HEADER = struct.Struct("<4sIIIII")
_LAYER = struct.Struct("<IIIII")


@dataclass(frozen=True, eq=False)
class ConvLayer:
    weights: np.ndarray  # (out, in, kh, kw)
    biases: np.ndarray   # (out,)

    @property
    def in_ch(self) -> int:
        return self.weights.shape[1]

    @property
    def out_ch(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True, eq=False)
class PoolLayer:
    size: int = 2


@dataclass(frozen=True, eq=False)
class ExtractorSpec:
    kind: str
    layers: tuple
    stride_total: int
    receptive_field: int
    source: str = ""

    @property
    def k(self) -> int:
        convs = [l for l in self.layers if isinstance(l, ConvLayer)]
        out = convs[-1].out_ch
        return 2 * out if self.kind == "filter-bank" else out


@dataclass(frozen=True, eq=False)
class FeatureMap:
    values: np.ndarray  # (h, w, k)
    stride: int
    receptive_field: int

    @property
    def h(self) -> int:
        return self.values.shape[0]

    @property
    def w(self) -> int:
        return self.values.shape[1]

    @property
    def k(self) -> int:
        return self.values.shape[2]


# --- construction ----------------------------------------------------------

def _receptive_field(layers) -> tuple[int, int]:
    rf, jump = 1, 1
    for layer in layers:
        if isinstance(layer, ConvLayer):
            rf += (layer.weights.shape[2] - 1) * jump
        else:
            rf += (layer.size - 1) * jump
            jump *= layer.size
    return rf, jump


def tiny_conv_spec(seed: int = 0, channels=(16, 32, 32)) -> ExtractorSpec:
    """Seeded He-normal ``[conv3x3 -> ReLU -> maxpool2] x len(channels)`` stack.

    Biases start at zero.  The same seed always yields the same weights.
    """
    rng = np.random.default_rng(seed)
    layers = []
    c_in = 3
    for c_out in channels:
        w = rng.standard_normal((c_out, c_in, 3, 3)) * np.sqrt(2.0 / (9 * c_in))
        layers.append(ConvLayer(w, np.zeros(c_out)))
        layers.append(PoolLayer(2))
        c_in = c_out
    rf, stride = _receptive_field(layers)
    return ExtractorSpec("tiny-conv", tuple(layers), stride, rf, source=f"seed:{seed}")


def _gauss_grid(radius: int = 2):
    r = np.arange(-radius, radius + 1, dtype=np.float64)
    return np.meshgrid(r, r)  # x varies along columns, y along rows


def _oriented_derivative(sigma: float, theta_deg: float) -> np.ndarray:
    x, y = _gauss_grid()
    t = np.deg2rad(theta_deg)
    u = x * np.cos(t) + y * np.sin(t)
    k = u * np.exp(-(x ** 2 + y ** 2) / (2 * sigma ** 2))
    return k / np.abs(k).sum()


def _log(sigma: float) -> np.ndarray:
    x, y = _gauss_grid()
    r2 = (x ** 2 + y ** 2) / (2 * sigma ** 2)
    k = (r2 - 1.0) * np.exp(-r2)
    k -= k.mean()
    return k / np.abs(k).sum()


def _box(size: int) -> np.ndarray:
    k = np.zeros((5, 5))
    lo = (5 - size) // 2
    k[lo:lo + size, lo:lo + size] = 1.0 / size ** 2
    return k


def filter_bank_kernels() -> tuple[np.ndarray, np.ndarray]:
    """The fixed bank as ``(weights (16, 3, 5, 5), biases (16,))``.

    Filters 0-7: oriented first derivative of a Gaussian on luminance
    ``(R+G+B)/3``, orientation 0/45/90/135 degrees (0 = intensity rising to
    the right, i.e. vertical edges) at sigma 0.7 (filters 0-3) and 1.4
    (filters 4-7), each L1-normalised.
    Filters 8-9: zero-mean Laplacian of Gaussian on luminance, sigma 0.7, 1.2.
    Filter 10: 5x5 luminance mean minus 0.5.
    Filter 11: 5x5 mean of R - G.  Filter 12: 5x5 mean of B - (R+G)/2.
    Filters 13-15: 3x3 means of R, G, B minus 0.5.
    """
    lum = np.full(3, 1.0 / 3.0)
    filters, biases = [], []

    def add(kernel, planes, bias=0.0):
        filters.append(np.asarray(planes, dtype=np.float64)[:, None, None] * kernel[None])
        biases.append(bias)

    for sigma in (0.7, 1.4):
        for theta in (0, 45, 90, 135):
            add(_oriented_derivative(sigma, theta), lum)
    add(_log(0.7), lum)
    add(_log(1.2), lum)
    add(_box(5), lum, -0.5)
    add(_box(5), [1.0, -1.0, 0.0])
    add(_box(5), [-0.5, -0.5, 1.0])
    for c in range(3):
        add(_box(3), np.eye(3)[c], -0.5)
    return np.stack(filters), np.asarray(biases)


def filter_bank_spec(stride: int = 8) -> ExtractorSpec:
    w, b = filter_bank_kernels()
    layers = (ConvLayer(w, b),)
    return ExtractorSpec("filter-bank", layers, stride, stride + w.shape[2] - 1,
                         source="builtin")


# --- forward pass ------------------------------------------------------------

def _conv2d(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """Zero-padded 'same' correlation via one im2col matrix product."""
    wts = layer.weights
    c_out, _, kh, kw = wts.shape
    h, w = x.shape[:2]
    xp = np.pad(x, ((kh // 2, kh // 2), (kw // 2, kw // 2), (0, 0)))
    cols = sliding_window_view(xp, (kh, kw), axis=(0, 1)).reshape(h * w, -1)
    return (cols @ wts.reshape(c_out, -1).T).reshape(h, w, c_out) + layer.biases


def _maxpool(x: np.ndarray, s: int) -> np.ndarray:
    h, w = x.shape[0] // s, x.shape[1] // s
    return x[:h * s, :w * s].reshape(h, s, w, s, -1).max(axis=(1, 3))


def _cellmean(x: np.ndarray, s: int) -> np.ndarray:
    h, w = x.shape[0] // s, x.shape[1] // s
    return x[:h * s, :w * s].reshape(h, s, w, s, -1).mean(axis=(1, 3))


def extract(spec: ExtractorSpec, img: np.ndarray) -> FeatureMap:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    h, w = img.shape[:2]
    if h < spec.receptive_field or w < spec.receptive_field:
        raise TooSmallInputError(
            f"{w}x{h} input is smaller than the receptive field {spec.receptive_field}")

    if spec.kind == "filter-bank":
        z = _conv2d(img, spec.layers[0])
        # channel 2i = relu(z_i), 2i+1 = relu(-z_i)
        x = np.stack([np.maximum(z, 0.0), np.maximum(-z, 0.0)], axis=3).reshape(h, w, -1)
        values = _cellmean(x, spec.stride_total)
    else:
        x = img
        for layer in spec.layers:
            if isinstance(layer, ConvLayer):
                x = np.maximum(_conv2d(x, layer), 0.0)
            else:
                x = _maxpool(x, layer.size)
        values = x
    return FeatureMap(np.ascontiguousarray(values), spec.stride_total, spec.receptive_field)


def gap(fm: FeatureMap) -> np.ndarray:
    """Global average pooling: the per-channel spatial mean of the map."""
    if fm.h * fm.w < 1:
        raise ShapeError("feature map has no cells")
    return fm.values.mean(axis=(0, 1))


# --- weight container ---------------------------------------------------------

def weights_bytes(spec: ExtractorSpec) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, KINDS.index(spec.kind), spec.stride_total,
                          spec.receptive_field, len(spec.layers))]
    for layer in spec.layers:
        if isinstance(layer, ConvLayer):
            o, i, kh, kw = layer.weights.shape
            parts.append(_LAYER.pack(0, i, o, kh, kw))
            parts.append(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
            parts.append(np.ascontiguousarray(layer.biases, dtype="<f8").tobytes())
        else:
            parts.append(_LAYER.pack(1, 0, 0, layer.size, layer.size))
    return b"".join(parts)


def save_weights(spec: ExtractorSpec, path) -> str:
    """Write the container atomically; returns its sha256 hex digest."""
    data = weights_bytes(spec)
    _atomic_write(path, data)
    return hashlib.sha256(data).hexdigest()


def load_weights(path, template: ExtractorSpec | None = None) -> ExtractorSpec:
    """Read a weight container.

    With ``template`` given, every layer must match its declared shape.
    """
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(buf)} bytes)")
    magic, version, kind, stride, rf, n_layers = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    if kind >= len(KINDS):
        raise FormatError(f"{path}: unknown extractor kind {kind}")
    pos = _HEADER.size
    layers = []
    c_prev = 3
    for idx in range(n_layers):
        if pos + _LAYER.size > len(buf):
            raise FormatError(f"{path}: truncated layer table at layer {idx}")
        ltype, c_in, c_out, kh, kw = _LAYER.unpack_from(buf, pos)
        pos += _LAYER.size
        if ltype == 1:
            layers.append(PoolLayer(kh))
            continue
        if ltype != 0:
            raise FormatError(f"{path}: layer {idx} has unknown type {ltype}")
        if c_in != c_prev:
            raise ShapeError(f"{path}: layer {idx} expects {c_in} input channels, "
                             f"previous layer provides {c_prev}")
        n_w = c_out * c_in * kh * kw
        end = pos + 8 * (n_w + c_out)
        if end > len(buf):
            raise FormatError(f"{path}: truncated weights in layer {idx}")
        w = np.frombuffer(buf, dtype="<f8", count=n_w, offset=pos).reshape(c_out, c_in, kh, kw)
        b = np.frombuffer(buf, dtype="<f8", count=c_out, offset=pos + 8 * n_w)
        layers.append(ConvLayer(w.astype(np.float64), b.astype(np.float64)))
        pos = end
        c_prev = c_out
    if pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - pos} trailing bytes after layer table")

    spec = ExtractorSpec(KINDS[kind], tuple(layers), stride, rf, source=str(path))
    if template is not None:
        _check_against(spec, template, path)
    return spec


def _check_against(spec: ExtractorSpec, template: ExtractorSpec, path) -> None:
    if spec.kind != template.kind or len(spec.layers) != len(template.layers):
        raise ShapeError(f"{path}: layer structure differs from the declared extractor")
    for idx, (a, b) in enumerate(zip(spec.layers, template.layers)):
        if type(a) is not type(b):
            raise ShapeError(f"{path}: layer {idx} type differs from declaration")
        if isinstance(a, ConvLayer) and a.weights.shape != b.weights.shape:
            raise ShapeError(f"{path}: layer {idx} shape {a.weights.shape} != "
                             f"declared {b.weights.shape}")
