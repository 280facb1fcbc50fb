import struct

import numpy as np
import pytest

from introspect.errors import FormatError, ShapeError, TooSmallInputError
from introspect.featurizer import (ConvLayer, FeatureMap, extract, filter_bank_kernels,
                                   filter_bank_spec, gap, load_weights, save_weights,
                                   tiny_conv_spec, weights_bytes)


def correlate_oracle(img, weights, biases):
    """Zero-padded 'same' correlation by explicit loops: (H, W, out)."""
    c_out, c_in, kh, kw = weights.shape
    h, w = img.shape[:2]
    pad = np.zeros((h + kh - 1, w + kw - 1, c_in))
    pad[kh // 2:kh // 2 + h, kw // 2:kw // 2 + w] = img
    out = np.zeros((h, w, c_out))
    for y in range(h):
        for x in range(w):
            patch = pad[y:y + kh, x:x + kw]          # (kh, kw, in)
            for o in range(c_out):
                out[y, x, o] = np.sum(patch.transpose(2, 0, 1) * weights[o]) + biases[o]
    return out


def filter_bank_oracle(img, stride=8):
    w, b = filter_bank_kernels()
    z = correlate_oracle(img, w, b)
    h, wd = img.shape[0] // stride, img.shape[1] // stride
    out = np.zeros((h, wd, 2 * z.shape[2]))
    for gy in range(h):
        for gx in range(wd):
            cell = z[gy * stride:(gy + 1) * stride, gx * stride:(gx + 1) * stride]
            for i in range(z.shape[2]):
                out[gy, gx, 2 * i] = np.maximum(cell[:, :, i], 0).mean()
                out[gy, gx, 2 * i + 1] = np.maximum(-cell[:, :, i], 0).mean()
    return out


def tiny_conv_oracle(img, spec):
    x = img
    for layer in spec.layers:
        if isinstance(layer, ConvLayer):
            x = np.maximum(correlate_oracle(x, layer.weights, layer.biases), 0)
        else:
            s = layer.size
            h, w = x.shape[0] // s, x.shape[1] // s
            pooled = np.zeros((h, w, x.shape[2]))
            for y in range(h):
                for xx in range(w):
                    pooled[y, xx] = x[y * s:(y + 1) * s, xx * s:(xx + 1) * s].max(axis=(0, 1))
            x = pooled
    return x


class TestSpecs:
    def test_filter_bank_geometry(self):
        spec = filter_bank_spec()
        assert (spec.k, spec.stride_total, spec.receptive_field) == (32, 8, 12)

    def test_tiny_conv_geometry(self):
        spec = tiny_conv_spec(0)
        assert (spec.k, spec.stride_total, spec.receptive_field) == (32, 8, 22)

    def test_same_seed_same_weights(self):
        a, b = tiny_conv_spec(7), tiny_conv_spec(7)
        assert weights_bytes(a) == weights_bytes(b)
        assert weights_bytes(a) != weights_bytes(tiny_conv_spec(8))

    def test_kernels_are_documented_shapes(self):
        w, b = filter_bank_kernels()
        assert w.shape == (16, 3, 5, 5) and b.shape == (16,)
        # derivative and Laplacian filters are zero-mean
        assert np.allclose(w[:10].sum(axis=(1, 2, 3)), 0.0, atol=1e-12)


class TestExtract:
    def test_zero_image_tiny_conv_is_zero(self):
        fm = extract(tiny_conv_spec(3), np.zeros((32, 32, 3)))
        assert fm.values.shape == (4, 4, 32)
        assert not fm.values.any()

    @pytest.mark.parametrize("spec", [filter_bank_spec(), tiny_conv_spec(0)],
                             ids=["filter-bank", "tiny-conv"])
    def test_grid_size_is_floor_of_stride(self, spec):
        assert extract(spec, np.zeros((32, 32, 3))).values.shape[:2] == (4, 4)
        assert extract(spec, np.zeros((30, 47, 3))).values.shape[:2] == (3, 5)

    def test_filter_bank_matches_loop_oracle(self):
        img = np.random.default_rng(0).random((16, 24, 3))
        got = extract(filter_bank_spec(), img).values
        np.testing.assert_allclose(got, filter_bank_oracle(img), atol=1e-12)

    def test_tiny_conv_matches_loop_oracle(self):
        spec = tiny_conv_spec(4, channels=(3, 4))
        img = np.random.default_rng(1).random((12, 12, 3))
        assert spec.receptive_field <= 12
        got = extract(spec, img).values
        np.testing.assert_allclose(got, tiny_conv_oracle(img, spec), atol=1e-12)

    def test_vertical_edge_peaks_at_its_cell(self):
        img = np.zeros((32, 32, 3))
        img[:, 20:] = 1.0
        got = extract(filter_bank_spec(), img).values[:, :, 0]   # relu(vertical-edge filter)
        oracle = filter_bank_oracle(img)[:, :, 0]
        np.testing.assert_allclose(got, oracle, atol=1e-12)
        # the edge at x = 20 lies in cell column 20 // 8 = 2; check rows away from the border
        for row in oracle[1:3]:
            assert int(np.argmax(row)) == 2

    def test_gray_input_is_replicated(self):
        g = np.random.default_rng(2).random((16, 16, 1))
        a = extract(filter_bank_spec(), g).values
        b = extract(filter_bank_spec(), np.repeat(g, 3, axis=2)).values
        assert np.array_equal(a, b)

    def test_too_small_input(self):
        with pytest.raises(TooSmallInputError):
            extract(filter_bank_spec(), np.zeros((11, 40, 3)))

    def test_deterministic(self):
        img = np.random.default_rng(3).random((40, 40, 3))
        spec = tiny_conv_spec(1)
        assert np.array_equal(extract(spec, img).values, extract(spec, img).values)


class TestGap:
    def test_constant_channel(self):
        fm = FeatureMap(np.full((3, 5, 2), 0.7), 8, 12)
        assert gap(fm).tolist() == pytest.approx([0.7, 0.7], abs=1e-15)

    def test_single_hot_cell(self):
        fm = FeatureMap(np.array([[1.0, 0.0], [0.0, 0.0]])[:, :, None], 8, 12)
        assert gap(fm)[0] == 0.25


class TestWeightContainer:
    def test_round_trip_is_bit_exact(self, tmp_path):
        spec = tiny_conv_spec(5)
        digest = save_weights(spec, tmp_path / "w.bin")
        assert len(digest) == 64
        back = load_weights(tmp_path / "w.bin")
        img = np.random.default_rng(0).random((40, 40, 3))
        assert np.array_equal(extract(spec, img).values, extract(back, img).values)
        assert (back.stride_total, back.receptive_field) == (8, 22)

    def test_filter_bank_round_trip(self, tmp_path):
        save_weights(filter_bank_spec(), tmp_path / "fb.bin")
        back = load_weights(tmp_path / "fb.bin", template=filter_bank_spec())
        assert back.kind == "filter-bank" and back.k == 32

    def test_wrong_channel_count_names_layer(self, tmp_path):
        blob = bytearray(weights_bytes(tiny_conv_spec(0)))
        # layer 2 (the second conv) declares in_ch at byte 24 + 5*4 + conv0 payload + pool row
        conv0 = 8 * (16 * 3 * 9 + 16)
        off = 24 + 20 + conv0 + 20 + 4
        assert struct.unpack_from("<I", blob, off)[0] == 16
        struct.pack_into("<I", blob, off, 15)
        (tmp_path / "bad.bin").write_bytes(bytes(blob))
        with pytest.raises(ShapeError, match="layer 2"):
            load_weights(tmp_path / "bad.bin")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "m.bin").write_bytes(b"NOPE" + weights_bytes(tiny_conv_spec(0))[4:])
        with pytest.raises(FormatError, match="magic"):
            load_weights(tmp_path / "m.bin")

    def test_truncation(self, tmp_path):
        (tmp_path / "t.bin").write_bytes(weights_bytes(tiny_conv_spec(0))[:-9])
        with pytest.raises(FormatError, match="truncated"):
            load_weights(tmp_path / "t.bin")

    def test_template_mismatch(self, tmp_path):
        save_weights(tiny_conv_spec(0, channels=(8, 8, 8)), tmp_path / "w.bin")
        with pytest.raises(ShapeError, match="layer 0"):
            load_weights(tmp_path / "w.bin", template=tiny_conv_spec(0))
