"""Convolution backends: direct reference, im2col+GEMM, Winograd, adjoint."""

import logging

import numpy as np
import pytest

from vsrkit import (
    ConvKernel,
    ShapeError,
    activation,
    conv2d,
    conv2d_gemm,
    conv2d_naive,
    conv2d_winograd,
    conv_transpose2d,
    gemm,
    im2col,
    maxpool2,
)


def _conv_ref(x, w, b, stride, pad):
    """Six-loop scalar convolution used as the ground-truth oracle."""
    n, ci, h, w_in = x.shape
    co, _, k, _ = w.shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w_in + 2 * pad - k) // stride + 1
    xp = np.zeros((n, ci, h + 2 * pad, w_in + 2 * pad), dtype=np.float64)
    xp[:, :, pad:pad + h, pad:pad + w_in] = x
    out = np.zeros((n, co, oh, ow), dtype=np.float64)
    for bi in range(n):
        for o in range(co):
            for oy in range(oh):
                for ox in range(ow):
                    acc = 0.0
                    for c in range(ci):
                        for ky in range(k):
                            for kx in range(k):
                                acc += (xp[bi, c, oy * stride + ky,
                                           ox * stride + kx]
                                        * float(w[o, c, ky, kx]))
                    out[bi, o, oy, ox] = acc + float(b[o])
    return out.astype(np.float32)


def test_naive_matches_scalar_reference():
    rng = np.random.default_rng(10)
    for _ in range(8):
        ci = int(rng.integers(1, 4))
        co = int(rng.integers(1, 4))
        k = int(rng.choice([1, 3]))
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, 2))
        x = rng.random((2, ci, 6, 5), dtype=np.float32)
        w = rng.standard_normal((co, ci, k, k)).astype(np.float32)
        b = rng.standard_normal(co).astype(np.float32)
        kern = ConvKernel(w, b, stride=stride, pad=pad)
        got = conv2d_naive(x, kern)
        ref = _conv_ref(x, w, b, stride, pad)
        assert got.shape == ref.shape
        assert np.max(np.abs(got - ref)) < 1e-5


def test_all_ones_kernel_sums_window():
    x = np.ones((1, 1, 5, 5), dtype=np.float32)
    kern = ConvKernel(np.ones((1, 1, 3, 3), dtype=np.float32))
    out = conv2d_naive(x, kern)
    assert out.shape == (1, 1, 3, 3)
    assert np.all(out == 9.0)


def test_zero_kernel_yields_bias():
    kern = ConvKernel(np.zeros((2, 3, 3, 3), dtype=np.float32),
                      np.array([1.5, -0.5], dtype=np.float32))
    x = np.random.default_rng(0).random((1, 3, 6, 6), dtype=np.float32)
    for backend in ("naive", "gemm", "winograd"):
        out = conv2d(x, kern, backend)
        assert np.allclose(out[0, 0], 1.5, atol=1e-7)
        assert np.allclose(out[0, 1], -0.5, atol=1e-7)


def test_im2col_geometry_and_content():
    x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
    cols = im2col(x, 3)
    assert cols.shape == (4, 9)
    # first patch is the top-left 3x3 window flattened row-major
    assert np.array_equal(cols[0], x[0, 0, :3, :3].ravel())
    # last patch is the bottom-right window
    assert np.array_equal(cols[3], x[0, 0, 1:, 1:].ravel())


def test_im2col_multichannel_column_order():
    rng = np.random.default_rng(4)
    x = rng.random((1, 3, 5, 5), dtype=np.float32)
    cols = im2col(x, 3, stride=2)
    assert cols.shape == (4, 27)
    # columns group by channel first, then kernel row, then kernel column
    assert np.array_equal(cols[0, :9], x[0, 0, :3, :3].ravel())
    assert np.array_equal(cols[0, 9:18], x[0, 1, :3, :3].ravel())


def test_im2col_rejects_undersized_input():
    x = np.zeros((1, 1, 2, 2), dtype=np.float32)
    with pytest.raises(ShapeError):
        im2col(x, 3)


def test_gemm_against_loop_reference():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((7, 5)).astype(np.float32)
    b = rng.standard_normal((5, 3)).astype(np.float32)
    got = gemm(a, b)
    ref = np.zeros((7, 3))
    for i in range(7):
        for j in range(3):
            ref[i, j] = sum(float(a[i, l]) * float(b[l, j]) for l in range(5))
    assert np.max(np.abs(got - ref)) < 1e-5
    with pytest.raises(ShapeError):
        gemm(a, np.zeros((4, 3), dtype=np.float32))


def test_gemm_path_reproduces_naive():
    rng = np.random.default_rng(6)
    for _ in range(30):
        ci = int(rng.integers(1, 9))
        co = int(rng.integers(1, 9))
        k = int(rng.choice([1, 3, 5]))
        h = int(rng.integers(k, 15))
        w = int(rng.integers(k, 15))
        kern = ConvKernel(rng.standard_normal((co, ci, k, k)).astype(np.float32),
                          rng.standard_normal(co).astype(np.float32),
                          stride=int(rng.integers(1, 3)),
                          pad=int(rng.integers(0, 3)))
        x = rng.random((2, ci, h, w), dtype=np.float32)
        ref = conv2d_naive(x, kern)
        got = conv2d_gemm(x, kern)
        denom = max(float(np.max(np.abs(ref))), 1e-6)
        assert float(np.max(np.abs(got - ref))) / denom <= 1e-6


def test_winograd_reproduces_naive_for_3x3_stride1():
    rng = np.random.default_rng(7)
    for _ in range(30):
        ci = int(rng.integers(1, 7))
        co = int(rng.integers(1, 7))
        h = int(rng.integers(4, 14))
        w = int(rng.integers(4, 14))
        kern = ConvKernel(rng.standard_normal((co, ci, 3, 3)).astype(np.float32),
                          rng.standard_normal(co).astype(np.float32),
                          pad=int(rng.integers(0, 2)))
        x = rng.random((1, ci, h, w), dtype=np.float32)
        ref = conv2d_naive(x, kern)
        got = conv2d_winograd(x, kern)
        denom = max(float(np.max(np.abs(ref))), 1e-6)
        assert float(np.max(np.abs(got - ref))) / denom <= 1e-4


def test_winograd_exact_on_small_integers():
    # the transform constants are powers of two, so integer data stays exact
    rng = np.random.default_rng(8)
    x = rng.integers(-3, 4, (1, 2, 6, 6)).astype(np.float32)
    kern = ConvKernel(rng.integers(-3, 4, (2, 2, 3, 3)).astype(np.float32))
    assert np.array_equal(conv2d_winograd(x, kern), conv2d_naive(x, kern))


def test_winograd_falls_back_for_unsupported_geometry(caplog):
    rng = np.random.default_rng(9)
    x = rng.random((1, 2, 8, 8), dtype=np.float32)
    kern = ConvKernel(rng.standard_normal((2, 2, 5, 5)).astype(np.float32))
    with caplog.at_level(logging.INFO, logger="vsrkit.conv"):
        out = conv2d_winograd(x, kern)
    assert any("falling back" in rec.message for rec in caplog.records)
    assert np.array_equal(out, conv2d_gemm(x, kern))


def test_conv2d_rejects_unknown_backend():
    x = np.zeros((1, 1, 4, 4), dtype=np.float32)
    kern = ConvKernel(np.zeros((1, 1, 3, 3), dtype=np.float32))
    with pytest.raises(ValueError):
        conv2d(x, kern, "fft")


def test_conv_kernel_validates_geometry():
    with pytest.raises(ShapeError):
        ConvKernel(np.zeros((1, 1, 3, 2), dtype=np.float32))
    with pytest.raises(ShapeError):
        ConvKernel(np.zeros((1, 1, 3, 3), dtype=np.float32),
                   np.zeros(2, dtype=np.float32))
    with pytest.raises(ValueError):
        ConvKernel(np.zeros((1, 1, 3, 3), dtype=np.float32), stride=0)


def test_conv_transpose_shapes_scale_output():
    # 32->1 deconvolution, kernel 5, stride 3, pad 1 triples the grid
    rng = np.random.default_rng(11)
    kern = ConvKernel(rng.standard_normal((1, 32, 5, 5)).astype(np.float32) * 0.1,
                      stride=3, pad=1)
    x = rng.random((1, 32, 8, 8), dtype=np.float32)
    out = conv_transpose2d(x, kern, output_scale=3)
    assert out.shape == (1, 1, 24, 24)


def test_conv_transpose_is_adjoint_of_strided_conv():
    # <T x, y> == <x, D y> where D is the stride-s conv with the same taps
    # and channel axes swapped
    rng = np.random.default_rng(12)
    for _ in range(12):
        ci = int(rng.integers(1, 4))
        co = int(rng.integers(1, 4))
        s = int(rng.integers(1, 4))
        pad = int(rng.integers(0, 2))
        k = s + 2 * pad  # exact-scale geometry (zero output padding)
        h, w = int(rng.integers(3, 7)), int(rng.integers(3, 7))
        taps = rng.standard_normal((co, ci, k, k)).astype(np.float32)
        x = rng.random((1, ci, h, w), dtype=np.float32)
        tx = conv_transpose2d(x, ConvKernel(taps, pad=pad), output_scale=s)
        assert tx.shape == (1, co, h * s, w * s)
        y = rng.random(tx.shape, dtype=np.float32)
        down = ConvKernel(np.ascontiguousarray(taps.transpose(1, 0, 2, 3)),
                          stride=s, pad=pad)
        dy = conv2d_naive(y, down)
        assert dy.shape == x.shape
        lhs = float(np.sum(tx.astype(np.float64) * y))
        rhs = float(np.sum(x.astype(np.float64) * dy))
        assert abs(lhs - rhs) <= 1e-3 * max(abs(lhs), 1.0)


def test_conv_transpose_rejects_incompatible_geometry():
    kern = ConvKernel(np.zeros((1, 4, 3, 3), dtype=np.float32), stride=2, pad=2)
    x = np.zeros((1, 4, 5, 5), dtype=np.float32)
    # implied output padding 2*2 - 3 + 2*2 = 5 is not inside [0, stride)
    with pytest.raises(ShapeError):
        conv_transpose2d(x, kern, output_scale=2)


def test_maxpool2_window_oracle():
    x = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32).reshape(1, 1, 2, 2)
    assert float(maxpool2(x)[0, 0, 0, 0]) == 4.0
    rng = np.random.default_rng(13)
    t = rng.random((2, 3, 8, 8), dtype=np.float32)
    out = maxpool2(t)
    assert out.shape == (2, 3, 4, 4)
    for y in range(4):
        for x_ in range(4):
            ref = t[:, :, 2 * y:2 * y + 2, 2 * x_:2 * x_ + 2].max(axis=(2, 3))
            assert np.array_equal(out[:, :, y, x_], ref)


def test_maxpool2_pads_odd_dims_by_replication():
    t = np.arange(9, dtype=np.float32).reshape(1, 1, 3, 3)
    out = maxpool2(t)
    assert out.shape == (1, 1, 2, 2)
    # bottom-right output sees only the replicated corner value 8
    assert float(out[0, 0, 1, 1]) == 8.0


def test_activation_values():
    x = np.array([-10.0, -1.0, 0.0, 2.0], dtype=np.float32).reshape(1, 1, 1, 4)
    assert np.array_equal(activation(x, "relu").ravel(), [0.0, 0.0, 0.0, 2.0])
    got = activation(x, "leaky_relu", alpha=0.2)
    assert np.allclose(got.ravel(), [-2.0, -0.2, 0.0, 2.0], atol=1e-7)
    t = activation(x, "tanh", scale=24.0)
    assert np.allclose(t, 24.0 * np.tanh(x), atol=1e-5)
    assert np.allclose(activation(x, "tanh") + activation(-x, "tanh"), 0.0,
                       atol=1e-7)


def test_activation_rejects_unknown_kind():
    with pytest.raises(ValueError):
        activation(np.zeros((1, 1, 2, 2), dtype=np.float32), "gelu")
