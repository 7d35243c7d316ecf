"""Convolution backends, pooling and activations.

Three interchangeable forward-convolution implementations are provided:

* :func:`conv2d_naive`   -- direct sliding-window cross-correlation, the
  reference every other backend is checked against;
* :func:`conv2d_gemm`    -- im2col rearrangement followed by one matrix
  multiplication (col2im is a plain reshape of the product);
* :func:`conv2d_winograd`-- minimal-filtering F(2x2,3x3) tiling, 16
  multiplications per output tile instead of 36.

All backends add the bias, return float32 NCHW tensors, and agree with the
naive reference within the tolerances stated on each function.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .tensor import DTYPE, ShapeError, check_tensor, pad_zero

log = logging.getLogger(__name__)

BACKENDS = ("naive", "gemm", "winograd")

# F(2x2,3x3) transform matrices: input (BT d B), filter (G g GT), output
# (AT m A). The element-wise product stage touches 4x4 = 16 values per tile
# where direct computation of the same 2x2 output needs 4*9 = 36 multiplies.
WINOGRAD_BT = np.array(
    [[1, 0, -1, 0],
     [0, 1, 1, 0],
     [0, -1, 1, 0],
     [0, 1, 0, -1]], dtype=DTYPE)
WINOGRAD_G = np.array(
    [[1, 0, 0],
     [0.5, 0.5, 0.5],
     [0.5, -0.5, 0.5],
     [0, 0, 1]], dtype=DTYPE)
WINOGRAD_AT = np.array(
    [[1, 1, 1, 0],
     [0, 1, -1, -1]], dtype=DTYPE)


@dataclass
class ConvKernel:
    """Weights and geometry of one 2-D convolution.

    ``weights`` has shape (c_out, c_in, k, k); ``bias`` has length c_out.
    """

    weights: np.ndarray
    bias: np.ndarray | None = None
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=DTYPE)
        if self.weights.ndim != 4 or self.weights.shape[2] != self.weights.shape[3]:
            raise ShapeError(
                f"weights must be (c_out, c_in, k, k), got {self.weights.shape}")
        if self.bias is None:
            self.bias = np.zeros(self.weights.shape[0], dtype=DTYPE)
        self.bias = np.asarray(self.bias, dtype=DTYPE).ravel()
        if self.bias.size != self.weights.shape[0]:
            raise ShapeError(
                f"bias length {self.bias.size} != c_out {self.weights.shape[0]}")
        if self.k < 1 or self.stride < 1 or self.pad < 0:
            raise ShapeError(
                f"invalid geometry k={self.k} stride={self.stride} pad={self.pad}")

    @property
    def c_out(self) -> int:
        return self.weights.shape[0]

    @property
    def c_in(self) -> int:
        return self.weights.shape[1]

    @property
    def k(self) -> int:
        return self.weights.shape[2]


def out_dims(h: int, w: int, k: int, stride: int, pad: int) -> tuple[int, int]:
    """Spatial output dims of a convolution: floor((d + 2*pad - k)/stride) + 1."""
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"conv geometry gives empty output for input {h}x{w}, "
            f"k={k} stride={stride} pad={pad}")
    return oh, ow


def _check_conv_input(x: np.ndarray, kern: ConvKernel) -> np.ndarray:
    x = check_tensor(x, "conv input")
    if x.shape[1] != kern.c_in:
        raise ShapeError(
            f"input has {x.shape[1]} channels, kernel expects {kern.c_in}")
    return x


def conv2d_naive(x: np.ndarray, kern: ConvKernel) -> np.ndarray:
    """Direct sliding-window cross-correlation plus bias.

    The textbook loop nest over (c_out, c_in, ky, kx) with one scalar weight
    applied per iteration; accumulation runs in float64 in fixed
    channel-major order, making this the reference oracle for the gemm and
    winograd backends. Slow by design; use those for real workloads.
    """
    x = _check_conv_input(x, kern)
    n, _, h, w = x.shape
    k, s, p = kern.k, kern.stride, kern.pad
    oh, ow = out_dims(h, w, k, s, p)
    xp = pad_zero(x, p).astype(np.float64)
    wts = kern.weights.astype(np.float64)
    ye = (oh - 1) * s + 1
    xe = (ow - 1) * s + 1
    out = np.zeros((n, kern.c_out, oh, ow), dtype=np.float64)
    for co in range(kern.c_out):
        for ky in range(k):
            for kx in range(k):
                window = xp[:, :, ky:ky + ye:s, kx:kx + xe:s]
                out[:, co] += np.einsum("nihw,i->nhw", window,
                                        wts[co, :, ky, kx])
    out += kern.bias.astype(np.float64)[None, :, None, None]
    return out.astype(DTYPE)


def im2col(x: np.ndarray, k: int, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Rearrange convolution receptive fields into matrix rows.

    Row r holds the flattened (c_in*k*k) receptive field of activation zone
    r, zones enumerated top-left to bottom-right. Pure data movement, no
    arithmetic. A 4x4 single-channel input with k=3, stride 1 yields a 4x9
    matrix.
    """
    x = check_tensor(x, "im2col input")
    if x.shape[0] != 1:
        raise ShapeError(f"im2col expects a single image (n=1), got n={x.shape[0]}")
    k, stride, pad = int(k), int(stride), int(pad)
    if k < 1 or stride < 1 or pad < 0:
        raise ShapeError(f"invalid geometry k={k} stride={stride} pad={pad}")
    _, c, h, w = x.shape
    oh, ow = out_dims(h, w, k, stride, pad)
    xp = pad_zero(x, pad)[0]
    # windows: (c, oh, ow, k, k) strided view over the padded image
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, ::stride, ::stride]
    cols = win.transpose(1, 2, 0, 3, 4).reshape(oh * ow, c * k * k)
    return np.ascontiguousarray(cols)


def gemm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of two 2-D arrays.

    Delegates to numpy's BLAS-backed matmul; the result is deterministic for
    a given process configuration and independent of how the library blocks
    the computation internally.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"gemm expects 2-D matrices, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dims differ: {a.shape} x {b.shape}")
    return a @ b


def conv2d_gemm(x: np.ndarray, kern: ConvKernel) -> np.ndarray:
    """Convolution as im2col followed by one matrix multiplication.

    Each filter is straightened into a length c_in*k*k column; the product
    against the im2col matrix, reshaped back to the output grid (the inverse
    col2im step is a plain reshape because rows already enumerate spatial
    positions), equals :func:`conv2d_naive` within 1e-6 relative.
    """
    x = _check_conv_input(x, kern)
    n, _, h, w = x.shape
    oh, ow = out_dims(h, w, kern.k, kern.stride, kern.pad)
    wmat = kern.weights.reshape(kern.c_out, -1).T  # (c_in*k*k, c_out)
    out = np.empty((n, kern.c_out, oh, ow), dtype=DTYPE)
    for b in range(n):
        cols = im2col(x[b:b + 1], kern.k, kern.stride, kern.pad)
        prod = gemm(cols, wmat)  # (oh*ow, c_out)
        out[b] = prod.T.reshape(kern.c_out, oh, ow)
    out += kern.bias[None, :, None, None]
    return out


def conv2d_winograd(x: np.ndarray, kern: ConvKernel) -> np.ndarray:
    """F(2x2,3x3) minimal-filtering convolution.

    Requires k=3 and stride 1; any other geometry falls back to
    :func:`conv2d_gemm` (reported on the backend-selection log). The input
    is split into 4x4 tiles at stride 2, transformed, multiplied
    element-wise against transformed filters, and inverse-transformed into
    2x2 output tiles; ragged edges are zero-extended then cropped. Agrees
    with :func:`conv2d_naive` within 1e-4 relative.
    """
    x = _check_conv_input(x, kern)
    if kern.k != 3 or kern.stride != 1:
        log.info("winograd backend: k=%d stride=%d unsupported, falling back to gemm",
                 kern.k, kern.stride)
        return conv2d_gemm(x, kern)
    n, ci, h, w = x.shape
    oh, ow = out_dims(h, w, 3, 1, kern.pad)
    xp = pad_zero(x, kern.pad)

    th = (oh + 1) // 2
    tw = (ow + 1) // 2
    # each 4x4 tile at stride 2 reads rows up to 2*(t-1)+4 = 2t+2
    need_h, need_w = 2 * th + 2, 2 * tw + 2
    ph = need_h - xp.shape[2]
    pw = need_w - xp.shape[3]
    if ph > 0 or pw > 0:
        xp = np.pad(xp, ((0, 0), (0, 0), (0, max(ph, 0)), (0, max(pw, 0))))

    tiles = np.lib.stride_tricks.sliding_window_view(xp, (4, 4), axis=(2, 3))
    tiles = tiles[:, :, ::2, ::2]  # (n, ci, th, tw, 4, 4)

    bt = WINOGRAD_BT
    v = np.einsum("ai,nctuij,bj->nctuab", bt, tiles, bt, optimize=True)
    g = WINOGRAD_G
    u = np.einsum("ai,ocij,bj->ocab", g, kern.weights, g, optimize=True)

    # Hadamard stage as 16 small matmuls: (th*tw*n, ci) @ (ci, co) per (a,b)
    v2 = v.transpose(4, 5, 0, 2, 3, 1).reshape(16, n * th * tw, ci)
    u2 = u.transpose(2, 3, 1, 0).reshape(16, ci, kern.c_out)
    m2 = np.matmul(v2, u2)  # (16, n*th*tw, co)
    m = m2.reshape(4, 4, n, th, tw, kern.c_out).transpose(2, 5, 3, 4, 0, 1)

    at = WINOGRAD_AT
    y = np.einsum("ai,nctuij,bj->nctuab", at, m, at, optimize=True)
    y = y.transpose(0, 1, 2, 4, 3, 5).reshape(n, kern.c_out, 2 * th, 2 * tw)
    out = np.ascontiguousarray(y[:, :, :oh, :ow], dtype=DTYPE)
    out += kern.bias[None, :, None, None]
    return out


_CONV_DISPATCH = {
    "naive": conv2d_naive,
    "gemm": conv2d_gemm,
    "winograd": conv2d_winograd,
}


def conv2d(x: np.ndarray, kern: ConvKernel, backend: str = "gemm") -> np.ndarray:
    """Run a convolution through the named backend."""
    try:
        fn = _CONV_DISPATCH[backend]
    except KeyError:
        raise ValueError(f"unknown conv backend {backend!r}, choose from {BACKENDS}")
    return fn(x, kern)


def conv_transpose2d(x: np.ndarray, kern: ConvKernel, output_scale: int) -> np.ndarray:
    """Transposed convolution producing an exactly ``output_scale``-times
    larger output.

    This is the adjoint of the corresponding strided convolution: input
    element (oy, ox) scatters weights[c_out, c_in] into output positions
    (oy*s + ky - pad, ox*s + kx - pad). The geometry must satisfy
    0 <= s - k + 2*pad < s so the output lands on exactly (h*s, w*s).
    """
    x = _check_conv_input(x, kern)
    s = int(output_scale)
    if s < 1:
        raise ShapeError(f"output scale must be >= 1, got {s}")
    k, p = kern.k, kern.pad
    opad = s - k + 2 * p
    if not 0 <= opad < s:
        raise ShapeError(
            f"transposed conv k={k} pad={p} cannot produce an exact x{s} "
            f"output (implied output padding {opad})")
    n, _, h, w = x.shape
    oh, ow = h * s, w * s
    out = np.zeros((n, kern.c_out, oh, ow), dtype=DTYPE)
    # scatter-add one (ky, kx) tap at a time, vectorized over the input grid
    for ky in range(k):
        for kx in range(k):
            contrib = np.einsum("nihw,oi->nohw", x, kern.weights[:, :, ky, kx])
            y0, x0 = ky - p, kx - p
            # input rows iy map to output rows iy*s + y0; keep those in range
            iy = np.arange(h)
            ix = np.arange(w)
            my = (iy * s + y0 >= 0) & (iy * s + y0 < oh)
            mx = (ix * s + x0 >= 0) & (ix * s + x0 < ow)
            if not my.any() or not mx.any():
                continue
            oy = iy[my] * s + y0
            ox = ix[mx] * s + x0
            out[:, :, oy[0]:oy[-1] + 1:s, ox[0]:ox[-1] + 1:s] += (
                contrib[:, :, my][:, :, :, mx])
    out += kern.bias[None, :, None, None]
    return out


def maxpool2(x: np.ndarray) -> np.ndarray:
    """2x2 max pooling with stride 2.

    Odd spatial dims are padded on the right/bottom by edge replication,
    which is equivalent to padding with negative infinity for a max window.
    """
    x = check_tensor(x, "maxpool input")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        x = np.pad(x, ((0, 0), (0, 0), (0, h % 2), (0, w % 2)), mode="edge")
        n, c, h, w = x.shape
    v = x.reshape(n, c, h // 2, 2, w // 2, 2)
    return v.max(axis=(3, 5))


def activation(x: np.ndarray, kind: str, alpha: float = 0.2,
               scale: float = 1.0) -> np.ndarray:
    """Element-wise activation: relu, leaky_relu (slope ``alpha``) or tanh.

    ``scale`` multiplies the result; it matters only for tanh heads that
    must emit values in a configured range.
    """
    x = check_tensor(x, "activation input")
    if kind == "relu":
        out = np.maximum(x, 0)
    elif kind == "leaky_relu":
        out = np.where(x >= 0, x, DTYPE(alpha) * x)
    elif kind == "tanh":
        out = np.tanh(x)
    else:
        raise ValueError(f"unknown activation {kind!r}")
    if scale != 1.0:
        out = out * DTYPE(scale)
    return out.astype(DTYPE, copy=False)
