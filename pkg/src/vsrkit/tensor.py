"""NCHW tensor primitives shared by every other module.

A "tensor" here is simply a 4-D ``numpy.ndarray`` of ``float32`` laid out as
(batch, channels, height, width). All operations are pure: they never mutate
their inputs and are safe to call concurrently.
"""
from __future__ import annotations

import numpy as np

DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when tensor shapes violate an operation's contract."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeError(msg)


def tensor_new(shape, fill=0.0) -> np.ndarray:
    """Create an NCHW tensor of the given shape.

    ``fill`` is either a scalar or a flat sequence of n*c*h*w values in
    n-major (then c, h, w) order.
    """
    shape = tuple(int(d) for d in shape)
    _require(len(shape) == 4, f"expected 4 dims (n,c,h,w), got {shape}")
    _require(all(d >= 1 for d in shape), f"all dims must be >= 1, got {shape}")
    if np.isscalar(fill):
        return np.full(shape, fill, dtype=DTYPE)
    data = np.asarray(fill, dtype=DTYPE).ravel()
    n_expected = int(np.prod(shape))
    _require(
        data.size == n_expected,
        f"value list has {data.size} elements, shape {shape} needs {n_expected}",
    )
    return data.reshape(shape).copy()


def check_tensor(t: np.ndarray, name: str = "tensor") -> np.ndarray:
    """Validate that ``t`` is a well-formed NCHW tensor and return it."""
    t = np.asarray(t)
    _require(t.ndim == 4, f"{name}: expected 4-D NCHW array, got {t.ndim}-D")
    _require(min(t.shape) >= 1, f"{name}: all dims must be >= 1, got {t.shape}")
    if t.dtype != DTYPE:
        t = t.astype(DTYPE)
    return t


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Concatenate two tensors along the channel axis (a's channels first)."""
    a = check_tensor(a, "a")
    b = check_tensor(b, "b")
    _require(
        a.shape[0] == b.shape[0] and a.shape[2:] == b.shape[2:],
        f"batch/spatial mismatch: {a.shape} vs {b.shape}",
    )
    return np.concatenate([a, b], axis=1)


def space_to_depth(t: np.ndarray, block: int) -> np.ndarray:
    """Fold each ``block x block`` spatial cell into channels.

    Output shape is (n, c*block^2, h/block, w/block). Exact inverse of
    :func:`pixel_shuffle` with the same block size: the sub-pixel at offset
    (dy, dx) lands in output channel c*block^2 + dy*block + dx.
    """
    t = check_tensor(t)
    block = int(block)
    _require(block >= 1, f"block must be >= 1, got {block}")
    n, c, h, w = t.shape
    _require(
        h % block == 0 and w % block == 0,
        f"spatial dims {h}x{w} not divisible by block {block}",
    )
    x = t.reshape(n, c, h // block, block, w // block, block)
    x = x.transpose(0, 1, 3, 5, 2, 4)  # n, c, dy, dx, h', w'
    return np.ascontiguousarray(x.reshape(n, c * block * block, h // block, w // block))


def pixel_shuffle(t: np.ndarray, r: int) -> np.ndarray:
    """Rearrange c*r^2 channels into an r-times larger spatial grid.

    Element at output (n, c', y*r+dy, x*r+dx) equals input
    (n, c'*r^2 + dy*r + dx, y, x).
    """
    t = check_tensor(t)
    r = int(r)
    _require(r >= 1, f"upscale factor must be >= 1, got {r}")
    n, c, h, w = t.shape
    _require(c % (r * r) == 0, f"channels {c} not divisible by r^2={r * r}")
    c_out = c // (r * r)
    x = t.reshape(n, c_out, r, r, h, w)
    x = x.transpose(0, 1, 4, 2, 5, 3)  # n, c', h, dy, w, dx
    return np.ascontiguousarray(x.reshape(n, c_out, h * r, w * r))


def pad_zero(t: np.ndarray, pad: int) -> np.ndarray:
    """Zero-pad the two spatial axes by ``pad`` on every side."""
    t = check_tensor(t)
    pad = int(pad)
    _require(pad >= 0, f"pad must be >= 0, got {pad}")
    if pad == 0:
        return t.copy()
    return np.pad(t, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def bilinear_resize(t: np.ndarray, scale: float) -> np.ndarray:
    """Bilinear resampling by an arbitrary positive scale factor.

    Uses the align-corners-false convention: output pixel i samples the
    source at (i + 0.5)/scale - 0.5, with reads clamped to the border.
    Output dims are round(h*scale) x round(w*scale).
    """
    t = check_tensor(t)
    scale = float(scale)
    _require(scale > 0, f"scale must be positive, got {scale}")
    n, c, h, w = t.shape
    oh = int(round(h * scale))
    ow = int(round(w * scale))
    _require(oh >= 1 and ow >= 1, f"output dims {oh}x{ow} must be >= 1")
    if oh == h and ow == w and scale == 1.0:
        return t.copy()

    sy = (np.arange(oh, dtype=np.float64) + 0.5) * (h / oh) - 0.5
    sx = (np.arange(ow, dtype=np.float64) + 0.5) * (w / ow) - 0.5
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    wy = (sy - y0).astype(DTYPE)
    wx = (sx - x0).astype(DTYPE)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)

    rows0 = t[:, :, y0c, :]
    rows1 = t[:, :, y1c, :]
    rows = rows0 * (1.0 - wy)[None, None, :, None] + rows1 * wy[None, None, :, None]
    out = (
        rows[:, :, :, x0c] * (1.0 - wx)[None, None, None, :]
        + rows[:, :, :, x1c] * wx[None, None, None, :]
    )
    return out.astype(DTYPE, copy=False)
