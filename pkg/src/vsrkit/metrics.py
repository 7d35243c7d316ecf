"""Image and video quality metrics.

Spatial fidelity: PSNR and SSIM on the luma plane of [0, 1] RGB frames.
Temporal consistency: tOF compares motion fields estimated from consecutive
reference frames against those from the corresponding output frames; tLP
does the same with a perceptual frame-pair distance. A min-max normalized,
weighted combination folds all four into one score per method.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .conv import ConvKernel, conv2d
from .pipeline import warp
from .tensor import DTYPE, ShapeError

# ITU-R 601 luma weights
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

PSNR_CAP_DB = 100.0

# metric orientation: whether larger values mean better output
HIGHER_IS_BETTER = {"psnr": True, "ssim": True, "tof": False, "tlp": False}


def luma(frame: np.ndarray) -> np.ndarray:
    """Collapse (..., c, h, w) RGB to (..., h, w) luma; gray passes through."""
    frame = np.asarray(frame, dtype=np.float64)
    c = frame.shape[-3]
    if c == 1:
        return frame[..., 0, :, :]
    if c != 3:
        raise ShapeError(f"expected 1 or 3 channels, got {c}")
    r, g, b = (frame[..., i, :, :] for i in range(3))
    return LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b


def _check_pair(ref, test):
    ref = np.asarray(ref)
    test = np.asarray(test)
    if ref.shape != test.shape:
        raise ShapeError(f"frame shapes differ: {ref.shape} vs {test.shape}")
    return ref, test


def psnr(ref: np.ndarray, test: np.ndarray) -> float:
    """Luma PSNR in dB for [0, 1] frames, capped at 100 for exact matches."""
    ref, test = _check_pair(ref, test)
    err = luma(ref) - luma(test)
    mse = float(np.mean(err * err))
    if mse <= 1e-10:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP_DB)


SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def ssim(ref: np.ndarray, test: np.ndarray) -> float:
    """Mean structural similarity on luma, 11x11 Gaussian window, sigma 1.5.

    Border pixels whose window would leave the image are excluded, which
    matches the classical valid-window formulation.
    """
    ref, test = _check_pair(ref, test)
    x = luma(ref)
    y = luma(test)
    r = SSIM_WINDOW // 2
    if min(x.shape[-2:]) < SSIM_WINDOW:
        raise ShapeError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} "
                         f"analysis window: {x.shape[-2:]}")
    # truncate = r/sigma makes gaussian_filter use exactly an 11-tap kernel
    blur = lambda im: ndimage.gaussian_filter(im, SSIM_SIGMA,
                                              truncate=r / SSIM_SIGMA)
    mx = blur(x)
    my = blur(y)
    mxx = blur(x * x) - mx * mx
    myy = blur(y * y) - my * my
    mxy = blur(x * y) - mx * my
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    num = (2 * mx * my + c1) * (2 * mxy + c2)
    den = (mx * mx + my * my + c1) * (mxx + myy + c2)
    smap = num / den
    interior = smap[..., r:-r, r:-r]
    return float(np.mean(interior))


# ---------------------------------------------------------------------------
# dense motion estimation (pyramidal Lucas-Kanade)

LK_WINDOW = 7
LK_LEVELS = 3
LK_ITERS = 3
LK_DET_EPS = 1e-9
LK_MAX_DISP = 64.0


@dataclass
class FlowResult:
    """Dense flow (2, h, w) in pixels plus a texture-degeneracy fraction."""

    flow: np.ndarray
    degenerate_fraction: float


def _downsample2(im: np.ndarray) -> np.ndarray:
    return ndimage.gaussian_filter(im, 1.0)[::2, ::2]


def _lk_level(a: np.ndarray, b: np.ndarray, flow: np.ndarray) -> tuple:
    """Refine flow at one pyramid level; returns (flow, degenerate mask)."""
    h, w = a.shape
    degenerate = np.zeros((h, w), dtype=bool)
    for _ in range(LK_ITERS):
        bw = warp(b[None, None].astype(DTYPE),
                  flow[None].astype(DTYPE))[0, 0].astype(np.float64)
        gy, gx = np.gradient(bw)
        it = bw - a
        sxx = ndimage.uniform_filter(gx * gx, LK_WINDOW)
        syy = ndimage.uniform_filter(gy * gy, LK_WINDOW)
        sxy = ndimage.uniform_filter(gx * gy, LK_WINDOW)
        sxt = ndimage.uniform_filter(gx * it, LK_WINDOW)
        syt = ndimage.uniform_filter(gy * it, LK_WINDOW)
        det = sxx * syy - sxy * sxy
        degenerate = det < LK_DET_EPS
        safe = np.where(degenerate, 1.0, det)
        du = np.where(degenerate, 0.0, -(syy * sxt - sxy * syt) / safe)
        dv = np.where(degenerate, 0.0, -(sxx * syt - sxy * sxt) / safe)
        flow = flow + np.stack([du, dv])
        flow = np.clip(flow, -LK_MAX_DISP, LK_MAX_DISP)
    return flow, degenerate


def dense_flow(a: np.ndarray, b: np.ndarray) -> FlowResult:
    """Estimate per-pixel displacement f with a(p) ~ b(p + f(p)).

    Coarse-to-fine Lucas-Kanade over a 3-level pyramid with 7x7 windows.
    Window systems with a near-singular structure tensor (flat texture)
    contribute zero update and are reported via ``degenerate_fraction``.
    """
    a, b = _check_pair(a, b)
    ga = luma(a) if a.ndim == 3 else np.asarray(a, dtype=np.float64)
    gb = luma(b) if b.ndim == 3 else np.asarray(b, dtype=np.float64)
    levels = LK_LEVELS
    while levels > 1 and min(ga.shape) // 2 ** (levels - 1) < 2 * LK_WINDOW:
        levels -= 1
    pyr_a = [ga]
    pyr_b = [gb]
    for _ in range(levels - 1):
        pyr_a.append(_downsample2(pyr_a[-1]))
        pyr_b.append(_downsample2(pyr_b[-1]))
    flow = np.zeros((2,) + pyr_a[-1].shape)
    degenerate = np.zeros(pyr_a[-1].shape, dtype=bool)
    for lvl in range(levels - 1, -1, -1):
        if lvl != levels - 1:
            target = pyr_a[lvl].shape
            flow = 2.0 * _resize_flow(flow, target)
        flow, degenerate = _lk_level(pyr_a[lvl], pyr_b[lvl], flow)
    return FlowResult(flow=flow.astype(DTYPE),
                      degenerate_fraction=float(np.mean(degenerate)))


def _resize_flow(flow: np.ndarray, target: tuple) -> np.ndarray:
    th, tw = target
    h, w = flow.shape[1:]
    ys = (np.arange(th) + 0.5) * (h / th) - 0.5
    xs = (np.arange(tw) + 0.5) * (w / tw) - 0.5
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    out = np.empty((2, th, tw))
    for ch in range(2):
        y0 = np.floor(ys).astype(int)
        y1 = np.minimum(y0 + 1, h - 1)
        fy = (ys - y0)[:, None]
        rows = flow[ch][y0] * (1 - fy) + flow[ch][y1] * fy
        x0 = np.floor(xs).astype(int)
        x1 = np.minimum(x0 + 1, w - 1)
        fx = xs - x0
        out[ch] = rows[:, x0] * (1 - fx) + rows[:, x1] * fx
    return out


def _check_sequences(gen, ref):
    gen = np.asarray(gen, dtype=DTYPE)
    ref = np.asarray(ref, dtype=DTYPE)
    if gen.ndim != 4 or ref.ndim != 4:
        raise ShapeError("sequences must be (t, c, h, w)")
    if gen.shape != ref.shape:
        raise ShapeError(f"sequence shapes differ: {gen.shape} vs {ref.shape}")
    if gen.shape[0] < 2:
        raise ShapeError("temporal metrics need at least 2 frames")
    return gen, ref


def tof(gen: np.ndarray, ref: np.ndarray) -> float:
    """Temporal flow error: mean L1 gap between the motion estimated from
    consecutive generated frames and from the corresponding reference frames."""
    gen, ref = _check_sequences(gen, ref)
    gaps = []
    for t in range(1, gen.shape[0]):
        fg = dense_flow(gen[t - 1], gen[t]).flow
        fr = dense_flow(ref[t - 1], ref[t]).flow
        gaps.append(float(np.mean(np.abs(fg - fr))))
    return float(np.mean(gaps))


# ---------------------------------------------------------------------------
# perceptual frame-pair distance

class RandomFeatureDistance:
    """Deterministic perceptual distance from a fixed random conv stack.

    Three stride-2 conv+relu stages with seed-pinned weights provide a
    stable multi-scale feature space; the distance is the mean over stages
    of the magnitude-normalized L1 feature difference. Any object with the
    same ``distance(a, b) -> float`` signature can stand in for it.
    """

    WIDTHS = (8, 16, 24)

    def __init__(self, seed: int = 2024):
        rng = np.random.default_rng(seed)
        self.name = f"random-conv-{'x'.join(map(str, self.WIDTHS))}-seed{seed}"
        self.kernels = []
        c_in = 3
        for c_out in self.WIDTHS:
            std = math.sqrt(2.0 / (c_in * 9))
            w = rng.normal(0.0, std, (c_out, c_in, 3, 3)).astype(DTYPE)
            self.kernels.append(ConvKernel(w, stride=2, pad=1))
            c_in = c_out

    def _features(self, frame: np.ndarray) -> list:
        x = np.asarray(frame, dtype=DTYPE)
        if x.ndim != 3:
            raise ShapeError(f"expected one (c, h, w) frame, got {x.shape}")
        if x.shape[0] == 1:
            x = np.repeat(x, 3, axis=0)
        x = x[None]
        feats = []
        for kern in self.kernels:
            x = np.maximum(conv2d(x, kern, "gemm"), 0.0)
            feats.append(x)
        return feats

    def distance(self, a: np.ndarray, b: np.ndarray) -> float:
        fa = self._features(a)
        fb = self._features(b)
        parts = []
        for xa, xb in zip(fa, fb):
            diff = float(np.mean(np.abs(xa - xb)))
            norm = float(np.mean(np.abs(xa)) + np.mean(np.abs(xb))) + 1e-8
            parts.append(diff / norm)
        return float(np.mean(parts))


_default_pd = None


def default_perceptual_distance() -> RandomFeatureDistance:
    global _default_pd
    if _default_pd is None:
        _default_pd = RandomFeatureDistance()
    return _default_pd


def tlp(gen: np.ndarray, ref: np.ndarray, pd=None) -> float:
    """Temporal perceptual error: for each consecutive pair, the perceptual
    distance of the generated pair minus that of the reference pair, averaged
    as absolute values over the sequence."""
    gen, ref = _check_sequences(gen, ref)
    if pd is None:
        pd = default_perceptual_distance()
    gaps = []
    for t in range(1, gen.shape[0]):
        lp_gen = pd.distance(gen[t - 1], gen[t])
        lp_ref = pd.distance(ref[t - 1], ref[t])
        gaps.append(abs(lp_gen - lp_ref))
    return float(np.mean(gaps))


# ---------------------------------------------------------------------------
# score aggregation

@dataclass
class MetricRecord:
    """One raw metric value together with its dataset-wide value range.

    ``higher_better`` defaults from the metric name for the four built-in
    metrics; custom metrics must state their orientation explicitly.
    ``degenerate`` is set by :func:`normalize_metric` when the range is flat.
    """

    metric: str
    value: float
    m_min: float
    m_max: float
    higher_better: bool | None = None
    method: str = ""
    degenerate: bool = False

    def __post_init__(self):
        if self.higher_better is None:
            if self.metric not in HIGHER_IS_BETTER:
                raise ValueError(f"metric {self.metric!r} has no known "
                                 f"orientation; pass higher_better explicitly")
            self.higher_better = HIGHER_IS_BETTER[self.metric]
        if not self.m_min <= self.value <= self.m_max:
            raise ValueError(f"{self.metric}: value {self.value} outside "
                             f"range [{self.m_min}, {self.m_max}]")


def normalize_metric(rec: MetricRecord) -> float:
    """Min-max rescale of one record to [0, 1] where larger means worse.

    Lower-is-better metrics map as (v - min)/(max - min); higher-is-better
    metrics are negated first, giving (max - v)/(max - min), so 0 is always
    the best method. A flat range normalizes to 0.0 and flags the record as
    degenerate instead of raising.
    """
    span = rec.m_max - rec.m_min
    if span <= 0:
        rec.degenerate = True
        return 0.0
    if rec.higher_better:
        return (rec.m_max - rec.value) / span
    return (rec.value - rec.m_min) / span


@dataclass
class ScoreWeights:
    """Per-metric combination weights; non-negative, summing to 1."""

    weights: dict

    def __post_init__(self):
        self.weights = {k: float(v) for k, v in self.weights.items()}
        if any(v < 0 for v in self.weights.values()):
            raise ValueError("weights must be non-negative")
        total = sum(self.weights.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {total!r}")

    @classmethod
    def equal(cls, metrics) -> "ScoreWeights":
        metrics = list(metrics)
        return cls({m: 1.0 / len(metrics) for m in metrics})


DEFAULT_METRICS = ("psnr", "ssim", "tof", "tlp")


def quality_score(records: list, weights: ScoreWeights | None = None) -> float:
    """Unified score 1 - sum_i w_i * normalized_i for one method's records.

    Requires exactly one record per weighted metric. Higher is better: a
    method that is best on every metric scores 1, worst on every metric
    scores 0 (with weights summing to 1).
    """
    if not records:
        raise ValueError("no metric records given")
    if weights is None:
        weights = ScoreWeights.equal([r.metric for r in records])
    have = sorted(r.metric for r in records)
    want = sorted(weights.weights)
    if have != want:
        raise ValueError(f"records cover metrics {have}, weights cover {want}")
    return 1.0 - sum(weights.weights[r.metric] * normalize_metric(r)
                     for r in records)


def score_table(table: dict, weights: ScoreWeights | None = None) -> dict:
    """Scores for several methods from a {method: {metric: value}} table.

    The per-metric value range is taken across the methods in the table, as
    the normalization is only meaningful relative to a method population.
    """
    methods = sorted(table)
    if not methods:
        raise ValueError("empty metric table")
    metrics = sorted(table[methods[0]])
    for m in methods:
        if sorted(table[m]) != metrics:
            raise ValueError(f"method {m!r} reports metrics "
                             f"{sorted(table[m])}, expected {metrics}")
    ranges = {k: (min(table[m][k] for m in methods),
                  max(table[m][k] for m in methods)) for k in metrics}
    scores = {}
    for m in methods:
        recs = [MetricRecord(k, table[m][k], ranges[k][0], ranges[k][1],
                             method=m) for k in metrics]
        scores[m] = quality_score(recs, weights)
    return scores


def evaluate_sequence(gen: np.ndarray, ref: np.ndarray, pd=None) -> dict:
    """All four metrics for one generated sequence against its reference."""
    gen, ref = _check_sequences(gen, ref)
    frame_psnr = [psnr(gen[t], ref[t]) for t in range(gen.shape[0])]
    frame_ssim = [ssim(gen[t], ref[t]) for t in range(gen.shape[0])]
    return {
        "psnr": float(np.mean(frame_psnr)),
        "ssim": float(np.mean(frame_ssim)),
        "tof": tof(gen, ref),
        "tlp": tlp(gen, ref, pd=pd),
        "per_frame_psnr": frame_psnr,
        "per_frame_ssim": frame_ssim,
    }
