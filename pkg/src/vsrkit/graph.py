"""Layer graphs: representation, forward execution, batch-norm fusion and
parameter/MAC accounting.

A :class:`NetworkGraph` is an ordered list of layers executed sequentially.
Skip connections are expressed by ``residual_add`` / ``concat`` layers that
reference an earlier layer's output by name. Channel compatibility and
weight shapes are validated eagerly at construction; spatial constraints
are checked when an actual input size is known (forward or cost analysis).

Graphs are immutable by convention after construction: the fusion pass and
every other transform returns a new graph and never mutates its input.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import conv as convops
from . import tensor as tops
from .conv import ConvKernel
from .tensor import DTYPE, ShapeError

log = logging.getLogger(__name__)

LAYER_KINDS = (
    "conv2d",
    "conv_transpose2d",
    "batch_norm",
    "activation",
    "maxpool2",
    "bilinear_up",
    "pixel_shuffle",
    "space_to_depth",
    "concat",
    "residual_add",
    "interpolation_resize",
)


class GraphError(ValueError):
    """Raised for malformed graphs or execution failures (names the layer)."""


@dataclass
class Layer:
    """One graph node: a kind tag, scalar attributes, and weight arrays."""

    kind: str
    name: str
    attrs: dict = field(default_factory=dict)
    arrays: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise GraphError(f"unknown layer kind {self.kind!r}")
        for key, arr in self.arrays.items():
            self.arrays[key] = np.asarray(arr, dtype=DTYPE)

    def copy(self) -> "Layer":
        return Layer(self.kind, self.name, dict(self.attrs),
                     {k: v.copy() for k, v in self.arrays.items()})

    def param_count(self) -> int:
        """Stored parameter elements (weights, biases, per-channel stats)."""
        if self.kind in ("conv2d", "conv_transpose2d", "batch_norm"):
            return int(sum(a.size for a in self.arrays.values()))
        return 0


@dataclass
class BatchNormParams:
    """Inference-mode batch-norm parameters for one channel axis.

    ``frozen`` marks the statistics as fixed running estimates; fusion is
    only valid in that regime.
    """

    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = 1e-5
    frozen: bool = True

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=DTYPE).ravel()
        self.beta = np.asarray(self.beta, dtype=DTYPE).ravel()
        self.mean = np.asarray(self.mean, dtype=DTYPE).ravel()
        self.var = np.asarray(self.var, dtype=DTYPE).ravel()
        c = self.gamma.size
        if not (self.beta.size == self.mean.size == self.var.size == c):
            raise ShapeError("batch-norm parameter arrays must share one length")
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if np.any(self.var < 0):
            raise ValueError("variance must be non-negative")

    @property
    def channels(self) -> int:
        return self.gamma.size


# ---------------------------------------------------------------------------
# layer constructors

def conv2d_layer(name, c_in, c_out, k, stride=1, pad=None,
                 weights=None, bias=None) -> Layer:
    """3x3-style convolution layer; ``pad`` defaults to k//2 ("same")."""
    if pad is None:
        pad = k // 2
    if weights is None:
        weights = np.zeros((c_out, c_in, k, k), dtype=DTYPE)
    if bias is None:
        bias = np.zeros(c_out, dtype=DTYPE)
    return Layer("conv2d", name,
                 {"c_in": int(c_in), "c_out": int(c_out), "k": int(k),
                  "stride": int(stride), "pad": int(pad)},
                 {"weight": weights, "bias": bias})


def conv_transpose2d_layer(name, c_in, c_out, k, scale, pad,
                           weights=None, bias=None) -> Layer:
    if weights is None:
        weights = np.zeros((c_out, c_in, k, k), dtype=DTYPE)
    if bias is None:
        bias = np.zeros(c_out, dtype=DTYPE)
    return Layer("conv_transpose2d", name,
                 {"c_in": int(c_in), "c_out": int(c_out), "k": int(k),
                  "scale": int(scale), "pad": int(pad)},
                 {"weight": weights, "bias": bias})


def batch_norm_layer(name, c, params: BatchNormParams | None = None,
                     eps: float = 1e-5, frozen: bool = True) -> Layer:
    if params is None:
        params = BatchNormParams(np.ones(c), np.zeros(c), np.zeros(c),
                                 np.ones(c), eps=eps, frozen=frozen)
    if params.channels != c:
        raise ShapeError(f"batch-norm params for {params.channels} channels, "
                         f"layer declares {c}")
    return Layer("batch_norm", name,
                 {"c": int(c), "eps": float(params.eps),
                  "frozen": bool(params.frozen)},
                 {"gamma": params.gamma, "beta": params.beta,
                  "mean": params.mean, "var": params.var})


def activation_layer(name, kind, alpha: float = 0.2, scale: float = 1.0) -> Layer:
    if kind not in ("relu", "leaky_relu", "tanh"):
        raise GraphError(f"unknown activation {kind!r}")
    return Layer("activation", name,
                 {"fn": kind, "alpha": float(alpha), "scale": float(scale)})


def maxpool2_layer(name) -> Layer:
    return Layer("maxpool2", name)


def bilinear_up_layer(name, scale: float = 2.0) -> Layer:
    return Layer("bilinear_up", name, {"scale": float(scale)})


def resize_layer(name, scale: float) -> Layer:
    return Layer("interpolation_resize", name, {"scale": float(scale)})


def pixel_shuffle_layer(name, r: int) -> Layer:
    return Layer("pixel_shuffle", name, {"r": int(r)})


def space_to_depth_layer(name, block: int) -> Layer:
    return Layer("space_to_depth", name, {"block": int(block)})


def concat_layer(name, source: str) -> Layer:
    return Layer("concat", name, {"source": source})


def residual_add_layer(name, source: str) -> Layer:
    return Layer("residual_add", name, {"source": source})


# ---------------------------------------------------------------------------
# batch-norm math

def batchnorm_forward(x: np.ndarray, p: BatchNormParams) -> np.ndarray:
    """Per-channel affine map gamma*(x - mean)/sqrt(var + eps) + beta."""
    x = tops.check_tensor(x, "batch-norm input")
    if x.shape[1] != p.channels:
        raise ShapeError(f"input has {x.shape[1]} channels, "
                         f"batch-norm params have {p.channels}")
    inv = p.gamma.astype(np.float64) / np.sqrt(p.var.astype(np.float64) + p.eps)
    shift = p.beta.astype(np.float64) - p.mean.astype(np.float64) * inv
    out = x * inv.astype(DTYPE)[None, :, None, None]
    out += shift.astype(DTYPE)[None, :, None, None]
    return out


def bn_to_1x1(p: BatchNormParams) -> ConvKernel:
    """Express a frozen batch-norm as a diagonal 1x1 convolution.

    Channel c gets weight gamma_c/sqrt(var_c + eps) on the diagonal and
    bias beta_c - gamma_c*mean_c/sqrt(var_c + eps).
    """
    c = p.channels
    inv = p.gamma.astype(np.float64) / np.sqrt(p.var.astype(np.float64) + p.eps)
    weights = np.zeros((c, c, 1, 1), dtype=DTYPE)
    weights[np.arange(c), np.arange(c), 0, 0] = inv.astype(DTYPE)
    bias = (p.beta.astype(np.float64) - p.mean.astype(np.float64) * inv).astype(DTYPE)
    return ConvKernel(weights, bias, stride=1, pad=0)


def _bn_params_of(layer: Layer) -> BatchNormParams:
    return BatchNormParams(layer.arrays["gamma"], layer.arrays["beta"],
                           layer.arrays["mean"], layer.arrays["var"],
                           eps=layer.attrs["eps"],
                           frozen=bool(layer.attrs.get("frozen", True)))


# ---------------------------------------------------------------------------
# the graph

@dataclass
class NetworkGraph:
    """Ordered layers plus the input channel contract and free-form metadata."""

    layers: list
    in_channels: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.in_channels = int(self.in_channels)
        if self.in_channels < 1:
            raise GraphError(f"in_channels must be >= 1, got {self.in_channels}")
        names = [ly.name for ly in self.layers]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise GraphError(f"duplicate layer names: {dup}")
        self._validate_channels()

    # -- static validation ---------------------------------------------------

    def _validate_channels(self) -> None:
        """Channel-flow inference over the layer list; raises naming the layer."""
        seen: dict[str, int] = {}
        c = self.in_channels
        for i, ly in enumerate(self.layers):
            try:
                c = self._infer_channels(ly, c, seen)
            except (ShapeError, KeyError, GraphError) as e:
                raise GraphError(
                    f"layer {i} ({ly.name!r}, {ly.kind}): {e}") from e
            seen[ly.name] = c
        self._out_channels = c

    @staticmethod
    def _infer_channels(ly: Layer, c: int, seen: dict[str, int]) -> int:
        a = ly.attrs
        if ly.kind in ("conv2d", "conv_transpose2d"):
            if a["c_in"] != c:
                raise ShapeError(f"expects {a['c_in']} input channels, gets {c}")
            w = ly.arrays["weight"]
            want = (a["c_out"], a["c_in"], a["k"], a["k"])
            if tuple(w.shape) != want:
                raise ShapeError(f"weight shape {w.shape} != declared {want}")
            if ly.arrays["bias"].size != a["c_out"]:
                raise ShapeError("bias length mismatch")
            return a["c_out"]
        if ly.kind == "batch_norm":
            if a["c"] != c:
                raise ShapeError(f"normalizes {a['c']} channels, gets {c}")
            if ly.arrays["gamma"].size != c:
                raise ShapeError("parameter arrays do not match channel count")
            return c
        if ly.kind == "pixel_shuffle":
            r = a["r"]
            if c % (r * r):
                raise ShapeError(f"{c} channels not divisible by r^2={r * r}")
            return c // (r * r)
        if ly.kind == "space_to_depth":
            return c * a["block"] * a["block"]
        if ly.kind == "concat":
            if a["source"] not in seen:
                raise GraphError(f"source {a['source']!r} not defined earlier")
            return c + seen[a["source"]]
        if ly.kind == "residual_add":
            if a["source"] not in seen:
                raise GraphError(f"source {a['source']!r} not defined earlier")
            if seen[a["source"]] != c:
                raise ShapeError(
                    f"residual source has {seen[a['source']]} channels, "
                    f"current stream has {c}")
            return c
        # activation, maxpool2, bilinear_up, interpolation_resize
        return c

    @property
    def out_channels(self) -> int:
        return self._out_channels

    def layer_names(self) -> list:
        return [ly.name for ly in self.layers]

    def referenced_sources(self) -> set:
        return {ly.attrs["source"] for ly in self.layers
                if ly.kind in ("concat", "residual_add")}

    def copy(self) -> "NetworkGraph":
        return NetworkGraph([ly.copy() for ly in self.layers],
                            self.in_channels, dict(self.meta))

    # -- execution -------------------------------------------------------------

    def forward(self, x: np.ndarray, backend: str = "gemm") -> np.ndarray:
        """Deterministic forward pass through the named conv backend."""
        x = tops.check_tensor(x, "graph input")
        if x.shape[1] != self.in_channels:
            raise GraphError(f"graph expects {self.in_channels} input channels, "
                             f"got {x.shape[1]}")
        if backend not in convops.BACKENDS:
            raise ValueError(f"unknown backend {backend!r}")
        wanted = self.referenced_sources()
        saved: dict[str, np.ndarray] = {}
        cur = x
        for i, ly in enumerate(self.layers):
            try:
                cur = self._run_layer(ly, cur, saved, backend)
            except (ShapeError, GraphError, ValueError) as e:
                raise GraphError(
                    f"layer {i} ({ly.name!r}, {ly.kind}): {e}") from e
            if ly.name in wanted:
                saved[ly.name] = cur
        return cur

    @staticmethod
    def _run_layer(ly: Layer, x: np.ndarray, saved: dict, backend: str) -> np.ndarray:
        a = ly.attrs
        if ly.kind == "conv2d":
            kern = ConvKernel(ly.arrays["weight"], ly.arrays["bias"],
                              stride=a["stride"], pad=a["pad"])
            return convops.conv2d(x, kern, backend)
        if ly.kind == "conv_transpose2d":
            kern = ConvKernel(ly.arrays["weight"], ly.arrays["bias"],
                              stride=1, pad=a["pad"])
            return convops.conv_transpose2d(x, kern, a["scale"])
        if ly.kind == "batch_norm":
            return batchnorm_forward(x, _bn_params_of(ly))
        if ly.kind == "activation":
            return convops.activation(x, a["fn"], alpha=a.get("alpha", 0.2),
                                      scale=a.get("scale", 1.0))
        if ly.kind == "maxpool2":
            return convops.maxpool2(x)
        if ly.kind in ("bilinear_up", "interpolation_resize"):
            return tops.bilinear_resize(x, a["scale"])
        if ly.kind == "pixel_shuffle":
            return tops.pixel_shuffle(x, a["r"])
        if ly.kind == "space_to_depth":
            return tops.space_to_depth(x, a["block"])
        if ly.kind == "concat":
            return tops.concat_channels(x, saved[a["source"]])
        if ly.kind == "residual_add":
            src = saved[a["source"]]
            if src.shape != x.shape:
                raise ShapeError(f"residual shapes differ: {x.shape} vs {src.shape}")
            return x + src
        raise GraphError(f"unhandled kind {ly.kind!r}")

    # -- accounting --------------------------------------------------------------

    def count_params(self) -> int:
        """Total stored parameter elements across all layers."""
        return sum(ly.param_count() for ly in self.layers)

    def infer_shapes(self, input_shape) -> list:
        """Per-layer output shapes (c, h, w) for a given input shape."""
        n, c, h, w = (int(v) for v in input_shape)
        if c != self.in_channels:
            raise GraphError(f"graph expects {self.in_channels} input channels, "
                             f"got {c}")
        seen: dict[str, tuple] = {}
        shapes = []
        cur = (c, h, w)
        for i, ly in enumerate(self.layers):
            try:
                cur = self._infer_shape(ly, cur, seen)
            except (ShapeError, GraphError, KeyError) as e:
                raise GraphError(f"layer {i} ({ly.name!r}, {ly.kind}): {e}") from e
            seen[ly.name] = cur
            shapes.append(cur)
        return shapes

    @staticmethod
    def _infer_shape(ly: Layer, cur: tuple, seen: dict) -> tuple:
        c, h, w = cur
        a = ly.attrs
        if ly.kind == "conv2d":
            oh, ow = convops.out_dims(h, w, a["k"], a["stride"], a["pad"])
            return (a["c_out"], oh, ow)
        if ly.kind == "conv_transpose2d":
            s, k, p = a["scale"], a["k"], a["pad"]
            if not 0 <= s - k + 2 * p < s:
                raise ShapeError(f"k={k} pad={p} inconsistent with x{s} output")
            return (a["c_out"], h * s, w * s)
        if ly.kind == "maxpool2":
            return (c, (h + 1) // 2, (w + 1) // 2)
        if ly.kind in ("bilinear_up", "interpolation_resize"):
            oh = int(round(h * a["scale"]))
            ow = int(round(w * a["scale"]))
            if oh < 1 or ow < 1:
                raise ShapeError(f"resize to {oh}x{ow} is empty")
            return (c, oh, ow)
        if ly.kind == "pixel_shuffle":
            r = a["r"]
            return (c // (r * r), h * r, w * r)
        if ly.kind == "space_to_depth":
            b = a["block"]
            if h % b or w % b:
                raise ShapeError(f"{h}x{w} not divisible by block {b}")
            return (c * b * b, h // b, w // b)
        if ly.kind == "concat":
            sc, sh, sw = seen[a["source"]]
            if (sh, sw) != (h, w):
                raise ShapeError(f"concat source is {sh}x{sw}, stream is {h}x{w}")
            return (c + sc, h, w)
        if ly.kind == "residual_add":
            if seen[a["source"]] != cur:
                raise ShapeError(f"residual source {seen[a['source']]} != {cur}")
            return cur
        return cur  # batch_norm, activation

    def count_flops(self, input_shape):
        """MAC/elementwise-op accounting for one forward pass.

        Convolutions cost c_in*out_h*out_w*k^2*c_out multiply-accumulates
        (transposed convs use their input grid); batch-norm is one MAC per
        element; activations, pooling, resizing and residual adds count one
        op per output element; pure data movement costs nothing.
        """
        shapes = self.infer_shapes(input_shape)
        n = int(input_shape[0])
        per_layer = []
        macs = 0
        pointwise = 0
        prev = (self.in_channels, int(input_shape[2]), int(input_shape[3]))
        for ly, shp in zip(self.layers, shapes):
            c, h, w = shp
            a = ly.attrs
            m = e = 0
            if ly.kind == "conv2d":
                m = a["c_in"] * h * w * a["k"] ** 2 * a["c_out"]
            elif ly.kind == "conv_transpose2d":
                m = a["c_in"] * prev[1] * prev[2] * a["k"] ** 2 * a["c_out"]
            elif ly.kind == "batch_norm":
                m = c * h * w
            elif ly.kind in ("activation", "maxpool2", "bilinear_up",
                             "interpolation_resize", "residual_add"):
                e = c * h * w
            macs += n * m
            pointwise += n * e
            per_layer.append({"name": ly.name, "kind": ly.kind,
                              "out_shape": (n, c, h, w),
                              "params": ly.param_count(),
                              "macs": n * m, "pointwise_ops": n * e})
            prev = shp
        return CostReport(macs=macs, pointwise_ops=pointwise, per_layer=per_layer)


@dataclass
class CostReport:
    """Cost of one forward pass: MAC-type ops plus 1-op-per-element work."""

    macs: int
    pointwise_ops: int
    per_layer: list = field(default_factory=list)

    @property
    def mac_total(self) -> int:
        """Headline count: MACs plus elementwise ops, each counted once."""
        return self.macs + self.pointwise_ops

    @property
    def flops(self) -> int:
        """2-FLOPs-per-MAC view of the same work."""
        return 2 * self.macs + self.pointwise_ops


def count_params(graph: NetworkGraph) -> int:
    return graph.count_params()


def count_flops(graph: NetworkGraph, input_shape) -> int:
    """Total MAC-equivalent operation count for one forward pass."""
    return graph.count_flops(input_shape).mac_total


# ---------------------------------------------------------------------------
# fusion pass

def fuse_conv_bn(graph: NetworkGraph) -> NetworkGraph:
    """Fold every (conv2d -> batch_norm) pair into a single convolution.

    Output channel o of the fused conv gets weights scaled by
    gamma_o/sqrt(var_o + eps) and bias (b_o - mean_o)*gamma_o/sqrt(var_o+eps)
    + beta_o. Batch-norm layers that do not directly follow a conv (or whose
    conv output is referenced by a skip connection) are rewritten as an
    explicit diagonal 1x1 conv instead. The input graph is never mutated;
    applying the pass twice equals applying it once.

    Raises :class:`GraphError` if any batch-norm carries non-frozen
    statistics, since folding is only valid with fixed running estimates.
    """
    for i, ly in enumerate(graph.layers):
        if ly.kind == "batch_norm" and not ly.attrs.get("frozen", True):
            raise GraphError(
                f"layer {i} ({ly.name!r}): batch-norm statistics are not "
                f"frozen; fusion requires inference-mode running estimates")

    referenced = graph.referenced_sources()
    out_layers: list[Layer] = []
    renames: dict[str, str] = {}
    i = 0
    while i < len(graph.layers):
        ly = graph.layers[i]
        nxt = graph.layers[i + 1] if i + 1 < len(graph.layers) else None
        if (ly.kind == "conv2d" and nxt is not None
                and nxt.kind == "batch_norm"
                and ly.name not in referenced):
            p = _bn_params_of(nxt)
            inv = (p.gamma.astype(np.float64)
                   / np.sqrt(p.var.astype(np.float64) + p.eps))
            w = ly.arrays["weight"].astype(np.float64) * inv[:, None, None, None]
            b = ((ly.arrays["bias"].astype(np.float64)
                  - p.mean.astype(np.float64)) * inv
                 + p.beta.astype(np.float64))
            fused = conv2d_layer(ly.name, ly.attrs["c_in"], ly.attrs["c_out"],
                                 ly.attrs["k"], stride=ly.attrs["stride"],
                                 pad=ly.attrs["pad"],
                                 weights=w.astype(DTYPE), bias=b.astype(DTYPE))
            out_layers.append(fused)
            # downstream skips that watched the BN output now watch the conv
            renames[nxt.name] = ly.name
            i += 2
            continue
        if ly.kind == "batch_norm":
            p = _bn_params_of(ly)
            kern = bn_to_1x1(p)
            out_layers.append(conv2d_layer(ly.name, p.channels, p.channels, 1,
                                           stride=1, pad=0,
                                           weights=kern.weights, bias=kern.bias))
            i += 1
            continue
        out_layers.append(ly.copy())
        i += 1

    if renames:
        for ly in out_layers:
            src = ly.attrs.get("source")
            if src in renames:
                ly.attrs["source"] = renames[src]
    fused_graph = NetworkGraph(out_layers, graph.in_channels, dict(graph.meta))
    if len(fused_graph.layers) < len(graph.layers):
        log.debug("fused %d batch-norm layers away",
                  len(graph.layers) - len(fused_graph.layers))
    return fused_graph


def graph_forward(graph: NetworkGraph, inputs,
                  backend: str = "gemm") -> np.ndarray:
    """Run the graph on one tensor, or on several concatenated channel-wise
    (multi-input graphs such as the flow net take their inputs that way)."""
    if isinstance(inputs, (list, tuple)):
        if not inputs:
            raise GraphError("empty input list")
        x = inputs[0]
        for extra in inputs[1:]:
            x = tops.concat_channels(x, extra)
    else:
        x = inputs
    return graph.forward(x, backend)


# ---------------------------------------------------------------------------
# weight initialization

def init_random(graph: NetworkGraph, seed: int) -> NetworkGraph:
    """Return a copy with seeded He-style random conv weights.

    Conv weights draw from N(0, 2/(c_in*k^2)); biases stay zero. A conv
    that directly feeds a residual merge is drawn 10x smaller, keeping deep
    residual trunks near unit gain so random nets stay numerically tame.
    Batch-norm layers get mildly perturbed statistics so downstream fusion
    paths are exercised with non-trivial parameters.
    """
    rng = np.random.default_rng(seed)
    g = graph.copy()
    for i, ly in enumerate(g.layers):
        if ly.kind in ("conv2d", "conv_transpose2d"):
            fan_in = ly.attrs["c_in"] * ly.attrs["k"] ** 2
            std = math.sqrt(2.0 / fan_in)
            nxt = g.layers[i + 1] if i + 1 < len(g.layers) else None
            if nxt is not None and nxt.kind == "residual_add":
                std *= 0.1
            ly.arrays["weight"] = rng.normal(
                0.0, std, ly.arrays["weight"].shape).astype(DTYPE)
            ly.arrays["bias"] = np.zeros_like(ly.arrays["bias"])
        elif ly.kind == "batch_norm":
            c = ly.attrs["c"]
            ly.arrays["gamma"] = rng.uniform(0.8, 1.2, c).astype(DTYPE)
            ly.arrays["beta"] = rng.normal(0.0, 0.05, c).astype(DTYPE)
            ly.arrays["mean"] = rng.normal(0.0, 0.05, c).astype(DTYPE)
            ly.arrays["var"] = rng.uniform(0.5, 1.5, c).astype(DTYPE)
    return g
