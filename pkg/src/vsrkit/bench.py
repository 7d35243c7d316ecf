"""Wall-clock benchmarking, analytical FPGA throughput estimation, and
deterministic report emission.

The FPGA model: one accelerator tile implements a 3x3 convolution over an
n x n input patch using a known LUT budget and pipeline latency. Filling
the device's total LUT budget with copies of that tile bounds attainable
arithmetic throughput:

    max_flops = lut_total / lut_tile * tile_flops * frequency / latency

Dividing by a network's per-frame FLOPs gives a theoretical frame rate.
"""
from __future__ import annotations

import csv
import io
import json
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import metrics as qmetrics
from .graph import NetworkGraph, fuse_conv_bn
from .pipeline import vsr_step

# Default device budget: a Kintex-7 325T class part (326k LUTs) at a
# 300 MHz clock; the per-row peaks it implies are pinned in tests.
DEFAULT_LUT_TOTAL = 326_080
DEFAULT_FREQUENCY = 300e6

# (input tile size n, LUTs per tile, pipeline latency in cycles)
DEFAULT_PROFILE_ROWS = (
    (4, 827, 6),
    (5, 2682, 10),
    (6, 4242, 12),
    (7, 10214, 16),
    (8, 16499, 17),
)


def conv_flops(ci: int, hi: int, wi: int, k: int, co: int) -> int:
    """Multiply count ci*hi*wi*k^2*co of a dense conv over an hi x wi input."""
    vals = (ci, hi, wi, k, co)
    if any(int(v) < 1 for v in vals):
        raise ValueError(f"all factors must be positive, got {vals}")
    ci, hi, wi, k, co = (int(v) for v in vals)
    return ci * hi * wi * k * k * co


@dataclass(frozen=True)
class FpgaProfile:
    """Device LUT budget, clock, and per-tile-size implementation costs."""

    lut_total: int = DEFAULT_LUT_TOTAL
    frequency: float = DEFAULT_FREQUENCY
    rows: tuple = DEFAULT_PROFILE_ROWS

    def __post_init__(self):
        if self.lut_total < 1 or self.frequency <= 0:
            raise ValueError("lut_total and frequency must be positive")
        for row in self.rows:
            n, luts, lat = row
            if n < 1 or luts < 1 or lat < 1:
                raise ValueError(f"profile row {row} has non-positive entries")

    def row(self, input_size: int):
        for r in self.rows:
            if r[0] == int(input_size):
                return r
        sizes = [r[0] for r in self.rows]
        raise ValueError(f"no profile row for input size {input_size}, "
                         f"available: {sizes}")


def fpga_max_flops(profile: FpgaProfile, input_size: int) -> float:
    """Throughput bound for the given tile size, in FLOPs per second."""
    n, lut_tile, latency = profile.row(input_size)
    tile_flops = conv_flops(1, n, n, 3, 1)
    return (profile.lut_total / lut_tile) * tile_flops \
        * (profile.frequency / latency)


def theoretical_fps(max_flops: float, flops_per_frame: float) -> float:
    """Frame rate supported by a throughput bound for a per-frame cost."""
    if flops_per_frame <= 0:
        raise ValueError(f"flops_per_frame must be positive, "
                         f"got {flops_per_frame}")
    return max_flops / flops_per_frame


# ---------------------------------------------------------------------------
# wall-clock benchmarking

@dataclass
class BenchResult:
    """One timed configuration; fps = frames / wall_time_s by construction."""

    arch: str
    height: int
    width: int
    scale: int
    backend: str
    fused: bool
    frames: int
    warmup: int
    wall_time_s: float
    fps: float
    mean_frame_s: float
    median_frame_s: float
    macs_per_frame: int
    flops_per_frame: int


def _graph_cost(models: dict, shape: tuple) -> tuple:
    """(macs, flops) per frame over the bundle's graphs; pipeline glue
    (warping, flow resize, packing) is excluded and documented as such."""
    n, c, h, w = shape
    macs = flops = 0
    if "fnet" in models and "srnet" in models:
        fnet, srnet = models["fnet"], models["srnet"]
        scale = int(srnet.meta["scale"])
        rep_f = fnet.count_flops((n, 2 * c, h, w))
        rep_s = srnet.count_flops((n, c * (1 + scale * scale), h, w))
        macs = rep_f.mac_total + rep_s.mac_total
        flops = rep_f.flops + rep_s.flops
    else:
        rep = models["net"].count_flops(shape)
        macs, flops = rep.mac_total, rep.flops
    return macs, flops


def _as_bundle(models) -> dict:
    if isinstance(models, NetworkGraph):
        return {"net": models}
    return dict(models)


def time_pipeline(models, input_shape, frames: int, backend: str = "gemm",
                  fused: bool = False, warmup: int = 5,
                  seed: int = 0) -> BenchResult:
    """Steady-state FPS on a seeded synthetic sequence.

    ``models`` is either a {"fnet", "srnet"} bundle (recurrent pipeline) or
    a single graph applied per frame. Warm-up frames run first and are not
    timed; timing uses the monotonic performance counter per frame.
    """
    if frames < 1:
        raise ValueError(f"frames must be >= 1, got {frames}")
    if warmup < 0:
        raise ValueError(f"warmup must be >= 0, got {warmup}")
    bundle = _as_bundle(models)
    if fused:
        bundle = {k: fuse_conv_bn(g) for k, g in bundle.items()}
    n, c, h, w = (int(v) for v in input_shape)
    rng = np.random.default_rng(seed)
    seq = rng.random((frames + warmup, c, h, w), dtype=np.float32)

    if "fnet" in bundle:
        scale = int(bundle["srnet"].meta["scale"])
        arch = str(bundle["srnet"].meta.get("arch", "srnet")) + "+fnet"
        run_one = None
    else:
        net = bundle["net"]
        scale = int(net.meta.get("scale", 1))
        arch = str(net.meta.get("arch", "net"))
        run_one = net

    times = []
    if run_one is None:
        state = None
        for t in range(frames + warmup):
            t0 = time.perf_counter()
            _, _, state = vsr_step(bundle, seq[t:t + 1], state, backend)
            t1 = time.perf_counter()
            if t >= warmup:
                times.append(t1 - t0)
    else:
        for t in range(frames + warmup):
            t0 = time.perf_counter()
            run_one.forward(seq[t:t + 1], backend)
            t1 = time.perf_counter()
            if t >= warmup:
                times.append(t1 - t0)

    wall = float(sum(times))
    macs, flops = _graph_cost(bundle, (1, c, h, w))
    return BenchResult(arch=arch, height=h, width=w, scale=scale,
                       backend=backend, fused=fused, frames=frames,
                       warmup=warmup, wall_time_s=wall,
                       fps=frames / wall if wall > 0 else float("inf"),
                       mean_frame_s=wall / frames,
                       median_frame_s=float(statistics.median(times)),
                       macs_per_frame=macs, flops_per_frame=flops)


# ---------------------------------------------------------------------------
# reports

def conventions() -> dict:
    """Every unstated-convention choice that shapes reported numbers."""
    return {
        "tensor_layout": "NCHW, 32-bit floats",
        "luma_weights": list(qmetrics.LUMA_WEIGHTS),
        "psnr_cap_db": qmetrics.PSNR_CAP_DB,
        "ssim": {"window": qmetrics.SSIM_WINDOW, "sigma": qmetrics.SSIM_SIGMA,
                 "k1": qmetrics.SSIM_K1, "k2": qmetrics.SSIM_K2,
                 "border": "valid windows only"},
        "flow_estimator": {"algorithm": "pyramidal lucas-kanade",
                           "levels": qmetrics.LK_LEVELS,
                           "window": qmetrics.LK_WINDOW,
                           "iterations": qmetrics.LK_ITERS,
                           "max_displacement": qmetrics.LK_MAX_DISP},
        "perceptual_proxy": qmetrics.default_perceptual_distance().name,
        "temporal_reduction": "mean per pixel, then mean over frame pairs",
        "flops_convention": ("macs_per_frame counts one op per MAC and per "
                             "pointwise element; flops_per_frame counts 2 "
                             "per MAC; graph layers only, pipeline glue "
                             "(warp, flow resize, packing) excluded"),
        "normalization": "min-max per metric across methods, 0 = best",
    }


def _rows_of(items) -> list:
    rows = []
    for it in items:
        if hasattr(it, "__dataclass_fields__"):
            rows.append(asdict(it))
        elif isinstance(it, dict):
            rows.append(dict(it))
        else:
            raise TypeError(f"cannot serialize {type(it).__name__} into a report")
    return rows


def emit_report(sections: dict, fmt: str = "json") -> str:
    """Render result collections deterministically.

    ``sections`` maps section name (e.g. "bench", "metrics", "scores") to a
    list of dataclasses/dicts, or to a plain scalar mapping. JSON output is
    sorted and indented; CSV output emits one block per section with an
    explicit header, preceded by comment lines carrying the conventions
    metadata. Re-emitting the same collections is byte-identical.
    """
    if not sections:
        raise ValueError("no result sections to report")
    for name, items in sections.items():
        if items is None or (hasattr(items, "__len__") and len(items) == 0):
            raise ValueError(f"section {name!r} is empty")
    if fmt == "json":
        doc = {"conventions": conventions(), "sections": {}}
        for name in sorted(sections):
            items = sections[name]
            if isinstance(items, dict):
                doc["sections"][name] = items
            else:
                doc["sections"][name] = _rows_of(items)
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        out = io.StringIO()
        out.write("# conventions: " + json.dumps(conventions(), sort_keys=True)
                  + "\n")
        for name in sorted(sections):
            items = sections[name]
            out.write(f"# section: {name}\n")
            if isinstance(items, dict):
                rows = [{"key": k, "value": items[k]} for k in sorted(items)]
            else:
                rows = _rows_of(items)
            cols = list(rows[0].keys())
            writer = csv.DictWriter(out, fieldnames=cols)
            writer.writeheader()
            for row in rows:
                writer.writerow({k: row.get(k, "") for k in cols})
        return out.getvalue()
    raise ValueError(f"unknown report format {fmt!r}, expected json or csv")


def fpga_table(profile: FpgaProfile) -> list:
    """Max-throughput rows for every tile size in the profile."""
    rows = []
    for n, luts, lat in profile.rows:
        mx = fpga_max_flops(profile, n)
        rows.append({"input_size": n, "lut_tile": luts, "latency_cycles": lat,
                     "tile_flops": conv_flops(1, n, n, 3, 1),
                     "max_flops": mx, "max_tflops": mx / 1e12})
    return rows
