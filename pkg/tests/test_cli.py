"""Command-line interface: subcommand workflows, reports, error paths."""

import json
import re

import numpy as np
import pytest

from vsrkit import (
    load_model,
    read_sequence,
    write_sequence,
)
from vsrkit.cli import main


@pytest.fixture()
def control_model(tmp_path):
    path = tmp_path / "control.vsm"
    assert main(["build-model", "--arch", "control-a", "--seed", "3",
                 "--out", str(path)]) == 0
    return path


def _write_lr_frames(tmp_path, t=3, c=1, h=10, w=10, seed=0):
    frames = np.random.default_rng(seed).random((t, c, h, w),
                                                dtype=np.float32)
    d = tmp_path / "lr"
    d.mkdir(exist_ok=True)
    write_sequence(frames, d)
    return d, frames


# ---------------------------------------------------------------------------
# build-model / inspect

def test_build_model_reports_parameter_total(tmp_path, capsys):
    out = tmp_path / "m.vsm"
    assert main(["build-model", "--arch", "control-b", "--out",
                 str(out)]) == 0
    text = capsys.readouterr().out
    assert "30177 parameters" in text
    assert out.exists()


def test_build_model_seeds_are_reproducible(tmp_path):
    a, b, c = (tmp_path / n for n in ("a.vsm", "b.vsm", "c.vsm"))
    main(["build-model", "--arch", "control-a", "--seed", "9", "--out", str(a)])
    main(["build-model", "--arch", "control-a", "--seed", "9", "--out", str(b)])
    main(["build-model", "--arch", "control-a", "--seed", "8", "--out", str(c)])
    wa = load_model(a).layers[0].arrays["weight"]
    wb = load_model(b).layers[0].arrays["weight"]
    wc = load_model(c).layers[0].arrays["weight"]
    assert np.array_equal(wa, wb)
    assert not np.array_equal(wa, wc)


def test_build_model_egvsr_bundle(tmp_path, capsys):
    out = tmp_path / "g.vsm"
    assert main(["build-model", "--arch", "egvsr", "--out", str(out)]) == 0
    assert "2546662 parameters" in capsys.readouterr().out
    bundle = load_model(out)
    assert set(bundle) == {"fnet", "srnet"}


def test_inspect_lists_layers_and_ops(control_model, capsys):
    assert main(["inspect", "--model", str(control_model),
                 "--size", "16x12"]) == 0
    out = capsys.readouterr().out
    assert "in_channels=1" in out
    assert re.search(r"conv1 +conv2d +params=1664", out)
    assert "total params=29409" in out
    # per-layer op counters appear when a size is given
    assert "macs=" in out and "mac_total=" in out
    # conv1 on a 16x12 grid: 25 taps, 64 filters
    assert re.search(r"conv1 .*macs=" + str(25 * 64 * 16 * 12), out)


# ---------------------------------------------------------------------------
# upscale

def test_upscale_writes_tripled_frames(tmp_path, control_model, capsys):
    lr_dir, frames = _write_lr_frames(tmp_path)
    out_dir = tmp_path / "hr"
    assert main(["upscale", "--model", str(control_model),
                 "--in", str(lr_dir), "--out", str(out_dir)]) == 0
    text = capsys.readouterr().out
    assert "wrote 3 frames" in text
    hr = read_sequence(out_dir)
    assert hr.shape == (3, 1, 30, 30)
    assert np.all(hr >= 0.0) and np.all(hr <= 1.0)


def test_upscale_is_deterministic(tmp_path, control_model):
    lr_dir, _ = _write_lr_frames(tmp_path)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    for out in (out_a, out_b):
        assert main(["upscale", "--model", str(control_model),
                     "--in", str(lr_dir), "--out", str(out)]) == 0
    assert np.array_equal(read_sequence(out_a), read_sequence(out_b))


def test_upscale_checks_scale_flag(tmp_path, control_model, capsys):
    lr_dir, _ = _write_lr_frames(tmp_path)
    code = main(["upscale", "--model", str(control_model),
                 "--in", str(lr_dir), "--out", str(tmp_path / "x"),
                 "--scale", "4"])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_upscale_recurrent_bundle(tmp_path, capsys):
    model = tmp_path / "gen.vsm"
    main(["build-model", "--arch", "egvsr", "--out", str(model)])
    lr_dir, _ = _write_lr_frames(tmp_path, t=2, c=3, h=16, w=16, seed=4)
    out_dir = tmp_path / "hr"
    assert main(["upscale", "--model", str(model), "--in", str(lr_dir),
                 "--out", str(out_dir), "--fuse-bn"]) == 0
    hr = read_sequence(out_dir)
    assert hr.shape == (2, 3, 64, 64)


# ---------------------------------------------------------------------------
# eval / score

def _eval_report(tmp_path, gen_dir, ref_dir, name):
    report = tmp_path / f"{name}.json"
    assert main(["eval", "--gen", str(gen_dir), "--ref", str(ref_dir),
                 "--metrics", "psnr,tof", "--label", name,
                 "--report", str(report)]) == 0
    return report


def test_eval_identical_sequences(tmp_path, capsys):
    gen_dir, _ = _write_lr_frames(tmp_path, t=3, c=3, h=40, w=40, seed=5)
    report = tmp_path / "r.json"
    assert main(["eval", "--gen", str(gen_dir), "--ref", str(gen_dir),
                 "--metrics", "psnr,ssim,tof,tlp",
                 "--report", str(report)]) == 0
    out = capsys.readouterr().out
    values = dict(re.findall(r"(\w+) ([0-9.]+)", out))
    assert float(values["psnr"]) == 100.0
    assert float(values["ssim"]) == 1.0
    assert float(values["tof"]) == 0.0
    assert float(values["tlp"]) == 0.0
    doc = json.loads(report.read_text())
    rows = doc["sections"]["metrics"]
    assert {r["metric"] for r in rows} == {"psnr", "ssim", "tof", "tlp"}


def test_eval_rejects_mismatched_sequences(tmp_path, capsys):
    gen_dir, _ = _write_lr_frames(tmp_path, t=3, c=3, h=40, w=40, seed=6)
    ref_dir = tmp_path / "ref"
    ref_dir.mkdir()
    write_sequence(np.zeros((2, 3, 40, 40), dtype=np.float32), ref_dir)
    assert main(["eval", "--gen", str(gen_dir), "--ref", str(ref_dir)]) == 1
    assert "error:" in capsys.readouterr().err


def test_score_ranks_methods(tmp_path, capsys):
    rng = np.random.default_rng(7)
    ref = rng.random((3, 3, 40, 40), dtype=np.float32)
    ref_dir = tmp_path / "ref"
    ref_dir.mkdir()
    write_sequence(ref, ref_dir)
    # close: small noise; far: heavy noise
    for name, sigma in (("close", 0.01), ("far", 0.3)):
        d = tmp_path / name
        d.mkdir()
        noisy = np.clip(ref + rng.normal(0, sigma, ref.shape), 0, 1)
        write_sequence(noisy.astype(np.float32), d)
    r1 = _eval_report(tmp_path, tmp_path / "close", ref_dir, "close")
    r2 = _eval_report(tmp_path, tmp_path / "far", ref_dir, "far")
    capsys.readouterr()
    assert main(["score", "--reports", f"{r1},{r2}"]) == 0
    out = capsys.readouterr().out
    scores = dict(re.findall(r"(\w+)\t([0-9.]+)", out))
    assert set(scores) == {"close", "far"}
    assert float(scores["close"]) > float(scores["far"])
    # best-on-everything method scores exactly 1
    assert float(scores["close"]) == 1.0


def test_score_accepts_weights(tmp_path, capsys):
    gen_dir, _ = _write_lr_frames(tmp_path, t=3, c=3, h=40, w=40, seed=8)
    r1 = _eval_report(tmp_path, gen_dir, gen_dir, "self")
    capsys.readouterr()
    assert main(["score", "--reports", str(r1),
                 "--weights", "0.7,0.3"]) == 0
    assert main(["score", "--reports", str(r1),
                 "--weights", "0.7,0.7"]) == 1


# ---------------------------------------------------------------------------
# fuse-bn

def test_fuse_bn_preserves_outputs(tmp_path):
    model = tmp_path / "gen.vsm"
    main(["build-model", "--arch", "egvsr", "--seed", "2",
          "--out", str(model)])
    fused_path = tmp_path / "fused.vsm"
    assert main(["fuse-bn", "--in", str(model),
                 "--out", str(fused_path)]) == 0
    orig = load_model(model)
    fused = load_model(fused_path)
    assert len(fused["fnet"].layers) < len(orig["fnet"].layers)
    x = np.random.default_rng(1).random((1, 6, 16, 16), dtype=np.float32)
    a = orig["fnet"].forward(x)
    b = fused["fnet"].forward(x)
    denom = max(float(np.max(np.abs(a))), 1e-6)
    assert float(np.max(np.abs(a - b))) / denom <= 1e-4


def test_fuse_bn_reports_layer_counts(tmp_path, capsys):
    model = tmp_path / "gen.vsm"
    main(["build-model", "--arch", "egvsr", "--out", str(model)])
    capsys.readouterr()
    assert main(["fuse-bn", "--in", str(model),
                 "--out", str(tmp_path / "f.vsm")]) == 0
    m = re.search(r"\((\d+) layers -> (\d+) layers\)",
                  capsys.readouterr().out)
    assert m and int(m.group(2)) < int(m.group(1))


# ---------------------------------------------------------------------------
# bench / estimate-fpga

def test_bench_emits_report(tmp_path, capsys):
    model = tmp_path / "c.vsm"
    main(["build-model", "--arch", "control-a", "--out", str(model)])
    report = tmp_path / "bench.json"
    assert main(["bench", "--model", str(model), "--size", "12x10",
                 "--frames", "2", "--warmup", "1",
                 "--report", str(report)]) == 0
    doc = json.loads(report.read_text())
    row = doc["sections"]["bench"][0]
    assert row["frames"] == 2
    assert row["height"] == 10 and row["width"] == 12
    assert row["fps"] > 0


def test_estimate_fpga_table_and_projections(capsys):
    assert main(["estimate-fpga", "--table",
                 "--flops-per-frame", "28.55e9,64.06e9"]) == 0
    out = capsys.readouterr().out
    assert "4x4 lut=827" in out
    fps = [float(v) for v in re.findall(r"-> ([0-9.]+) fps", out)]
    assert len(fps) == 2
    assert abs(fps[0] - 99.44) < 0.1
    assert abs(fps[1] - 44.32) < 0.05


def test_estimate_fpga_csv_report(tmp_path):
    report = tmp_path / "fpga.csv"
    assert main(["estimate-fpga", "--report", str(report),
                 "--format", "csv"]) == 0
    text = report.read_text()
    assert "# section: fpga" in text
    assert "input_size" in text


# ---------------------------------------------------------------------------
# error handling

def test_missing_model_file_is_a_clean_error(tmp_path, capsys):
    assert main(["inspect", "--model", str(tmp_path / "nope.vsm")]) == 1
    assert "error:" in capsys.readouterr().err


def test_unknown_subcommand_exits_with_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["transmogrify"])
    assert exc.value.code == 2


def test_bad_size_argument(tmp_path, capsys):
    model = tmp_path / "c.vsm"
    main(["build-model", "--arch", "control-a", "--out", str(model)])
    capsys.readouterr()
    assert main(["bench", "--model", str(model), "--size", "twelve"]) == 1
    assert "error:" in capsys.readouterr().err
