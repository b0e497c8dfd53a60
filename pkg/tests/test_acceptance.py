"""The twelve acceptance criteria, one test (or small group) each.

A summary line per criterion is printed at the end of the pytest run.
Criteria 9 and 11 share one pair of full command-line training runs.
"""

import math
import time

import numpy as np
import pytest

from edaseg import tensor as T
from edaseg.analyzer import (ChainLayer, chain_rf, count_macs, count_params, measure_chain_rf,
                             measure_rf_empirical, pre_head_rf, shape_trace)
from edaseg.arch import FULL_PRESETS, parse_spec, preset, preset_names, serialize_spec, validate
from edaseg.bench import benchmark_inference
from edaseg.checkpoint import checkpoint_bytes, load_checkpoint, save_checkpoint
from edaseg.cli import main
from edaseg.gradcheck import grad_check
from edaseg.lanesynth import generate_dataset, read_dataset, write_dataset
from edaseg.metrics import ConfusionMatrix
from edaseg.network import build
from edaseg.tensor import ConvGeometry
from edaseg.train import evaluate, poly_lr, smoothed

from gradcases import COMPOSITES, PRIMITIVES, draw
from oracles import conv2d_naive, iou_bruteforce, miou_bruteforce
from specgen import random_spec

criterion = pytest.mark.criterion


# ---------------------------------------------------------------------------
# 1-3: structure and cost parity
# ---------------------------------------------------------------------------

RATIOS = {
    "edanet": ["1/2", "1/4", "1/4", "1/8", "1/8", "1/1"],
    "eda-fss": ["1/2", "1/2", "1/4", "1/4", "1/8", "1/8", "1/1"],
    "network-a": ["1/2", "1/2", "1/4", "1/4", "1/1"],
    "network-b": ["1/1", "1/2", "1/2", "1/4", "1/1"],
    "eda-ddb": ["1/2", "1/4", "1/4", "1/8", "1/8", "1/8", "1/1"],
    "eda-wo-di": ["1/2", "1/4", "1/4", "1/8", "1/8", "1/1"],
    "eda-ddb-l": ["1/2", "1/4", "1/4", "1/8", "1/8", "1/8", "1/1"],
    "eda-large-1": ["1/2", "1/4", "1/4", "1/8", "1/8", "1/8", "1/1"],
    "eda-large-16": ["1/2", "1/4", "1/4", "1/8", "1/8", "1/8", "1/1"],
}


@criterion(1, "preset fidelity")
def test_c01_preset_fidelity():
    t0 = time.perf_counter()
    assert set(RATIOS) == set(FULL_PRESETS)
    for name in FULL_PRESETS:
        spec = preset(name)
        trace = shape_trace(spec, 480, 720)
        assert [r.ratio for r in trace] == RATIOS[name], name
        assert (trace[-1].height, trace[-1].width) == (480, 720)
        # the executed network produces the traced shapes stage by stage
        net = build(spec, 6, seed=0)
        y = np.zeros((1, 3, 16, 24), np.float32)
        ends = {}
        for block in net.blocks():
            y, _ = block.forward(y, net.params, net.buffers, "infer")
            ends[block.name.split(".")[0]] = y.shape[1:]
        assert list(ends.values()) == [(r.channels, r.height, r.width)
                                       for r in shape_trace(spec, 16, 24)], name
    rows = {r.stage: r for r in shape_trace(preset("eda-fss"))}
    assert rows["block0"].ratio == "1/2"
    assert shape_trace(preset("network-a"))[-2].ratio == "1/4"
    assert {r.ratio for r in shape_trace(preset("network-b"))[:-1]} == {"1/1", "1/2", "1/4"}
    assert [r.ratio for r in shape_trace(preset("network-b")) if r.kind == "eda_block"] == ["1/1", "1/2"]
    assert time.perf_counter() - t0 < 1.0


@criterion(2, "parameter parity")
def test_c02_parameter_parity():
    assert count_params(preset("eda-ddb")) == count_params(preset("edanet"))
    assert (count_params(preset("eda-large-1")) == count_params(preset("eda-large-16"))
            == count_params(preset("eda-ddb-l")))
    for name in preset_names():
        assert count_params(preset(name)) == build(preset(name), 6).num_params(), name


@criterion(3, "MAC parity")
def test_c03_mac_parity():
    edanet = count_macs(preset("edanet"), 6, 480, 720)
    assert count_macs(preset("eda-ddb"), 6, 480, 720) == edanet
    assert count_macs(preset("eda-wo-di"), 6, 480, 720) == edanet


# ---------------------------------------------------------------------------
# 4-8: numerical oracles
# ---------------------------------------------------------------------------

@criterion(4, "gradient correctness")
@pytest.mark.parametrize("name", sorted(PRIMITIVES) + sorted(COMPOSITES))
def test_c04_gradients(name):
    builder = {**PRIMITIVES, **COMPOSITES}[name]
    shapes = set()
    for i in range(20):
        op, inputs = draw(builder, np.random.default_rng(4000 + i))
        shapes.add(tuple(np.shape(a) for a in inputs))
        report = grad_check(op, inputs, tol=1e-4, seed=i)
        assert report.max_error < 1e-4, f"{name} case {i}: {report}"
    assert len(shapes) >= 10, "sweep should cover many distinct shapes"


@criterion(5, "convolution oracle")
def test_c05_conv_oracle():
    rng = np.random.default_rng(5)
    dilations = [1, 2, 4, 8, 16]
    kernels = [(3, 3), (3, 1), (1, 3), (1, 1), (2, 3)]
    seen = set()
    for i in range(50):
        d = dilations[i % 5]
        kh, kw = kernels[(i // 5) % 5]
        dil = (d if kh > 1 else 1, d if kw > 1 else 1)
        stride = (2, 2) if i % 3 == 0 else (1, int(rng.integers(1, 3)))
        pad = (dil[0] * (kh - 1) // 2, dil[1] * (kw - 1) // 2)
        h = dil[0] * (kh - 1) + int(rng.integers(1, 6))
        w = dil[1] * (kw - 1) + int(rng.integers(1, 6))
        cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        x = rng.standard_normal((int(rng.integers(1, 3)), cin, h, w))
        wt = rng.standard_normal((cout, cin, kh, kw))
        b = rng.standard_normal(cout) if i % 2 else None
        out, _ = T.conv2d_forward(x, wt, b, ConvGeometry.make((kh, kw), stride, dil, pad))
        ref = conv2d_naive(x, wt, b, stride, dil, pad)
        assert out.shape == ref.shape
        assert np.abs(out - ref).max() < 1e-5
        seen.add((d, (kh, kw), stride == (2, 2)))
    assert {s[0] for s in seen} == set(dilations)
    assert any(s[2] for s in seen) and any(s[1] in ((3, 1), (1, 3)) for s in seen)


@criterion(6, "receptive-field oracle")
def test_c06_receptive_field():
    c3 = ChainLayer((3, 3))
    for layers, rf in (([c3], 3), ([c3, c3], 5), ([c3, ChainLayer((3, 3), dilation=(2, 2))], 7)):
        assert chain_rf(layers) == (rf, rf)
        assert measure_chain_rf(layers) == (rf, rf)
    rng = np.random.default_rng(6)
    for _ in range(5):
        spec = random_spec(rng, max_depth=2, max_channels=6, max_growth=3, max_modules=2,
                           max_dilation=4)
        assert len(spec.stages) <= 6
        assert measure_rf_empirical(spec) == pre_head_rf(spec), spec


@criterion(7, "mIoU oracle")
def test_c07_miou():
    cm = ConfusionMatrix().update(np.array([[1, 4], [4, 4]]), np.array([[1, 1], [4, 4]]))
    assert abs(cm.miou() - 7 / 12) < 1e-15
    rng = np.random.default_rng(7)
    for _ in range(100):
        truth, pred = rng.integers(0, 6, (16, 16)), rng.integers(0, 6, (16, 16))
        cm = ConfusionMatrix().update(pred, truth)
        iou = cm.iou_per_class()
        for c, v in iou_bruteforce(pred, truth).items():
            assert (v is None and math.isnan(iou[c])) or v == iou[c]
        assert cm.miou() == miou_bruteforce(pred, truth)


@criterion(8, "poly learning rate")
def test_c08_poly_lr():
    assert poly_lr(0, 3000) == 5e-4
    assert poly_lr(3000, 3000) == 0
    expected = 5e-4 * 0.5 ** 0.9
    assert abs(poly_lr(1500, 3000) - expected) <= 1e-9 * expected


# ---------------------------------------------------------------------------
# 9 and 11: desk-scale training through the command line
# ---------------------------------------------------------------------------

TRAIN_FLAGS = ["--arch", "tiny-eda-ddb", "--iters", "3000", "--batch", "8", "--seed", "0"]


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    for name, count, seed in (("train", 512, 1), ("train_again", 512, 1), ("test", 64, 2)):
        assert main(["generate", "--out", str(root / name), "--count", str(count),
                     "--seed", str(seed), "--width", "144", "--height", "96"]) == 0
    times = []
    for run in ("a", "b"):
        t0 = time.perf_counter()
        assert main(["train", *TRAIN_FLAGS, "--data", str(root / "train"),
                     "--out", str(root / f"{run}.ckpt")]) == 0
        times.append(time.perf_counter() - t0)
    return root, times


@pytest.mark.slow
@criterion(9, "desk-scale training")
def test_c09_training(desk_run):
    root, times = desk_run
    assert times[0] <= 30 * 60
    rows = (root / "a.ckpt.log.tsv").read_text().splitlines()[1:]
    log = [(int(i), float(lr), float(loss)) for i, lr, loss in (r.split("\t") for r in rows)]
    assert [r[0] for r in log] == list(range(3000))
    losses = [r[2] for r in log]
    assert abs(losses[0] - math.log(6)) <= 0.3, losses[0]
    sm = smoothed(losses, 50)
    assert sm[-1] < sm[100], (sm[100], sm[-1])
    test = read_dataset(root / "test")
    trained = evaluate(load_checkpoint(root / "a.ckpt"), test).miou()
    baseline = evaluate(build(preset("tiny-eda-ddb"), 6, seed=0), test).miou()
    print(f"\ninitial loss {losses[0]:.4f}; smoothed {sm[100]:.4f} -> {sm[-1]:.4f}; "
          f"held-out mIoU {trained:.4f} vs random {baseline:.4f}; {times[0]:.0f} s")
    assert trained >= 0.50
    assert trained >= 3 * baseline


@pytest.mark.slow
@criterion(11, "determinism")
def test_c11_determinism(desk_run):
    root, _ = desk_run
    assert (root / "a.ckpt").read_bytes() == (root / "b.ckpt").read_bytes()
    assert (root / "a.ckpt.log.tsv").read_bytes() == (root / "b.ckpt.log.tsv").read_bytes()
    a, b = root / "train", root / "train_again"
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert len(files) == 2 * 512 + 1
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes(), f


# ---------------------------------------------------------------------------
# 10: latency parity
# ---------------------------------------------------------------------------

@pytest.mark.slow
@criterion(10, "latency parity")
def test_c10_latency():
    names = ("edanet", "eda-ddb", "eda-ddb-l")
    # interleave rounds so slow drift of the machine hits every network alike
    times = {n: [] for n in names}
    nets = {n: build(preset(n), 6, seed=0) for n in names}
    for _ in range(4):
        for n in names:
            times[n] += benchmark_inference(nets[n], 480, 720, runs=3, warmup=1).times_ms
    mean = {n: float(np.mean(t)) for n, t in times.items()}
    print("\nmean ms " + ", ".join(f"{n} {m:.1f}" for n, m in mean.items()))
    assert 0.85 <= mean["eda-ddb"] / mean["edanet"] <= 1.15
    assert mean["eda-ddb-l"] > mean["eda-ddb"]


# ---------------------------------------------------------------------------
# 12: format round-trips
# ---------------------------------------------------------------------------

@criterion(12, "format round-trips")
def test_c12_round_trips(tmp_path):
    for name in preset_names():
        text = serialize_spec(preset(name))
        assert parse_spec(text) == preset(name) and serialize_spec(parse_spec(text)) == text
    rng = np.random.default_rng(12)
    for _ in range(100):
        spec = validate(random_spec(rng))
        assert parse_spec(serialize_spec(spec)) == spec

    net = build(preset("tiny-eda-ddb"), 6, seed=12)
    save_checkpoint(net, tmp_path / "a.ckpt")
    save_checkpoint(load_checkpoint(tmp_path / "a.ckpt"), tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert checkpoint_bytes(net) == (tmp_path / "a.ckpt").read_bytes()

    samples = generate_dataset(10, 12)
    write_dataset(tmp_path / "data", samples)
    for a, b in zip(samples, read_dataset(tmp_path / "data")):
        assert a.image.tobytes() == b.image.tobytes() and a.label.tobytes() == b.label.tobytes()
