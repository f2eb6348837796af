"""Acceptance criteria 1-9, one test each.

Every test is tagged ``acceptance(n, title)``; the conftest prints one
``ACCEPTANCE n PASS/FAIL`` line per criterion at the end of the run, with the
measured values.
"""
import json
import time

import numpy as np
import pytest

from heteraug.chainaug import ChainPolicy, Op, apply_chain, apply_op, mix
from heteraug.cli import main as cli_main
from heteraug.core import derive_rng, load_labels, save_labels
from heteraug.corruptions import Corruption, apply_corruption, constants_digest, psnr
from heteraug.metrics import MetricGrid, aggregate_c, mean_f1, miou
from heteraug.pipeline import Manifest, build_benchmark
from heteraug.randnet import Res2BlockParams, forward, res2_forward, sample_network

from conftest import random_image
from test_metrics import cm_of, oracle_f1, oracle_miou, random_pairs
from test_pipeline import make_fixture, tree_digest
from test_toyseg import grad_check_nets, grad_check_scene, gradient_check
import toy_experiment


def median(results, mode, key):
    return float(np.median([r[key] for r in results["runs"][mode]]))


# --- 1 ---------------------------------------------------------------------

HANDCRAFTED = [
    # (pred, gt, classes)
    (np.array([[0, 1], [1, 1]]), np.array([[0, 1], [0, 1]]), 2),
    (np.array([[2, 2, 0]]), np.array([[2, 1, 0]]), 3),
    (np.eye(4, dtype=int) * 3, np.eye(4, dtype=int) * 3, 4),
    (np.zeros((10, 10), int), np.arange(100).reshape(10, 10) % 4, 4),
]


@pytest.mark.acceptance(1, "metric oracle equivalence")
def test_criterion_1_metric_oracle(detail):
    t0 = time.perf_counter()
    worst = 0.0
    cases = [([(p, g)], k) for p, g, k in HANDCRAFTED]
    g = derive_rng(1, ["acceptance"])
    for k in (2, 3, 4):
        cases += [(random_pairs(g, k), k) for _ in range(10)]
    for pairs, k in cases:
        cm = cm_of(pairs, k)
        worst = max(worst,
                    abs(miou(cm) - oracle_miou(pairs, k)),
                    abs(mean_f1(cm) - oracle_f1(pairs, k)),
                    abs(mean_f1(cm, include_background=True) - oracle_f1(pairs, k, True)))
    for _ in range(10):
        scores = g.random((16, 5))
        flat = sum(scores.ravel().tolist()) / 80
        worst = max(worst, abs(aggregate_c(MetricGrid(scores=scores)) - flat))
    dt = time.perf_counter() - t0
    detail(f"{len(cases)} fixtures, max error {worst:.1e}, {dt:.2f}s")
    assert worst <= 1e-12
    assert dt < 1.0


# --- 2 ---------------------------------------------------------------------

@pytest.mark.acceptance(2, "aggregate structure (1/16 and constant grid)")
def test_criterion_2_aggregate_structure(detail):
    t0 = time.perf_counter()
    one_row = np.zeros((16, 5))
    one_row[7] = 1.0
    a = aggregate_c(MetricGrid(scores=one_row))
    consts = [aggregate_c(MetricGrid(scores=np.full((16, 5), c))) for c in (0.0, 0.3, 0.437, 1.0)]
    dt = time.perf_counter() - t0
    detail(f"one row -> {a!r}, {dt:.3f}s")
    assert a == 1 / 16 == 0.0625
    assert consts == pytest.approx([0.0, 0.3, 0.437, 1.0], abs=1e-15)
    assert dt < 1.0


# --- 3 ---------------------------------------------------------------------

OPS_PAIR = [(Op.EQUALIZE, Op.POSTERIZE), (Op.POSTERIZE, Op.SOLARIZE), (Op.SOLARIZE, Op.INVERT),
            (Op.INVERT, Op.SHARPNESS), (Op.SHARPNESS, Op.EQUALIZE)]


@pytest.mark.acceptance(3, "augmentation identities (bit-exact)")
def test_criterion_3_identities(detail, natural_images):
    t0 = time.perf_counter()
    g = derive_rng(3, ["acceptance"])
    imgs = natural_images[:10] + [random_image(g, 17, 23) for _ in range(10)]
    checks = 0
    for i, img in enumerate(imgs):
        other = random_image(g, *img.shape[:2])
        assert np.array_equal(mix(img, other, 1.0), img)
        closed = ChainPolicy(OPS_PAIR[i % 5], (False, False), 0.5)
        assert np.array_equal(apply_chain(img, closed), img)
        q = np.floor(img * 255 + 0.5) / 255
        assert np.array_equal(apply_op(apply_op(q, Op.INVERT), Op.INVERT), q)
        once = apply_op(img, Op.POSTERIZE)
        assert np.array_equal(apply_op(once, Op.POSTERIZE), once)
        net = sample_network(derive_rng(3, ["net", i]))
        x = g.normal(size=(*img.shape[:2], net.channels))
        blk = net.blocks[i % len(net.blocks)]
        assert np.array_equal(res2_forward(x, Res2BlockParams(blk.group_kernels, blk.fuse, 0.0)), x)
        net.head = np.zeros_like(net.head)
        assert np.array_equal(forward(net, img), img)
        checks += 6
    dt = time.perf_counter() - t0
    detail(f"{checks} identities held, {dt:.2f}s")
    assert dt < 5.0


# --- 4 ---------------------------------------------------------------------

@pytest.mark.acceptance(4, "toy-net gradient check")
def test_criterion_4_gradient_check(detail):
    t0 = time.perf_counter()
    img, gt = grad_check_scene()
    worst, kinked, total = 0.0, 0, 0
    for net in grad_check_nets(50):
        w, k, n = gradient_check(net, img, gt, eps=1e-4)
        worst, kinked, total = max(worst, w), kinked + k, total + n
    dt = time.perf_counter() - t0
    detail(f"50 nets, max relative error {worst:.1e} over {total - kinked} coordinates "
           f"({kinked} ReLU-kink stencils excluded), {dt:.1f}s")
    assert worst < 1e-3
    assert kinked < 0.01 * total
    assert dt < 30.0


# --- 5 ---------------------------------------------------------------------

@pytest.mark.acceptance(5, "corruption properties")
def test_criterion_5_corruption_properties(detail, natural_images, tmp_path):
    t0 = time.perf_counter()
    g = derive_rng(5, ["acceptance"])
    for c in Corruption:
        for i in range(50):
            h, w = int(g.integers(1, 48)), int(g.integers(1, 48))
            img = random_image(g, h, w)
            s = int(g.integers(1, 6))
            out = apply_corruption(img, c, s, derive_rng(5, ["fuzz", c.value, i]))
            assert out.shape == img.shape, (c, h, w)
            assert out.min() >= 0.0 and out.max() <= 1.0, (c, s)
    worst_rise = -np.inf
    for c in Corruption:
        means = []
        for s in range(1, 6):
            vals = [psnr(img, apply_corruption(img, c, s, derive_rng(5, ["psnr", c.value, i])))
                    for i, img in enumerate(natural_images)]
            means.append(float(np.mean(vals)))
        rise = max(np.diff(means))
        worst_rise = max(worst_rise, rise)
        assert rise <= 0.25, (c.value, means)
    data = make_fixture(tmp_path / "data")
    build_benchmark(data, tmp_path / "a", seed=11, threads=1)
    build_benchmark(data, tmp_path / "b", seed=11, threads=1)
    same = tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    dt = time.perf_counter() - t0
    detail(f"800 fuzz cases, worst PSNR rise {worst_rise:+.2f} dB, deterministic={same}, {dt:.0f}s")
    assert same
    assert dt < 180.0


# --- 6 ---------------------------------------------------------------------

@pytest.mark.acceptance(6, "benchmark cardinality and digest refusal")
def test_criterion_6_benchmark_cardinality(detail, tmp_path, capsys):
    t0 = time.perf_counter()
    data = make_fixture(tmp_path / "data")
    out = tmp_path / "bench"
    assert cli_main(["corrupt", "--data", str(data), "--out", str(out), "--seed", "7"]) == 0
    corrupted = [p for p in out.rglob("*.png") if p.parent.name.isdigit()]
    manifest = Manifest.load(out / "manifest.json")
    assert manifest.digest == constants_digest()

    pred = tmp_path / "pred"
    for rec in manifest.records:
        gt = load_labels(manifest.resolve(rec.label))
        for c in manifest.corruptions:
            for s in manifest.severities:
                save_labels(gt, pred / c.value / str(s) / f"{rec.id}.png")
    stamp = pred / "predictions.json"
    stamp.write_text(json.dumps({"benchmark_digest": manifest.digest}))
    ok = cli_main(["eval", "--pred", str(pred), "--manifest", str(out)])
    stamp.write_text(json.dumps({"benchmark_digest": "0" * 64}))
    refused = cli_main(["eval", "--pred", str(pred), "--manifest", str(out)])
    capsys.readouterr()
    dt = time.perf_counter() - t0
    detail(f"{len(corrupted)} corrupted files, matching digest exit {ok}, "
           f"mismatched digest exit {refused}, {dt:.1f}s")
    assert len(corrupted) == 240
    assert ok == 0 and refused == 2
    assert dt < 30.0


# --- 7 and 8 -----------------------------------------------------------------

# Pre-registered margin for criterion 7. One calibration run (training seed
# 0, data seed 0, 500/100 scenes, 20 epochs) measured mIoU_c 0.769 for Clean
# and 0.218 for HeterAug, i.e. a negative gain, so the calibration gives no
# positive margin to freeze. Delta is therefore fixed at the smallest value
# that still reads as "several points", two mIoU points.
DELTA = 0.02
CLEAN_TOLERANCE = 0.03
TIE = 0.005


@pytest.mark.acceptance(7, "HeterAug beats Clean on mIoU_c by Delta at par clean mIoU")
def test_criterion_7_headline(detail, toy_results):
    clean_c, heter_c = median(toy_results, "clean", "miou_c"), median(toy_results, "heteraug", "miou_c")
    clean, heter = median(toy_results, "clean", "clean"), median(toy_results, "heteraug", "clean")
    seconds = sum(r["seconds"] for m in ("clean", "heteraug") for r in toy_results["runs"][m])
    detail(f"median mIoU_c Clean {clean_c:.4f} HeterAug {heter_c:.4f} (gain {heter_c - clean_c:+.4f}, "
           f"Delta {DELTA}); clean mIoU Clean {clean:.4f} HeterAug {heter:.4f}; {seconds / 60:.1f} min")
    assert heter_c - clean_c >= DELTA
    assert abs(heter - clean) <= CLEAN_TOLERANCE
    assert seconds < 20 * 60


@pytest.mark.acceptance(8, "ablation ordering HeterAug >= max(single) >= Clean")
def test_criterion_8_ablation(detail, toy_results):
    m = {mode: median(toy_results, mode, "miou_c") for mode in toy_experiment.MODES}
    best_single = max(m["imageaug-only"], m["modelaug-only"])
    detail("median mIoU_c " + ", ".join(f"{k} {v:.4f}" for k, v in m.items())
           + f"; total {toy_results['seconds'] / 60:.1f} min")
    assert m["heteraug"] >= best_single - TIE
    assert best_single >= m["clean"] - TIE
    assert toy_results["seconds"] < 40 * 60


# --- 9 ---------------------------------------------------------------------

@pytest.mark.acceptance(9, "toy --seed 7 --quick is byte-reproducible")
def test_criterion_9_determinism(detail, tmp_path, capsys):
    t0 = time.perf_counter()
    for run in ("a", "b"):
        assert cli_main(["toy", "--seed", "7", "--quick", "--out", str(tmp_path / run)]) == 0
    capsys.readouterr()
    files = sorted(
        p.relative_to(tmp_path / "a")
        for sub in ("reports", "checkpoints")
        for p in (tmp_path / "a" / sub).iterdir()
    ) + [p.relative_to(tmp_path / "a") for p in [tmp_path / "a" / "comparison.csv"]]
    differing = [str(f) for f in files if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()]
    dt = time.perf_counter() - t0
    detail(f"{len(files)} files compared, {len(differing)} differ, {dt:.0f}s")
    assert len(files) == 5
    assert not differing
    assert dt < 600
