"""Acceptance criteria 1-9. Each test logs one PASS/FAIL line to the terminal summary."""

import itertools
import json
import time

import numpy as np
import pytest

from lsdefect import _backend
from lsdefect.analytics import extract_all, render_csv
from lsdefect.annotset import rle_decode, rle_encode
from lsdefect.classes import ALL_CLASSES
from lsdefect.cli import main
from lsdefect.kernels import BBox, box_iou, mask_iou, nms, roi_align, roi_pool
from lsdefect.metrics import EvalConfig, evaluate, summary_from_table
from lsdefect.segmentor import DefectInstance, RuleBasedSegmentor
from lsdefect.synthline import SceneSpec, make_image, plan_jobs

from oracles import box_iou_brute, mask_iou_brute, nms_brute, rle_brute, roi_align_brute, roi_pool_brute

REPORTED_INITIAL = {"line_collapse": (0.822, 0.822), "single_bridge": (1.00, 1.00), "thin_bridge": (1.00, 1.00), "multi_bridge_nh": (0.833, 0.515)}
REPORTED_FINAL = {"line_collapse": (0.891, 0.891), "single_bridge": (1.00, 1.00), "thin_bridge": (1.00, 1.00), "multi_bridge_nh": (0.851, 0.851)}
# float slack on top of a stated tolerance; 0.9355 vs 0.936 sits exactly on the edge
FLOAT_EPS = 1e-12


def record(log, n, ok, detail):
    log.append(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
    assert ok, detail


def make_test_split(spec, per_class=10):
    """Images of the 10-per-class test split, with ground-truth instances."""
    jobs = plan_jobs({"test": {c.value: per_class for c in ALL_CLASSES}})
    imgs, gts = {}, {}
    for j in jobs:
        img, ann = make_image(spec, j)
        imgs[j.image_id] = img
        gts[j.image_id] = [DefectInstance.from_mask(i.defect_class, 1.0, m) for i, m in zip(ann.instances, ann.masks())]
    return imgs, gts


def predict_all(imgs):
    seg = RuleBasedSegmentor()
    return {k: seg.predict(v) for k, v in imgs.items()}


def test_c1_table_arithmetic(acceptance_log):
    fin, ini = summary_from_table(REPORTED_FINAL), summary_from_table(REPORTED_INITIAL)
    got = (fin.map_bbox, fin.map_segmentation, ini.map_bbox, ini.map_segmentation)
    want = (0.936, 0.936, 0.914, 0.834)
    ok = all(abs(g - w) <= 0.0005 + FLOAT_EPS for g, w in zip(got, want))
    record(acceptance_log, 1, ok, "mAP " + ", ".join(f"{g:.5f}~{w}" for g, w in zip(got, want)))


def test_c2_kernel_oracles(acceptance_log):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst, nms_bad, cases = 0.0, 0, 1000
    for _ in range(cases):
        x = np.sort(rng.integers(0, 20, 2)) + np.array([0, 1])
        y = np.sort(rng.integers(0, 20, 2)) + np.array([0, 1])
        u = np.sort(rng.integers(0, 20, 2)) + np.array([0, 1])
        v = np.sort(rng.integers(0, 20, 2)) + np.array([0, 1])
        a, b = BBox(x[0], y[0], x[1], y[1]), BBox(u[0], v[0], u[1], v[1])
        worst = max(worst, abs(box_iou(a, b) - box_iou_brute(a.as_xyxy(), b.as_xyxy())))
        fa = BBox(*rng.uniform(0, 10, 2), *rng.uniform(10, 20, 2))
        fb = BBox(*rng.uniform(0, 10, 2), *rng.uniform(10, 20, 2))
        worst = max(worst, abs(box_iou(fa, fb) - box_iou_brute(fa.as_xyxy(), fb.as_xyxy())))
    for _ in range(cases):
        ma = rng.random((8, 8)) < rng.random()
        mb = rng.random((8, 8)) < rng.random()
        worst = max(worst, abs(mask_iou(ma, mb) - mask_iou_brute(ma.tolist(), mb.tolist())))
    for _ in range(cases):
        n = int(rng.integers(0, 12))
        corners = rng.integers(0, 12, (n, 2))
        sizes = rng.integers(1, 13, (n, 2))
        boxes = [BBox(x, y, x + w, y + h) for (x, y), (w, h) in zip(corners.tolist(), sizes.tolist())]
        scores = [float(s) for s in rng.choice([0.2, 0.5, 0.8], n)]
        thr = float(rng.choice([0.0, 0.3, 0.5, 0.7, 1.0]))
        got = nms(list(zip(boxes, scores)), thr)
        want = nms_brute([b.as_xyxy() for b in boxes], scores, thr)
        nms_bad += sorted(got) != sorted(want)
    dt = time.perf_counter() - t0
    ok = worst <= 1e-9 and nms_bad == 0 and dt < 10
    record(acceptance_log, 2, ok, f"{cases} cases each, max IoU err {worst:.1e}, NMS mismatches {nms_bad}, {dt:.2f}s ({_backend.BACKEND})")


def test_c3_roi_align(acceptance_log):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst, cases = 0.0, 1000
    for _ in range(cases):
        fm = rng.normal(size=(int(rng.integers(3, 12)), int(rng.integers(3, 12))))
        h, w = fm.shape
        x0, y0 = rng.uniform(-2, w, 1)[0], rng.uniform(-2, h, 1)[0]
        roi = (x0, y0, x0 + rng.uniform(0.2, w), y0 + rng.uniform(0.2, h))
        ow, oh, s = (int(v) for v in rng.integers(1, 5, 3))
        got = roi_align(fm, BBox(*roi), ow, oh, s)
        want = np.array(roi_align_brute(fm.tolist(), roi, ow, oh, s))
        worst = max(worst, float(np.abs(got - want).max()))
        pw = roi_pool(fm, BBox(*roi), ow, oh)
        worst = max(worst, float(np.abs(pw - np.array(roi_pool_brute(fm.tolist(), roi, ow, oh))).max()))

    # affine map f(x, y) = 2x - 3y + 1 sampled at cell centers, queried inside its interior
    ys, xs = np.mgrid[0:16, 0:16].astype(float)
    fm = 2 * xs - 3 * ys + 1
    affine_err = 0.0
    for _ in range(200):
        x0, y0 = rng.uniform(0, 8, 2)
        bw, bh = rng.uniform(1, 7, 2)
        out = roi_align(fm, BBox(x0, y0, x0 + bw, y0 + bh), 4, 4, 1)
        cx = x0 + (np.arange(4) + 0.5) * bw / 4
        cy = y0 + (np.arange(4) + 0.5) * bh / 4
        affine_err = max(affine_err, float(np.abs(out - (2 * cx[None, :] - 3 * cy[:, None] + 1)).max()))

    ramp = np.tile(np.arange(10.0), (10, 1))
    a, b = BBox(2.0, 2.0, 6.0, 6.0), BBox(2.3, 2.4, 6.3, 6.4)
    same_pool = np.array_equal(roi_pool(ramp, a, 2, 2), roi_pool(ramp, b, 2, 2))
    diff_align = not np.allclose(roi_align(ramp, a, 2, 2), roi_align(ramp, b, 2, 2))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-6 and affine_err <= 1e-6 and same_pool and diff_align and dt < 10
    record(
        acceptance_log,
        3,
        ok,
        f"{cases} cases max err {worst:.1e}, affine err {affine_err:.1e}, pool equal {same_pool}, align differs {diff_align}, {dt:.2f}s",
    )


def test_c4_rle(acceptance_log):
    t0 = time.perf_counter()
    bad = 0
    for bits in itertools.product([False, True], repeat=9):
        m = np.array(bits).reshape(3, 3)
        r = rle_encode(m)
        bad += list(r.counts) != rle_brute(m.tolist()) or not np.array_equal(rle_decode(r), m)
    rng = np.random.default_rng(4)
    n_random = 1000
    for i in range(n_random):
        if i % 2:
            m = rng.random((480, 480)) < rng.random()
        else:
            # blocky masks give long runs, closer to real defect masks
            m = np.kron(rng.random((30, 30)) < rng.random(), np.ones((16, 16), bool))
        r = rle_encode(m)
        bad += sum(r.counts) != 230400 or not np.array_equal(rle_decode(r), m)
    dt = time.perf_counter() - t0
    record(acceptance_log, 4, bad == 0 and dt < 10, f"512 exhaustive + {n_random} random 480x480, {bad} mismatches, {dt:.2f}s")


def _ap_line(summary):
    return ", ".join(f"{c.defect_class.value}={c.bbox_ap:.3f}/{c.segmentation_ap:.3f}" for c in summary.per_class)


def test_c5_closed_loop_zero_noise(acceptance_log):
    t0 = time.perf_counter()
    imgs, gts = make_test_split(SceneSpec())
    s = evaluate(predict_all(imgs), gts, EvalConfig())
    perfect = all(c.bbox_ap == 1.0 and c.segmentation_ap == 1.0 for c in s.per_class)
    clean_jobs = plan_jobs({"test": {"clean": 100}})
    seg = RuleBasedSegmentor()
    fps = sum(len(seg.predict(make_image(SceneSpec(seed=1000), j)[0])) for j in clean_jobs)
    dt = time.perf_counter() - t0
    ok = perfect and fps == 0 and dt < 30
    record(acceptance_log, 5, ok, f"AP50 {_ap_line(s)}; clean FPs {fps}; {dt:.1f}s")


def test_c6_robustness(acceptance_log):
    imgs, gts = make_test_split(SceneSpec(noise_sigma=10, edge_roughness_amp=1))
    s = evaluate(predict_all(imgs), gts, EvalConfig())
    record(acceptance_log, 6, s.map_bbox >= 0.90, f"sigma=10 roughness=1 mAP box {s.map_bbox:.3f} (seg {s.map_segmentation:.3f})")


def test_c7_morphometry(acceptance_log):
    spec = SceneSpec()
    jobs = plan_jobs({"test": {c.value: 10 for c in ALL_CLASSES}})
    area_bad = size_bad = 0
    seg = RuleBasedSegmentor()
    for j in jobs:
        img, ann = make_image(spec, j)
        preds = seg.predict(img)
        (inst,) = ann.instances
        gt_mask = ann.masks()[0]
        painted = int(gt_mask.sum())
        x0, y0, x1, y1 = inst.polygon.extents()
        g_len, g_wid = max(x1 - x0, y1 - y0), min(x1 - x0, y1 - y0)
        params = extract_all({j.image_id: preds})
        rows = render_csv(params).splitlines()[1:]
        if len(rows) != 1:
            area_bad += 1
            continue
        area = int(rows[0].split(",")[4])
        area_bad += area != painted
        size_bad += abs(params[0].length_px - g_len) > 1 or abs(params[0].width_px - g_wid) > 1
    ok = area_bad == 0 and size_bad == 0
    record(acceptance_log, 7, ok, f"{len(jobs)} instances, area mismatches {area_bad}, length/width > 1px off {size_bad}")


def test_c8_determinism(acceptance_log, tmp_path):
    outs = []
    for run in ("a", "b"):
        code = main(["all", "--out", str(tmp_path / run), "--count-per-class", "3", "--clean", "2", "--seed", "11", "--noise", "10", "--roughness", "1"])
        assert code == 0
        outs.append(((tmp_path / run / "report" / "report.csv").read_bytes(), json.loads((tmp_path / run / "eval.json").read_text())))
    ok = outs[0] == outs[1]
    rows = outs[0][0].decode().count("\n") - 1
    record(acceptance_log, 8, ok, f"two seeded runs: report.csv ({rows} rows) and eval.json identical={ok}")


@pytest.mark.slow
def test_c9_throughput(acceptance_log, tmp_path):
    t0 = time.perf_counter()
    code = main(["all", "--out", str(tmp_path), "--seed", "0"])
    dt = time.perf_counter() - t0
    n = len(json.loads((tmp_path / "dataset" / "manifest.json").read_text())["images"])
    ok = code == 0 and n == 600 and dt < 60
    record(acceptance_log, 9, ok, f"gen+detect+eval+report over {n} images in {dt:.1f}s single-threaded")
