"""One test per acceptance criterion; each records a PASS/FAIL line for the terminal summary."""

import json
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from nadsnet import kernels as K
from nadsnet.annotations import FrameAnnotation
from nadsnet.cli import main
from nadsnet.graph import ArchitectureConfig, build_graph, count_parameters, forward
from nadsnet.io import (load_annotations, load_detections, save_annotations, save_detections,
                        tensor_from_bytes, tensor_to_bytes)
from nadsnet.metrics import (Confusion, FrameCounts, MetricConfig, MetricReport, aggregate, breakdown,
                             mpckh, pckh_counts, segmentation_metrics)
from nadsnet.parsing import ParseConfig, greedy_match, nms_peaks, parse_frame, skeletonize_mask, threshold_seatbelt
from nadsnet.targets import render_targets, segment_distance
from nadsnet.topology import DEFAULT_TOPOLOGY as TOPO
from scipy import ndimage

from conftest import ACCEPTANCE_RESULTS
from oracles import bilinear_loop, conv_loop, exhaustive_peaks, maxpool_loop
from synth import synthetic_frame

REPORTED_NADS = 39_334_301
REPORTED_BASELINE = 52_311_446


def record(number, title, ok, detail):
    ACCEPTANCE_RESULTS.append((number, title, bool(ok), detail))
    assert ok, detail


def test_1_shape_fidelity():
    problems, elapsed = [], {}
    for size in (384, 64, 128):
        t0 = time.perf_counter()
        cfg = ArchitectureConfig(input_size=size, channel_scale=Fraction(1, 8))
        x = np.random.default_rng(size).random((size, size, 3), dtype=np.float32)
        heads = forward(build_graph(cfg, seed=0), x)
        elapsed[size] = time.perf_counter() - t0
        s = size // 4
        shapes = (heads.keypoint_maps.shape, heads.paf_maps.shape, heads.seatbelt_map.shape)
        if shapes != ((s, s, 10), (s, s, 16), (s, s, 1)):
            problems.append(f"{size}: {shapes}")
    ok = not problems and elapsed[384] < 1.0
    record(1, "shape fidelity", ok,
           f"96x96x(10,16,1) at 384, scaled at 64/128; 384 check {elapsed[384]:.2f} s (limit 1 s)"
           + (f"; mismatches {problems}" if problems else ""))


def test_2_parameter_comparison():
    n = count_parameters(build_graph(ArchitectureConfig(variant="nads_net"), init="none"))[1]
    b = count_parameters(build_graph(ArchitectureConfig(variant="six_stage_baseline"), init="none"))[1]
    ratio = n / b
    record(2, "parameter comparison", n < b and 0.65 <= ratio <= 0.85,
           f"nads_net {n:,} (delta {n - REPORTED_NADS:+,}), baseline {b:,} "
           f"(delta {b - REPORTED_BASELINE:+,}), ratio {ratio:.4f} in [0.65, 0.85]")


def test_3_relative_speed(tmp_path):
    out = tmp_path / "bench.json"
    t0 = time.perf_counter()
    code = main(["bench", "--input-size", "384", "--channel-scale", "1/8", "--frames", "20",
                 "--out", str(out), "--manifest", str(tmp_path / "m.json")])
    elapsed = time.perf_counter() - t0
    data = json.loads(out.read_text())
    nads, base = data["nads_net"]["median_ms"], data["six_stage_baseline"]["median_ms"]
    record(3, "relative speed ordering", code == 0 and nads < base and elapsed < 120,
           f"median nads_net {nads:.1f} ms < baseline {base:.1f} ms over 20 frames; run {elapsed:.1f} s (limit 120 s)")


def test_4_round_trip_parsing():
    t0 = time.perf_counter()
    worst_err, worst_iou, failures = 0.0, 1.0, []
    cfg = ParseConfig()
    for seed in range(50):
        frame = synthetic_frame(seed, min_sep=32.0)
        heads = render_targets(frame)
        det = parse_frame(heads, TOPO, cfg)
        if len(det.persons) != len(frame.persons):
            failures.append(f"{frame.image_id}: {len(det.persons)} of {len(frame.persons)} persons")
            continue
        remaining = list(det.persons)
        for person in frame.persons:
            best = min(remaining, key=lambda s: math.dist(s.joints[1][:2], person.joints[1]))
            remaining.remove(best)
            for gt, pr in zip(person.joints, best.joints):
                err = math.inf if pr is None else math.dist(gt, pr[:2])
                worst_err = max(worst_err, err)
        iou = segmentation_metrics(det.belt_mask, threshold_seatbelt(heads.seatbelt_map, cfg))["iou"]
        worst_iou = min(worst_iou, iou)
    elapsed = time.perf_counter() - t0
    ok = not failures and worst_err <= 4.0 and worst_iou >= 0.9 and elapsed < 30
    record(4, "round-trip parsing", ok,
           f"50 frames, worst joint error {worst_err:.2f} px (limit 4), worst belt IOU {worst_iou:.3f} "
           f"(limit 0.9), {elapsed:.1f} s (limit 30 s)" + (f"; {failures[:3]}" if failures else ""))


def test_5_metric_exactness():
    gt = np.zeros((4, 4), bool)
    pred = np.zeros((4, 4), bool)
    gt[0, 0] = gt[0, 1] = gt[1, 0] = True
    pred[0, 0] = pred[0, 1] = pred[2, 2] = True
    m = segmentation_metrics(pred, gt, exact=True)
    expected = {"sensitivity": Fraction(2, 3), "specificity": Fraction(12, 13), "precision": Fraction(2, 3),
                "f1": Fraction(2, 3), "iou": Fraction(1, 2)}
    joints = [(100.0 + 10 * j, 100.0) for j in range(9)]
    moved = [p if j < 3 else (p[0], p[1] + 200) for j, p in enumerate(joints)]
    _, overall = mpckh([moved], [joints], 170, exact=True)
    record(5, "metric exactness", m == expected and overall == Fraction(3, 9),
           f"4x4 fixture {', '.join(f'{k}={v}' for k, v in m.items())}; mPCKh fixture {overall}")


def test_6_property_suites():
    r = np.random.default_rng(2024)
    checks = {}

    kernel_cases = 0
    for _ in range(100):
        h, w, cin, cout = r.integers(3, 9), r.integers(3, 9), r.integers(1, 4), r.integers(1, 4)
        k, stride = int(r.choice([1, 3, 5])), int(r.integers(1, 3))
        x = r.standard_normal((h, w, cin)).astype(np.float32)
        wt = r.standard_normal((k, k, cin, cout)).astype(np.float32)
        b = r.standard_normal(cout).astype(np.float32)
        padding = str(r.choice(["same", "valid"])) if k <= min(h, w) else "same"
        ok = np.allclose(K.conv2d(x, wt, b, stride, padding), conv_loop(x, wt, b, stride, padding), atol=1e-5)
        pk = int(r.choice([2, 3]))
        ok &= np.array_equal(K.max_pool(x, pk, stride), maxpool_loop(x, pk, stride))
        f = int(r.choice([2, 4]))
        ok &= np.allclose(K.bilinear_upsample(x, f), bilinear_loop(x, f), atol=1e-5)
        kernel_cases += bool(ok)
    checks["kernels vs loops (100 cases)"] = kernel_cases == 100

    nms_ok = greedy_ok = True
    for _ in range(100):
        v = (r.integers(0, 5, (10, 12)) / 4).astype(np.float32)
        found = sorted((c.x, c.y) for c in nms_peaks(v, ParseConfig(nms_threshold=0.3)))
        nms_ok &= found == sorted(exhaustive_peaks(v, 3, 0.3))
        scores = np.round(r.random((r.integers(1, 6), r.integers(1, 6))), 1)
        pairs = greedy_match(scores, r.random(scores.shape) < 0.8)
        greedy_ok &= len({i for i, _ in pairs}) == len(pairs) == len({j for _, j in pairs})
    checks["NMS vs exhaustive scan"] = nms_ok
    checks["greedy uses each candidate once"] = greedy_ok

    mono = True
    for _ in range(100):
        gt = [[tuple(r.uniform(0, 300, 2)) for _ in range(9)]]
        pred = [[(x + r.normal(0, 50), y + r.normal(0, 50)) for x, y in gt[0]]]
        lo, hi = sorted(r.uniform(0.05, 2, 2))
        a = pckh_counts(pred, gt, 170, MetricConfig(alpha=lo))[0]
        b = pckh_counts(pred, gt, 170, MetricConfig(alpha=hi))[0]
        mono &= all(x <= y for x, y in zip(a, b))
    checks["mPCKh monotone in alpha"] = mono

    iou_ok = True
    for _ in range(1000):
        p, g = r.random((2, 6, 6)) < r.random()
        m = segmentation_metrics(p, g, exact=True)
        bounds = [m[k] for k in ("sensitivity", "precision") if m[k] is not None]
        iou_ok &= not bounds or m["iou"] <= min(bounds)
    checks["IOU <= min(sens, prec) on 1000 pairs"] = iou_ok

    frames = [synthetic_frame(s) for s in range(8)]
    per_frame = {f.image_id: FrameCounts(list(r.integers(0, 3, 9)), list(r.integers(3, 5, 9)),
                                         Confusion(*map(int, r.integers(0, 40, 4))))
                 for f in frames}
    table = breakdown(per_frame, frames, "illumination")
    micro = all(
        rep.overall_mpckh == MetricReport.from_counts(aggregate(
            [per_frame[f.image_id] for f in frames if f.attributes["illumination"] == key], 9)).overall_mpckh
        for key, rep in table.items()
    )
    checks["breakdown micro-average"] = micro and sum(rep.frame_count for rep in table.values()) == 8

    skel_ok = True
    ys, xs = np.mgrid[0:40, 0:40].astype(float)
    for _ in range(100):
        mask = np.zeros((40, 40), bool)
        for _ in range(r.integers(1, 4)):
            mask |= segment_distance(xs, ys, r.uniform(0, 40, 2), r.uniform(0, 40, 2)) <= r.uniform(0.5, 3)
        s = skeletonize_mask(mask)
        skel_ok &= bool((s <= mask).all()) and ndimage.label(s, np.ones((3, 3)))[1] == \
            ndimage.label(mask, np.ones((3, 3)))[1]
    checks["skeleton subset, components kept (100 bands)"] = skel_ok

    failed = [k for k, v in checks.items() if not v]
    record(6, "property suites", not failed,
           "all of: " + "; ".join(checks) if not failed else f"failed: {failed}")


def test_7_format_round_trips(tmp_path):
    r = np.random.default_rng(7)
    tensors_ok = all(
        tensor_to_bytes(tensor_from_bytes(tensor_to_bytes(t))) == tensor_to_bytes(t)
        and np.array_equal(tensor_from_bytes(tensor_to_bytes(t)), t)
        for t in (r.standard_normal(tuple(r.integers(1, 20, 3))).astype(np.float32) for _ in range(50))
    )
    frames = [synthetic_frame(s) for s in range(20)]
    frames.append(FrameAnnotation("empty", (64, 48)))
    save_annotations(tmp_path / "a.jsonl", frames)
    ann_ok = load_annotations(tmp_path / "a.jsonl") == frames

    dets = [parse_frame(render_targets(f), TOPO, ParseConfig(), image_id=f.image_id) for f in frames[:10]]
    save_detections(tmp_path / "d.jsonl", dets)
    back = load_detections(tmp_path / "d.jsonl")
    det_ok = all(
        (a.image_id, a.image_size, a.stride, a.persons) == (b.image_id, b.image_size, b.stride, b.persons)
        and np.array_equal(a.belt_mask, b.belt_mask)
        and [(i.area, i.bbox) for i in a.belt_instances] == [(i.area, i.bbox) for i in b.belt_instances]
        for a, b in zip(dets, back)
    ) and len(back) == len(dets)
    record(7, "format round-trips", tensors_ok and ann_ok and det_ok,
           f"NDT1 tensors (50) {'identical' if tensors_ok else 'DIFFER'}; annotations (21) "
           f"{'identical' if ann_ok else 'DIFFER'}; detections (10) {'identical' if det_ok else 'DIFFER'}")
