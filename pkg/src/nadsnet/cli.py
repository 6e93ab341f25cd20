"""``nadsnet`` command-line entry point.

Subcommands: summarize, gen-targets, parse, eval, breakdown, bench. Every
command accepts ``--config FILE`` (a JSON object whose keys are flag names,
with dashes or underscores); explicit flags win over file values. Each run
writes a JSON manifest recording argv, the resolved settings and per-stage
timings.

Exit codes: 0 success, 2 usage or input error, 3 internal invariant failure.
"""

import argparse
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
import hashlib
import json
import logging
import os
import statistics
import sys
import time

import numpy as np

from . import __version__
from .annotations import dataset_stats
from .exceptions import InvariantError, NadsNetError
from .graph import ArchitectureConfig, HeadOutputs, build_graph, count_parameters, forward, layer_table
from .io import (atomic_write, load_annotations, load_detections, load_tensor, save_detections,
                 save_tensor)
from .metrics import MetricConfig, MetricReport, aggregate, breakdown, evaluate_frame, format_breakdown
from .parsing import ParseConfig, parse_frame
from .targets import TargetConfig, render_targets
from .topology import DEFAULT_TOPOLOGY

log = logging.getLogger("nadsnet")

REPORTED_PARAMS = {"nads_net": 39_334_301, "six_stage_baseline": 52_311_446}
ARCH_NAMES = {"nads-net": "nads_net", "baseline": "six_stage_baseline"}
HEAD_SUFFIXES = ("keypoint", "paf", "seatbelt")


class UsageError(NadsNetError):
    pass


def _fraction(text):
    try:
        return Fraction(str(text))
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from exc


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _jsonable(value):
    if isinstance(value, Fraction):
        return str(value)
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


class Run:
    """Collects stage timings and writes the manifest at the end of a command."""

    def __init__(self, args, argv):
        self.args = args
        self.argv = list(argv)
        self.timing = {}
        self.inputs, self.outputs = [], []
        self.extra = {}

    def stage(self, name):
        run = self

        class _Timer:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                run.timing[name] = run.timing.get(name, 0.0) + 1e3 * (time.perf_counter() - self.t0)

        return _Timer()

    def write(self, path):
        settings = {k: _jsonable(v) for k, v in vars(self.args).items() if k not in ("func", "manifest")}
        manifest = {
            "command": self.args.command,
            "version": __version__,
            "argv": self.argv,
            "config": settings,
            "seed": getattr(self.args, "seed", None),
            "inputs": self.inputs,
            "outputs": self.outputs,
            "timing_ms": {k: round(v, 3) for k, v in self.timing.items()},
        }
        manifest.update(self.extra)
        atomic_write(path, json.dumps(manifest, indent=2) + "\n")


def _arch_config(args, variant):
    return ArchitectureConfig(variant=variant, input_size=args.input_size, channel_scale=args.channel_scale)


def _archs(choice):
    return list(ARCH_NAMES.values()) if choice == "both" else [ARCH_NAMES[choice]]


def _map(fn, items, jobs):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# -- summarize ---------------------------------------------------------------

def cmd_summarize(args, run):
    totals = {}
    for variant in ARCH_NAMES.values():
        with run.stage(f"build_{variant}"):
            graph = build_graph(_arch_config(args, variant), init="none")
        _, totals[variant] = count_parameters(graph)
        if variant in _archs(args.arch) and args.table:
            print(f"== {variant} ==")
            print(layer_table(graph))
            print()
    for variant in _archs(args.arch):
        line = f"{variant}: {totals[variant]:,} parameters"
        if args.channel_scale == 1:
            ref = REPORTED_PARAMS[variant]
            line += f" (reported {ref:,}; delta {totals[variant] - ref:+,})"
        print(line)
    ratio = totals["nads_net"] / totals["six_stage_baseline"]
    reported = REPORTED_PARAMS["nads_net"] / REPORTED_PARAMS["six_stage_baseline"]
    print(f"ratio nads_net/six_stage_baseline: {ratio:.4f} (reported {reported:.4f})")
    run.extra["parameters"] = totals
    run.extra["ratio"] = ratio
    return 0


# -- gen-targets -------------------------------------------------------------

def _check_id(image_id):
    if not image_id or "/" in image_id or "\\" in image_id or image_id in (".", ".."):
        raise UsageError(f"image_id {image_id!r} cannot be used as a file name")


def cmd_gen_targets(args, run):
    with run.stage("load"):
        frames = load_annotations(args.annotations)
    run.inputs.append(args.annotations)
    for f in frames:
        _check_id(f.image_id)
    cfg = TargetConfig(args.sigma, args.limb_width, args.stride)
    os.makedirs(args.out_dir, exist_ok=True)

    def work(frame):
        heads = render_targets(frame, DEFAULT_TOPOLOGY, cfg)
        paths = []
        for suffix, t in zip(HEAD_SUFFIXES, (heads.keypoint_maps, heads.paf_maps, heads.seatbelt_map)):
            path = os.path.join(args.out_dir, f"{frame.image_id}.{suffix}.ndt")
            save_tensor(path, t)
            paths.append(path)
        return paths

    with run.stage("render"):
        written = _map(work, frames, args.jobs)
    run.outputs.extend(p for paths in written for p in paths)
    print(f"rendered {len(frames)} frame(s) into {args.out_dir}")
    return 0


# -- parse -------------------------------------------------------------------

def _read_heads(directory):
    ids = sorted(
        name[: -len(".keypoint.ndt")] for name in os.listdir(directory) if name.endswith(".keypoint.ndt")
    )
    out = []
    for image_id in ids:
        tensors = {}
        for suffix in HEAD_SUFFIXES:
            path = os.path.join(directory, f"{image_id}.{suffix}.ndt")
            if suffix == "seatbelt" and not os.path.exists(path):
                tensors[suffix] = None
                continue
            tensors[suffix] = load_tensor(path)
        out.append((image_id, HeadOutputs(tensors["keypoint"], tensors["paf"], tensors["seatbelt"])))
    return out


def _read_images(directory):
    names = sorted(n for n in os.listdir(directory) if n.endswith(".ndt"))
    return [(n[: -len(".ndt")], load_tensor(os.path.join(directory, n))) for n in names]


def cmd_parse(args, run):
    cfg = ParseConfig(
        nms_threshold=args.nms_threshold, nms_window=args.nms_window, integral_samples=args.integral_samples,
        paf_point_threshold=args.paf_point_threshold, paf_fraction_required=args.paf_fraction_required,
        min_parts=args.min_parts, min_mean_score=args.min_mean_score, belt_threshold=args.belt_threshold,
        belt_min_area=args.belt_min_area, driver_side=args.driver_side,
    )
    stride = args.stride
    if args.images:
        run.inputs.append(args.images)
        arch = _arch_config(args, ARCH_NAMES[args.arch])
        stride = arch.output_stride
        with run.stage("build"):
            graph = build_graph(arch, seed=args.seed)
        with run.stage("load"):
            images = _read_images(args.images)
        with run.stage("forward"):
            items = _map(lambda it: (it[0], forward(graph, it[1])), images, args.jobs)
    else:
        if not args.heads:
            raise UsageError("parse needs --heads DIR or --images DIR")
        run.inputs.append(args.heads)
        with run.stage("load"):
            items = _read_heads(args.heads)

    def work(item):
        image_id, heads = item
        return parse_frame(heads, DEFAULT_TOPOLOGY, cfg, stride, image_id)

    with run.stage("parse"):
        detections = _map(work, items, args.jobs)
    for det in detections:
        if any(s.part_count < cfg.min_parts for s in det.persons):
            raise InvariantError(f"{det.image_id}: skeleton below min_parts survived assembly")
    save_detections(args.out, detections)
    run.outputs.append(args.out)
    n = sum(len(d.persons) for d in detections)
    print(f"parsed {len(detections)} frame(s), {n} skeleton(s) -> {args.out}")
    return 0


# -- eval / breakdown --------------------------------------------------------

def _evaluate(args, run):
    with run.stage("load"):
        frames = load_annotations(args.annotations)
        detections = load_detections(args.detections, stride=args.stride)
    run.inputs.extend([args.detections, args.annotations])
    by_id = {d.image_id: d for d in detections}
    ann_ids = {f.image_id for f in frames}
    missing = sorted(ann_ids - set(by_id))
    extra = sorted(set(by_id) - ann_ids)
    if missing or extra:
        raise UsageError(f"image ids differ between files; missing detections: {missing}; "
                         f"no annotation: {extra}")
    cfg = MetricConfig(alpha=args.alpha, default_reference=args.reference)
    with run.stage("evaluate"):
        counts = _map(lambda f: evaluate_frame(by_id[f.image_id], f, DEFAULT_TOPOLOGY, cfg), frames, args.jobs)
    return frames, dict(zip((f.image_id for f in frames), counts))


def cmd_eval(args, run):
    frames, per_frame = _evaluate(args, run)
    report = MetricReport.from_counts(aggregate(per_frame.values(), DEFAULT_TOPOLOGY.n_joints))
    for v in (report.overall_mpckh, *report.belt.values()):
        if v is not None and not 0 <= v <= 1:
            raise InvariantError(f"metric fraction {v} outside [0, 1]")
    print(report.format_text())
    if args.out:
        atomic_write(args.out, json.dumps(report.to_dict(), indent=2) + "\n")
        run.outputs.append(args.out)
    return 0


def cmd_breakdown(args, run):
    frames, per_frame = _evaluate(args, run)
    try:
        table = breakdown(per_frame, frames, args.by)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    print(format_breakdown(table, args.by))
    if args.out:
        atomic_write(args.out, json.dumps({k: r.to_dict() for k, r in table.items()}, indent=2) + "\n")
        run.outputs.append(args.out)
    return 0


# -- bench -------------------------------------------------------------------

def _digest(heads):
    h = hashlib.sha256()
    for t in (heads.keypoint_maps, heads.paf_maps, heads.seatbelt_map):
        if t is not None:
            h.update(np.ascontiguousarray(t).tobytes())
    return h.hexdigest()


def cmd_bench(args, run):
    rng = np.random.default_rng(args.seed)
    image = rng.random((args.input_size, args.input_size, 3), dtype=np.float32)
    results = {}
    for variant in _archs(args.arch):
        graph = build_graph(_arch_config(args, variant), seed=args.seed)
        for _ in range(args.warmup):
            forward(graph, image)
        samples = []
        for _ in range(args.frames):
            t0 = time.perf_counter()
            heads = forward(graph, image)
            samples.append(1e3 * (time.perf_counter() - t0))
        run.timing[f"forward_{variant}"] = sum(samples)
        results[variant] = {
            "frames": args.frames,
            "mean_ms": statistics.fmean(samples),
            "median_ms": statistics.median(samples),
            "min_ms": min(samples),
            "output_sha256": _digest(heads),
        }
        r = results[variant]
        print(f"{variant:<20} mean {r['mean_ms']:9.2f} ms   median {r['median_ms']:9.2f} ms   "
              f"({1e3 / r['median_ms']:.1f} fps)")
    if len(results) == 2:
        ratio = results["six_stage_baseline"]["median_ms"] / results["nads_net"]["median_ms"]
        results["baseline_over_nads_median"] = ratio
        print(f"baseline:nads_net median latency ratio {ratio:.3f} (reported fps ratio 18/12 = 1.5)")
    run.extra["results"] = results
    if args.out:
        atomic_write(args.out, json.dumps(results, indent=2) + "\n")
        run.outputs.append(args.out)
    return 0


# -- argument parsing --------------------------------------------------------

def _add_arch(p, default_arch):
    p.add_argument("--arch", choices=[*ARCH_NAMES, "both"] if default_arch == "both" else list(ARCH_NAMES),
                   default=default_arch)
    p.add_argument("--input-size", type=int, default=384)
    p.add_argument("--channel-scale", type=_fraction, default=Fraction(1))


def _add_common(p):
    p.add_argument("--config", help="JSON file of flag values; explicit flags override it")
    p.add_argument("--manifest", help="where to write the run manifest")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="nadsnet", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("summarize", help="layer table and parameter totals")
    _add_arch(p, "both")
    p.add_argument("--table", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("gen-targets", help="render NDT1 target tensors from annotations")
    p.add_argument("--annotations", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--sigma", type=float, default=2.0)
    p.add_argument("--limb-width", type=float, default=1.5)
    p.add_argument("--stride", type=_positive_int, default=4)
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.set_defaults(func=cmd_gen_targets)

    p = sub.add_parser("parse", help="decode head tensors (or a seeded forward pass) into detections")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--heads", help="directory of <id>.keypoint/.paf/.seatbelt.ndt tensors")
    src.add_argument("--images", help="directory of <id>.ndt input images run through seeded random weights")
    _add_arch(p, "nads-net")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stride", type=_positive_int, default=4)
    p.add_argument("--out", required=True)
    defaults = ParseConfig()
    for name in ("nms_threshold", "paf_point_threshold", "paf_fraction_required", "min_mean_score",
                 "belt_threshold"):
        p.add_argument("--" + name.replace("_", "-"), type=float, default=getattr(defaults, name))
    for name in ("nms_window", "integral_samples", "min_parts", "belt_min_area"):
        p.add_argument("--" + name.replace("_", "-"), type=int, default=getattr(defaults, name))
    p.add_argument("--driver-side", choices=["left", "right"], default=defaults.driver_side)
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.set_defaults(func=cmd_parse)

    for name, func, helptext in (("eval", cmd_eval, "score detections against annotations"),
                                 ("breakdown", cmd_breakdown, "scores grouped by a frame attribute")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--detections", required=True)
        p.add_argument("--annotations", required=True)
        p.add_argument("--alpha", type=float, default=0.5)
        p.add_argument("--reference", type=float, default=170.0,
                       help="reference length for frames without a headrest diagonal")
        p.add_argument("--stride", type=_positive_int, default=4)
        p.add_argument("--out", help="write the structured report here")
        p.add_argument("--jobs", type=_positive_int, default=1)
        if name == "breakdown":
            p.add_argument("--by", required=True, help="attribute key, e.g. illumination")
        p.set_defaults(func=func)

    p = sub.add_parser("bench", help="forward-pass latency of both architectures")
    _add_arch(p, "both")
    p.add_argument("--frames", type=_positive_int, default=20)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    for sp in sub.choices.values():
        _add_common(sp)
    return parser


def _config_path(argv):
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _apply_config_file(parser, argv):
    """Parse ``argv`` with values from ``--config`` installed as subcommand defaults."""
    path = _config_path(argv)
    command = next((tok for tok in argv if not tok.startswith("-")), None)
    sub = parser._subparsers._group_actions[0].choices.get(command)
    if not path or sub is None:
        return parser.parse_args(argv)
    try:
        with open(path, encoding="utf-8") as fh:
            values = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(values, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in values.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("config", "help"):
            raise UsageError(f"config {path}: unknown setting {key!r} for {command}")
        action = known[dest]
        if action.type is not None and value is not None and not isinstance(value, bool):
            value = action.type(str(value) if action.type is _fraction else value)
        defaults[dest] = value
        action.required = False
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _default_manifest(args):
    if args.manifest:
        return args.manifest
    if getattr(args, "out_dir", None):
        return os.path.join(args.out_dir, "manifest.json")
    if getattr(args, "out", None):
        return args.out + ".manifest.json"
    return f"nadsnet-{args.command}-manifest.json"


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = _apply_config_file(parser, argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    except (UsageError, argparse.ArgumentTypeError) as exc:
        print(f"nadsnet: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run = Run(args, argv)
    try:
        code = args.func(args, run)
        run.write(_default_manifest(args))
        return code
    except (InvariantError, AssertionError) as exc:
        print(f"nadsnet: internal error: {exc}", file=sys.stderr)
        return 3
    except (NadsNetError, OSError, ValueError, KeyError) as exc:
        print(f"nadsnet: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
