"""File formats: NDT1 binary tensors and JSON-lines frame records.

NDT1 layout: the magic ``b"NDT1"``, a little-endian uint32 rank, ``rank``
uint32 dimensions (H, W, C order), then the float32 payload in row-major,
channel-last order.

Annotation and detection files hold one JSON object per line, validated
against ``schemas/annotation.schema.json``. Detection records reuse the
person layout of annotations and add per-joint scores, a run-length encoded
belt mask and belt instance summaries.
"""

from functools import lru_cache
from importlib import resources
import json
import os
import struct
import tempfile

import jsonschema
import numpy as np

from .annotations import FrameAnnotation, PersonAnnotation, Seatbelt, validate_frame
from .exceptions import FormatError, TruncatedError, ValidationError
from .topology import DEFAULT_TOPOLOGY

MAGIC = b"NDT1"


def atomic_write(path, data):
    """Write bytes or text to ``path`` via a temp file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    mode = "wb" if isinstance(data, (bytes, bytearray)) else "w"
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- tensors -----------------------------------------------------------------

def tensor_to_bytes(t):
    arr = np.asarray(t)
    if arr.dtype != np.float32:
        arr = arr.astype(np.float32)
    header = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def tensor_from_bytes(buf, source="<bytes>"):
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise FormatError(f"{source}: bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}")
    (rank,) = struct.unpack_from("<I", buf, 4)
    if rank > 8:
        raise FormatError(f"{source}: implausible rank {rank}")
    header = 8 + 4 * rank
    if len(buf) < header:
        raise TruncatedError(f"{source}: header truncated")
    dims = struct.unpack_from(f"<{rank}I", buf, 8)
    n = int(np.prod(dims, dtype=np.int64))
    payload = len(buf) - header
    if payload < 4 * n:
        raise TruncatedError(f"{source}: payload has {payload} bytes, expected {4 * n}")
    if payload > 4 * n:
        raise FormatError(f"{source}: {payload - 4 * n} trailing bytes after payload")
    return np.frombuffer(buf, dtype="<f4", count=n, offset=header).astype(np.float32).reshape(dims)


def save_tensor(path, t):
    atomic_write(path, tensor_to_bytes(t))


def load_tensor(path):
    with open(path, "rb") as fh:
        return tensor_from_bytes(fh.read(), source=os.fspath(path))


# -- masks -------------------------------------------------------------------

def mask_to_rle(mask):
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return []
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return counts


def rle_to_mask(counts, size):
    h, w = size
    if sum(counts) != h * w:
        raise FormatError(f"mask run lengths sum to {sum(counts)}, expected {h * w}")
    values = np.arange(len(counts)) % 2 == 1
    return np.repeat(values, counts).reshape(h, w)


# -- records -----------------------------------------------------------------

@lru_cache(maxsize=1)
def _validator():
    schema = json.loads(resources.files("nadsnet").joinpath("schemas/annotation.schema.json").read_text())
    return jsonschema.Draft202012Validator(schema)


def _schema_check(record, line):
    errors = sorted(_validator().iter_errors(record), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)
        path = path.lstrip(".") or "<record>"
        image_id = record.get("image_id") if isinstance(record, dict) else None
        raise ValidationError(err.message, image_id, path, line)


def _joints_to_record(joints, topology, scores=None):
    out = {}
    for j, (name, p) in enumerate(zip(topology.joints, joints)):
        if p is None:
            out[name] = {"visible": False}
        else:
            out[name] = {"visible": True, "x": p[0], "y": p[1]}
            if scores is not None:
                out[name]["score"] = scores[j]
    return out


def _joints_from_record(joints, topology, image_id, where, line):
    names = set(joints)
    expected = set(topology.joints)
    if names != expected:
        missing, extra = sorted(expected - names), sorted(names - expected)
        raise ValidationError(f"joint names differ from topology (missing {missing}, unknown {extra})",
                              image_id, where, line)
    points, scores = [], []
    for name in topology.joints:
        j = joints[name]
        points.append((j["x"], j["y"]) if j["visible"] else None)
        scores.append(j.get("score") if j["visible"] else None)
    return points, scores


def frame_to_record(frame, topology=DEFAULT_TOPOLOGY):
    record = {
        "image_id": frame.image_id,
        "image_size": list(frame.image_size),
        "persons": [{"joints": _joints_to_record(p.joints, topology)} for p in frame.persons],
        "seatbelts": [],
        "headrest_diagonal": frame.headrest_diagonal,
        "attributes": dict(frame.attributes),
    }
    for belt in frame.seatbelts:
        b = {"points": [list(p) for p in belt.points], "width": belt.width}
        if belt.includes_buckle is not None:
            b["includes_buckle"] = belt.includes_buckle
        record["seatbelts"].append(b)
    return record


def frame_from_record(record, topology=DEFAULT_TOPOLOGY, line=None):
    _schema_check(record, line)
    image_id = record["image_id"]
    persons = []
    for i, p in enumerate(record["persons"]):
        points, _ = _joints_from_record(p["joints"], topology, image_id, f"persons[{i}].joints", line)
        persons.append(PersonAnnotation(points))
    belts = [Seatbelt(b["points"], b["width"], b.get("includes_buckle")) for b in record["seatbelts"]]
    frame = FrameAnnotation(
        image_id=image_id,
        image_size=record["image_size"],
        persons=persons,
        seatbelts=belts,
        headrest_diagonal=record.get("headrest_diagonal"),
        attributes=record.get("attributes", {}),
    )
    try:
        return validate_frame(frame, topology)
    except ValidationError as exc:
        raise ValidationError(exc.detail, exc.image_id, exc.field, line) from None


def _read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                yield lineno, json.loads(text)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc.msg} (column {exc.colno})") from None


def _write_jsonl(path, records):
    atomic_write(path, "".join(json.dumps(r, sort_keys=False) + "\n" for r in records))


def load_annotations(path, topology=DEFAULT_TOPOLOGY):
    """Read and validate every frame in a JSON-lines annotation file."""
    frames = [frame_from_record(rec, topology, line) for line, rec in _read_jsonl(path)]
    seen = set()
    for f in frames:
        if f.image_id in seen:
            raise ValidationError("duplicate image_id", f.image_id, "image_id")
        seen.add(f.image_id)
    return frames


def save_annotations(path, frames, topology=DEFAULT_TOPOLOGY):
    _write_jsonl(path, [frame_to_record(f, topology) for f in frames])


def detections_to_record(det, topology=DEFAULT_TOPOLOGY):
    persons = []
    for skel in det.persons:
        points = [None if j is None else (j[0], j[1]) for j in skel.joints]
        scores = [None if j is None else j[2] for j in skel.joints]
        p = {"joints": _joints_to_record(points, topology, scores), "total_score": skel.total_score}
        if skel.role is not None:
            p["role"] = skel.role
        persons.append(p)
    h, w = det.belt_mask.shape
    return {
        "image_id": det.image_id,
        "image_size": list(det.image_size),
        "persons": persons,
        "seatbelts": [],
        "belt_mask": {"size": [h, w], "stride": det.stride, "counts": mask_to_rle(det.belt_mask)},
        "belt_instances": [{"area": b.area, "bbox": list(b.bbox)} for b in det.belt_instances],
    }


def detections_from_record(record, topology=DEFAULT_TOPOLOGY, line=None, stride=4):
    """Build detections from a detection record, or from a plain annotation record.

    Annotation records have no scores (taken as 1.0) and no mask; their belt
    polylines are rasterised at ``stride`` instead, so either file kind can be
    evaluated against ground truth.
    """
    from .parsing import FrameDetections, PersonSkeleton, BeltInstance
    from .targets import TargetConfig, render_seatbelt_mask

    _schema_check(record, line)
    image_id = record["image_id"]
    persons = []
    for i, p in enumerate(record["persons"]):
        points, scores = _joints_from_record(p["joints"], topology, image_id, f"persons[{i}].joints", line)
        joints = tuple(
            None if pt is None else (pt[0], pt[1], 1.0 if s is None else s) for pt, s in zip(points, scores)
        )
        present = [j[2] for j in joints if j is not None]
        total = p.get("total_score", float(sum(present)))
        persons.append(PersonSkeleton(joints, total, p.get("role")))
    if "belt_mask" in record:
        m = record["belt_mask"]
        mask = rle_to_mask(m["counts"], m["size"])
        stride = m["stride"]
        instances = [BeltInstance(None, b["area"], tuple(b["bbox"])) for b in record.get("belt_instances", [])]
    else:
        frame = frame_from_record(record, topology, line)
        mask = render_seatbelt_mask(frame, TargetConfig(stride=stride))[:, :, 0] > 0
        instances = []
    return FrameDetections(image_id, tuple(record["image_size"]), stride, tuple(persons), mask, tuple(instances))


def load_detections(path, topology=DEFAULT_TOPOLOGY, stride=4):
    return [detections_from_record(rec, topology, line, stride) for line, rec in _read_jsonl(path)]


def save_detections(path, detections, topology=DEFAULT_TOPOLOGY):
    _write_jsonl(path, [detections_to_record(d, topology) for d in detections])
