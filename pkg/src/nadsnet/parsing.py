"""Bottom-up decoding of head outputs into skeletons and seat-belt instances.

The pipeline per frame: non-maximum suppression on each joint channel,
line-integral scoring of candidate limbs against the PAF, greedy bipartite
matching per limb, and skeleton assembly in topology order. The seat-belt
map is thresholded and split into 8-connected components.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .exceptions import ConfigError, DegenerateSegmentError, ShapeError
from .topology import DEFAULT_TOPOLOGY


@dataclass(frozen=True)
class ParseConfig:
    nms_threshold: float = 0.1
    nms_window: int = 3
    integral_samples: int = 10
    paf_point_threshold: float = 0.05
    paf_fraction_required: float = 0.8
    min_parts: int = 4
    min_mean_score: float = 0.2
    belt_threshold: float = 0.5
    belt_min_area: int = 20
    driver_side: str = "right"

    def __post_init__(self):
        if not 0 <= self.nms_threshold <= 1:
            raise ConfigError("nms_threshold must lie in [0, 1]")
        if self.nms_window < 1 or self.nms_window % 2 == 0:
            raise ConfigError("nms_window must be a positive odd integer")
        if self.integral_samples < 2:
            raise ConfigError("integral_samples must be >= 2")
        if not -1 <= self.paf_point_threshold <= 1:
            raise ConfigError("paf_point_threshold must lie in [-1, 1]")
        if not 0 <= self.paf_fraction_required <= 1:
            raise ConfigError("paf_fraction_required must lie in [0, 1]")
        if self.min_parts < 1:
            raise ConfigError("min_parts must be >= 1")
        if not 0 <= self.belt_threshold <= 1:
            raise ConfigError("belt_threshold must lie in [0, 1]")
        if self.belt_min_area < 0:
            raise ConfigError("belt_min_area must be >= 0")
        if self.driver_side not in ("left", "right"):
            raise ConfigError("driver_side must be 'left' or 'right'")

    def to_dict(self):
        return dict(self.__dict__)


@dataclass(frozen=True)
class PartCandidate:
    joint_type: int
    x: int
    y: int
    score: float
    id: int

    @property
    def position(self):
        return (self.x, self.y)


@dataclass(frozen=True)
class LimbConnection:
    limb_type: int
    candidate_a: int
    candidate_b: int
    paf_score: float


@dataclass(frozen=True)
class PersonSkeleton:
    """``joints[j]`` is ``(x, y, score)`` or ``None``."""

    joints: tuple
    total_score: float
    role: str = None

    @property
    def part_count(self):
        return sum(j is not None for j in self.joints)


@dataclass(frozen=True)
class BeltInstance:
    pixels: np.ndarray
    area: int
    bbox: tuple


@dataclass(frozen=True)
class FrameDetections:
    image_id: str
    image_size: tuple
    stride: int
    persons: tuple = ()
    belt_mask: np.ndarray = None
    belt_instances: tuple = field(default=())


def _channel(t):
    arr = np.asarray(t, dtype=np.float32)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim != 2:
        raise ShapeError(f"expected a single-channel map, got shape {arr.shape}")
    return arr


def peak_mask(channel, window, threshold):
    """Boolean mask of window maxima; equal neighbours earlier in raster order win."""
    v = _channel(channel)
    r = window // 2
    padded = np.pad(v, r, constant_values=-np.inf)
    h, w = v.shape
    keep = v >= threshold
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx == 0:
                continue
            nb = padded[r + dy : r + dy + h, r + dx : r + dx + w]
            if dy < 0 or (dy == 0 and dx < 0):
                keep &= v > nb
            else:
                keep &= v >= nb
    return keep


def nms_peaks(channel, cfg=ParseConfig(), joint_type=0, start_id=0):
    """Candidates at window maxima >= ``cfg.nms_threshold``, by descending score then raster order."""
    v = _channel(channel)
    ys, xs = np.nonzero(peak_mask(v, cfg.nms_window, cfg.nms_threshold))
    scores = v[ys, xs]
    order = np.lexsort((xs, ys, -scores.astype(np.float64)))
    return [
        PartCandidate(joint_type, int(xs[i]), int(ys[i]), float(scores[i]), start_id + k)
        for k, i in enumerate(order)
    ]


def _bilinear_sample(field2, xs, ys):
    h, w = field2.shape[:2]
    xs = np.clip(xs, 0, w - 1)
    ys = np.clip(ys, 0, h - 1)
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[:, None]
    fy = (ys - y0)[:, None]
    top = field2[y0, x0] * (1 - fx) + field2[y0, x1] * fx
    bottom = field2[y1, x0] * (1 - fx) + field2[y1, x1] * fx
    return top * (1 - fy) + bottom * fy


def score_connection(paf_maps, limb_type, a, b, cfg=ParseConfig()):
    """Mean PAF alignment along the segment ``a``->``b`` and whether it passes the gates."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = b - a
    norm = float(np.hypot(d[0], d[1]))
    if norm == 0:
        raise DegenerateSegmentError(f"segment endpoints coincide at {tuple(a)}")
    unit = d / norm
    t = np.linspace(0.0, 1.0, cfg.integral_samples)
    field2 = np.asarray(paf_maps[:, :, 2 * limb_type : 2 * limb_type + 2], dtype=np.float64)
    vecs = _bilinear_sample(field2, a[0] + t * d[0], a[1] + t * d[1])
    dots = vecs @ unit
    score = float(dots.mean())
    passing = np.count_nonzero(dots > cfg.paf_point_threshold)
    valid = passing >= cfg.paf_fraction_required * cfg.integral_samples and score >= cfg.paf_point_threshold
    return score, bool(valid)


def greedy_match(scores, valid=None):
    """Greedy assignment on a score matrix: highest score first, each row/column used once.

    Ties go to the lower row index, then the lower column index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        return []
    valid = np.ones(scores.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    rows, cols = np.nonzero(valid)
    order = np.lexsort((cols, rows, -scores[rows, cols]))
    used_r, used_c, pairs = set(), set(), []
    for k in order:
        i, j = int(rows[k]), int(cols[k])
        if i in used_r or j in used_c:
            continue
        used_r.add(i)
        used_c.add(j)
        pairs.append((i, j))
    return pairs


def match_limbs(cands_a, cands_b, paf_maps, limb_type, cfg=ParseConfig(), topology=None):
    """Score every candidate pair for one limb and keep a greedy one-to-one subset."""
    if topology is not None:
        ja, jb = topology.limbs[limb_type]
        if any(c.joint_type != ja for c in cands_a) or any(c.joint_type != jb for c in cands_b):
            raise ShapeError(f"candidate joint types do not match limb {limb_type} ({ja}, {jb})")
    if not cands_a or not cands_b:
        return []
    cands_a = sorted(cands_a, key=lambda c: c.id)
    cands_b = sorted(cands_b, key=lambda c: c.id)
    scores = np.zeros((len(cands_a), len(cands_b)))
    valid = np.zeros(scores.shape, dtype=bool)
    for i, ca in enumerate(cands_a):
        for j, cb in enumerate(cands_b):
            if ca.position == cb.position:
                continue
            scores[i, j], valid[i, j] = score_connection(paf_maps, limb_type, ca.position, cb.position, cfg)
    return [
        LimbConnection(limb_type, cands_a[i].id, cands_b[j].id, float(scores[i, j]))
        for i, j in greedy_match(scores, valid)
    ]


def assemble_skeletons(all_connections, all_candidates, topology=DEFAULT_TOPOLOGY, cfg=ParseConfig()):
    """Group limb connections into persons, processing limbs in topology order.

    ``all_connections`` maps limb index to its connections (or is a sequence
    indexed by limb); ``all_candidates`` maps candidate id to
    :class:`PartCandidate` (or is any iterable of candidates). Returned
    skeletons use heatmap coordinates.
    """
    if not isinstance(all_candidates, dict):
        all_candidates = {c.id: c for c in all_candidates}
    if not isinstance(all_connections, dict):
        all_connections = dict(enumerate(all_connections))

    people = []  # each: {"slots": [cand id or None] * J, "score": float}
    owner = {}  # candidate id -> index into people (None once merged away)

    def new_person():
        people.append({"slots": [None] * topology.n_joints, "score": 0.0, "alive": True})
        return len(people) - 1

    def place(pi, joint, cid):
        people[pi]["slots"][joint] = cid
        people[pi]["score"] += all_candidates[cid].score
        owner[cid] = pi

    for limb_type, (ja, jb) in enumerate(topology.limbs):
        for conn in all_connections.get(limb_type, ()):
            ia, ib = conn.candidate_a, conn.candidate_b
            pa, pb = owner.get(ia), owner.get(ib)
            if pa is None and pb is None:
                pi = new_person()
                place(pi, ja, ia)
                place(pi, jb, ib)
                people[pi]["score"] += conn.paf_score
            elif pa is not None and pb is None:
                if people[pa]["slots"][jb] is None:
                    place(pa, jb, ib)
                    people[pa]["score"] += conn.paf_score
            elif pb is not None and pa is None:
                if people[pb]["slots"][ja] is None:
                    place(pb, ja, ia)
                    people[pb]["score"] += conn.paf_score
            elif pa != pb:
                sa, sb = people[pa]["slots"], people[pb]["slots"]
                if all(x is None or y is None for x, y in zip(sa, sb)):
                    for j, cid in enumerate(sb):
                        if cid is not None:
                            sa[j] = cid
                            owner[cid] = pa
                    people[pa]["score"] += people[pb]["score"] + conn.paf_score
                    people[pb]["alive"] = False

    skeletons = []
    for person in people:
        if not person["alive"]:
            continue
        count = sum(c is not None for c in person["slots"])
        if count < cfg.min_parts or person["score"] / count < cfg.min_mean_score:
            continue
        joints = tuple(
            None if cid is None
            else (float(all_candidates[cid].x), float(all_candidates[cid].y), all_candidates[cid].score)
            for cid in person["slots"]
        )
        skeletons.append(PersonSkeleton(joints, float(person["score"])))
    return skeletons


def threshold_seatbelt(seatbelt_map, cfg=ParseConfig()):
    return _channel(seatbelt_map) >= cfg.belt_threshold


EIGHT = np.ones((3, 3), dtype=bool)


def extract_belt_instances(mask, cfg=ParseConfig()):
    """8-connected components of at least ``belt_min_area`` pixels, largest first."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 3:
        mask = mask[:, :, 0]
    labels, n = ndimage.label(mask, structure=EIGHT)
    instances = []
    for lab in range(1, n + 1):
        rows, cols = np.nonzero(labels == lab)
        if rows.size < cfg.belt_min_area:
            continue
        bbox = (int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max()))
        instances.append(BeltInstance(np.stack([rows, cols], axis=1), int(rows.size), bbox))
    # label order is raster order of first pixel, so a stable sort keeps it as the tie-break
    instances.sort(key=lambda inst: -inst.area)
    return instances


def _zs_neighbours(img):
    p = np.pad(img, 1)
    h, w = img.shape
    # P2..P9 clockwise from north
    offs = ((0, 1), (0, 2), (1, 2), (2, 2), (2, 1), (2, 0), (1, 0), (0, 0))
    return [p[dy : dy + h, dx : dx + w] for dy, dx in offs]


def skeletonize_mask(mask):
    """Zhang-Suen thinning to one-pixel-wide centrelines.

    A component that plain parallel thinning would erase entirely (a 2x2
    block, for example) keeps one pixel so component counts survive.
    """
    mask = np.asarray(mask, dtype=bool)
    squeeze = mask.ndim == 3
    if squeeze:
        mask = mask[:, :, 0]
    img = mask.astype(np.uint8)
    while True:
        changed = False
        for step in (0, 1):
            n = _zs_neighbours(img)
            p2, p3, p4, p5, p6, p7, p8, p9 = n
            b = sum(n)
            seq = n + [p2]
            a = sum(((seq[k] == 0) & (seq[k + 1] == 1)).astype(np.uint8) for k in range(8))
            if step == 0:
                c = (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
            else:
                c = (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
            delete = (img == 1) & (b >= 2) & (b <= 6) & (a == 1) & c
            if delete.any():
                img[delete] = 0
                changed = True
        if not changed:
            break
    out = img.astype(bool)
    labels, n = ndimage.label(mask, structure=EIGHT)
    if n:
        kept = ndimage.sum(out, labels, index=np.arange(1, n + 1))
        for lab in np.flatnonzero(kept == 0) + 1:
            comp = labels == lab
            depth = ndimage.distance_transform_edt(np.pad(comp, 1))[1:-1, 1:-1]
            out[np.unravel_index(np.argmax(depth), depth.shape)] = True
    return out[:, :, None] if squeeze else out


def assign_roles(skeletons, image_width, driver_side="right", neck=1):
    """Label skeletons driver/front_passenger by which image half holds the neck.

    Falls back to the mean x of present joints when the neck is missing.
    Heuristic only: seat geometry is not modelled.
    """
    out = []
    for s in skeletons:
        ref = s.joints[neck] if neck is not None else None
        if ref is not None:
            x = ref[0]
        else:
            xs = [j[0] for j in s.joints if j is not None]
            x = sum(xs) / len(xs)
        on_right = x >= image_width / 2
        is_driver = on_right == (driver_side == "right")
        out.append(PersonSkeleton(s.joints, s.total_score, "driver" if is_driver else "front_passenger"))
    return out


def parse_frame(heads, topology=DEFAULT_TOPOLOGY, cfg=ParseConfig(), stride=4, image_id="", image_size=None):
    """Decode one frame's head outputs; joint coordinates come back in input pixels."""
    kp = np.asarray(heads.keypoint_maps, dtype=np.float32)
    paf = np.asarray(heads.paf_maps, dtype=np.float32)
    if kp.ndim != 3 or kp.shape[2] != topology.keypoint_channels:
        raise ShapeError(f"keypoint maps {kp.shape} do not have {topology.keypoint_channels} channels")
    if paf.shape != kp.shape[:2] + (topology.paf_channels,):
        raise ShapeError(f"PAF maps {paf.shape} do not match {kp.shape[:2]} x {topology.paf_channels}")
    h, w = kp.shape[:2]
    if image_size is None:
        image_size = (h * stride, w * stride)

    candidates, by_joint, next_id = {}, [], 0
    for j in range(topology.n_joints):
        found = nms_peaks(kp[:, :, j], cfg, joint_type=j, start_id=next_id)
        next_id += len(found)
        by_joint.append(found)
        candidates.update((c.id, c) for c in found)

    connections = {
        l: match_limbs(by_joint[ja], by_joint[jb], paf, l, cfg)
        for l, (ja, jb) in enumerate(topology.limbs)
    }
    skeletons = assemble_skeletons(connections, candidates, topology, cfg)
    scaled = [
        PersonSkeleton(
            tuple(None if p is None else (p[0] * stride, p[1] * stride, p[2]) for p in s.joints),
            s.total_score,
        )
        for s in skeletons
    ]
    neck = topology.index("neck") if "neck" in topology.joints else None
    scaled = assign_roles(scaled, image_size[1], cfg.driver_side, neck)

    if heads.seatbelt_map is None:
        mask = np.zeros((h, w), dtype=bool)
    else:
        mask = threshold_seatbelt(heads.seatbelt_map, cfg)
    instances = extract_belt_instances(mask, cfg)
    return FrameDetections(image_id, tuple(image_size), stride, tuple(scaled), mask, tuple(instances))
