"""Keypoint and seat-belt evaluation.

Per-frame results are kept as raw tallies (:class:`FrameCounts`) so that any
grouping of frames can be re-scored from pooled counts (micro-averaging).
"""

from dataclasses import dataclass, field
from fractions import Fraction
import math

import numpy as np
from scipy.spatial import cKDTree

from .annotations import DEFAULT_HEADREST_DIAGONAL
from .exceptions import ConfigError, ShapeError
from .parsing import skeletonize_mask
from .targets import TargetConfig, render_seatbelt_mask
from .topology import DEFAULT_TOPOLOGY

BELT_METRICS = ("sensitivity", "specificity", "precision", "f1", "iou")


@dataclass(frozen=True)
class MetricConfig:
    alpha: float = 0.5
    default_reference: float = DEFAULT_HEADREST_DIAGONAL
    match_strategy: str = "greedy_by_neck_distance"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if not self.default_reference > 0:
            raise ConfigError("default_reference must be > 0")
        if self.match_strategy != "greedy_by_neck_distance":
            raise ConfigError(f"unknown match_strategy {self.match_strategy!r}")

    def to_dict(self):
        return dict(self.__dict__)


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other):
        return Confusion(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @classmethod
    def from_masks(cls, pred, gt):
        pred = np.asarray(pred, dtype=bool)
        gt = np.asarray(gt, dtype=bool)
        if pred.shape != gt.shape:
            raise ShapeError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
        return cls(
            int(np.count_nonzero(pred & gt)),
            int(np.count_nonzero(pred & ~gt)),
            int(np.count_nonzero(~pred & gt)),
            int(np.count_nonzero(~pred & ~gt)),
        )


def _ratio(num, den, exact):
    if den == 0:
        return None
    return Fraction(num, den) if exact else num / den


def confusion_rates(c, exact=False):
    """Five belt metrics from a confusion matrix.

    Empty denominators give ``None`` (absent), except IOU and F1 with both
    masks empty, which are 1.
    """
    sens = _ratio(c.tp, c.tp + c.fn, exact)
    prec = _ratio(c.tp, c.tp + c.fp, exact)
    specif = _ratio(c.tn, c.tn + c.fp, exact)
    if sens is not None and prec is not None and sens + prec > 0:
        f1 = 2 * prec * sens / (prec + sens)
    elif 2 * c.tp + c.fp + c.fn == 0:
        f1 = Fraction(1) if exact else 1.0
    else:
        f1 = _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, exact)
    iou = _ratio(c.tp, c.tp + c.fp + c.fn, exact)
    if iou is None:
        iou = Fraction(1) if exact else 1.0
    return {"sensitivity": sens, "specificity": specif, "precision": prec, "f1": f1, "iou": iou}


def segmentation_metrics(pred_mask, gt_mask, exact=False):
    return confusion_rates(Confusion.from_masks(pred_mask, gt_mask), exact)


def curve_distance(pred_mask, gt_mask):
    """Symmetric mean nearest-neighbour distance between the thinned masks, or None if either is empty."""
    a = np.argwhere(skeletonize_mask(np.asarray(pred_mask, dtype=bool)))
    b = np.argwhere(skeletonize_mask(np.asarray(gt_mask, dtype=bool)))
    if len(a) == 0 or len(b) == 0:
        return None
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    return float((d_ab.mean() + d_ba.mean()) / 2)


# -- keypoints ---------------------------------------------------------------

def _xy(joint):
    return None if joint is None else (float(joint[0]), float(joint[1]))


def _anchor(joints, neck):
    if neck is not None and joints[neck] is not None:
        return joints[neck]
    present = [j for j in joints if j is not None]
    if not present:
        return None
    return (sum(p[0] for p in present) / len(present), sum(p[1] for p in present) / len(present))


def match_persons(pred, gt, neck=1):
    """Greedy pred->gt pairing by neck distance (joint centroid when a neck is missing)."""
    pairs = []
    for i, p in enumerate(pred):
        ap = _anchor(p, neck)
        if ap is None:
            continue
        for k, g in enumerate(gt):
            ag = _anchor(g, neck)
            if ag is None:
                continue
            pairs.append((math.hypot(ap[0] - ag[0], ap[1] - ag[1]), i, k))
    pairs.sort()
    used_p, used_g, matches = set(), set(), {}
    for _, i, k in pairs:
        if i in used_p or k in used_g:
            continue
        used_p.add(i)
        used_g.add(k)
        matches[k] = i
    return matches


@dataclass
class FrameCounts:
    correct: list
    annotated: list
    belt: Confusion = field(default_factory=Confusion)
    curve_sum: float = 0.0
    curve_frames: int = 0
    false_positive_skeletons: int = 0
    frames: int = 1

    def __add__(self, other):
        return FrameCounts(
            [a + b for a, b in zip(self.correct, other.correct)],
            [a + b for a, b in zip(self.annotated, other.annotated)],
            self.belt + other.belt,
            self.curve_sum + other.curve_sum,
            self.curve_frames + other.curve_frames,
            self.false_positive_skeletons + other.false_positive_skeletons,
            self.frames + other.frames,
        )

    @classmethod
    def empty(cls, n_joints):
        return cls([0] * n_joints, [0] * n_joints, frames=0)


def pckh_counts(pred, gt, reference, cfg=MetricConfig(), neck=1, n_joints=None):
    """Per-joint ``(correct, annotated, unmatched_predictions)`` tallies for one frame.

    ``pred`` and ``gt`` are sequences of per-joint point lists (entries may be
    ``(x, y)``, ``(x, y, score)`` or ``None``).
    """
    if not reference > 0:
        raise ValueError(f"reference length must be > 0, got {reference}")
    pred = [[_xy(j) for j in p] for p in pred]
    gt = [[_xy(j) for j in g] for g in gt]
    if n_joints is None:
        n_joints = len(gt[0]) if gt else (len(pred[0]) if pred else 0)
    n = n_joints
    tol = cfg.alpha * reference
    matches = match_persons(pred, gt, neck)
    correct, annotated = [0] * n, [0] * n
    for k, g in enumerate(gt):
        p = pred[matches[k]] if k in matches else None
        for j, gj in enumerate(g):
            if gj is None:
                continue
            annotated[j] += 1
            pj = None if p is None else p[j]
            if pj is not None and math.hypot(pj[0] - gj[0], pj[1] - gj[1]) <= tol:
                correct[j] += 1
    return correct, annotated, len(pred) - len(matches)


def mpckh(pred, gt, reference, cfg=MetricConfig(), neck=1, topology=DEFAULT_TOPOLOGY, exact=False):
    """Per-joint and overall fraction of annotated joints within ``alpha * reference``."""
    correct, annotated, _ = pckh_counts(pred, gt, reference, cfg, neck)
    names = topology.joints if len(topology.joints) == len(correct) else range(len(correct))
    per_joint = {name: _ratio(c, a, exact) for name, c, a in zip(names, correct, annotated)}
    return per_joint, _ratio(sum(correct), sum(annotated), exact)


def evaluate_frame(detections, annotation, topology=DEFAULT_TOPOLOGY, cfg=MetricConfig()):
    """Tally one frame of detections against its ground truth."""
    neck = topology.index("neck") if "neck" in topology.joints else None
    reference = annotation.headrest_diagonal or cfg.default_reference
    correct, annotated, fp = pckh_counts(
        [s.joints for s in detections.persons], [p.joints for p in annotation.persons], reference, cfg, neck,
        topology.n_joints,
    )
    gt_mask = render_seatbelt_mask(annotation, TargetConfig(stride=detections.stride))[:, :, 0] > 0
    pred_mask = np.asarray(detections.belt_mask, dtype=bool)
    belt = Confusion.from_masks(pred_mask, gt_mask)
    dist = curve_distance(pred_mask, gt_mask)
    return FrameCounts(
        correct, annotated, belt,
        curve_sum=0.0 if dist is None else dist * detections.stride,
        curve_frames=0 if dist is None else 1,
        false_positive_skeletons=fp,
    )


@dataclass
class MetricReport:
    per_joint_mpckh: dict
    overall_mpckh: float
    belt: dict
    curve_distance: float
    frame_count: int
    false_positive_skeletons: int
    counts: FrameCounts = field(repr=False, default=None)

    @classmethod
    def from_counts(cls, counts, topology=DEFAULT_TOPOLOGY):
        per_joint = {
            name: _ratio(c, a, False) for name, c, a in zip(topology.joints, counts.correct, counts.annotated)
        }
        overall = _ratio(sum(counts.correct), sum(counts.annotated), False)
        curve = counts.curve_sum / counts.curve_frames if counts.curve_frames else None
        return cls(per_joint, overall, confusion_rates(counts.belt), curve, counts.frames,
                   counts.false_positive_skeletons, counts)

    def to_dict(self):
        c = self.counts
        return {
            "per_joint_mpckh": self.per_joint_mpckh,
            "overall_mpckh": self.overall_mpckh,
            "belt": self.belt,
            "curve_distance": self.curve_distance,
            "frame_count": self.frame_count,
            "false_positive_skeletons": self.false_positive_skeletons,
            "counts": None if c is None else {
                "correct": c.correct, "annotated": c.annotated,
                "belt": {"tp": c.belt.tp, "fp": c.belt.fp, "fn": c.belt.fn, "tn": c.belt.tn},
            },
        }

    def format_text(self):
        lines = [f"frames: {self.frame_count}", "", f"{'joint':<16}{'mPCKh':>9}"]
        for name, v in self.per_joint_mpckh.items():
            lines.append(f"{name:<16}{_pct(v):>9}")
        lines.append(f"{'overall':<16}{_pct(self.overall_mpckh):>9}")
        lines.append("")
        lines.append("  ".join(f"{m:>11}" for m in BELT_METRICS))
        lines.append("  ".join(f"{_pct(self.belt[m]):>11}" for m in BELT_METRICS))
        dist = "absent" if self.curve_distance is None else f"{self.curve_distance:.2f} px"
        lines.append("")
        lines.append(f"belt curve distance: {dist}")
        lines.append(f"false-positive skeletons: {self.false_positive_skeletons}")
        return "\n".join(lines)


def _pct(v):
    return "n/a" if v is None else f"{100 * float(v):.2f}%"


def aggregate(counts_iter, n_joints):
    total = FrameCounts.empty(n_joints)
    for c in counts_iter:
        total = total + c
    return total


def breakdown(per_frame, annotations, attribute_key, topology=DEFAULT_TOPOLOGY):
    """Micro-averaged report per value of ``attribute_key``.

    ``per_frame`` maps image_id to :class:`FrameCounts`. Frames without the
    attribute are left out of every row.
    """
    annotations = list(annotations)
    if not annotations:
        return {}
    if not any(attribute_key in a.attributes for a in annotations):
        raise ValueError(f"no frame carries attribute {attribute_key!r}")
    groups = {}
    for a in annotations:
        value = a.attributes.get(attribute_key)
        if value is None:
            continue
        if a.image_id not in per_frame:
            raise KeyError(f"no frame report for image_id {a.image_id!r}")
        groups.setdefault(value, []).append(per_frame[a.image_id])
    return {
        value: MetricReport.from_counts(aggregate(rows, topology.n_joints), topology)
        for value, rows in sorted(groups.items())
    }


def format_breakdown(table, attribute_key):
    head = f"{attribute_key:<18}{'frames':>7}{'mPCKh':>9}" + "".join(f"{m[:11]:>13}" for m in BELT_METRICS)
    lines = [head]
    for value, rep in table.items():
        lines.append(
            f"{value:<18}{rep.frame_count:>7}{_pct(rep.overall_mpckh):>9}"
            + "".join(f"{_pct(rep.belt[m]):>13}" for m in BELT_METRICS)
        )
    return "\n".join(lines)
