"""Supervision targets rendered at heatmap resolution (input size / stride)."""

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError
from .graph import HeadOutputs
from .topology import DEFAULT_TOPOLOGY


@dataclass(frozen=True)
class TargetConfig:
    sigma: float = 2.0
    limb_width: float = 1.5
    stride: int = 4

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError(f"sigma must be > 0, got {self.sigma}")
        if not self.limb_width > 0:
            raise ConfigError(f"limb_width must be > 0, got {self.limb_width}")
        if int(self.stride) != self.stride or self.stride < 1:
            raise ConfigError(f"stride must be a positive integer, got {self.stride}")

    def to_dict(self):
        return {"sigma": self.sigma, "limb_width": self.limb_width, "stride": self.stride}


def heatmap_shape(image_size, stride):
    h, w = image_size
    return -(-h // stride), -(-w // stride)


def _grid(shape):
    ys, xs = np.mgrid[0 : shape[0], 0 : shape[1]]
    return xs.astype(np.float64), ys.astype(np.float64)


def segment_distance(xs, ys, a, b):
    """Distance from every grid point to the closed segment ``a``-``b``."""
    ax, ay = a
    dx, dy = b[0] - ax, b[1] - ay
    length2 = dx * dx + dy * dy
    if length2 == 0:
        return np.hypot(xs - ax, ys - ay)
    t = np.clip(((xs - ax) * dx + (ys - ay) * dy) / length2, 0.0, 1.0)
    return np.hypot(xs - (ax + t * dx), ys - (ay + t * dy))


def render_keypoint_heatmaps(frame, topology=DEFAULT_TOPOLOGY, cfg=TargetConfig()):
    """Gaussian joint maps (max over persons) plus a trailing background channel."""
    shape = heatmap_shape(frame.image_size, cfg.stride)
    xs, ys = _grid(shape)
    maps = np.zeros(shape + (topology.n_joints,), dtype=np.float64)
    two_var = 2.0 * cfg.sigma ** 2
    for person in frame.persons:
        for j, p in enumerate(person.joints):
            if p is None:
                continue
            cx, cy = p[0] / cfg.stride, p[1] / cfg.stride
            g = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / two_var)
            np.maximum(maps[:, :, j], g, out=maps[:, :, j])
    joints = maps.astype(np.float32)
    peak = joints.max(axis=2, keepdims=True) if topology.n_joints else np.zeros(shape + (1,), np.float32)
    background = np.float32(1) - peak
    return np.concatenate([joints, background], axis=2)


def render_paf(frame, topology=DEFAULT_TOPOLOGY, cfg=TargetConfig()):
    """Unit limb-direction vectors inside ``limb_width`` of each limb, averaged where persons overlap."""
    shape = heatmap_shape(frame.image_size, cfg.stride)
    xs, ys = _grid(shape)
    out = np.zeros(shape + (topology.paf_channels,), dtype=np.float64)
    for l, (ja, jb) in enumerate(topology.limbs):
        total = np.zeros(shape + (2,))
        count = np.zeros(shape)
        for person in frame.persons:
            pa, pb = person.joints[ja], person.joints[jb]
            if pa is None or pb is None:
                continue
            a = (pa[0] / cfg.stride, pa[1] / cfg.stride)
            b = (pb[0] / cfg.stride, pb[1] / cfg.stride)
            norm = np.hypot(b[0] - a[0], b[1] - a[1])
            if norm == 0:
                continue
            inside = segment_distance(xs, ys, a, b) <= cfg.limb_width
            total[inside, 0] += (b[0] - a[0]) / norm
            total[inside, 1] += (b[1] - a[1]) / norm
            count[inside] += 1
        hit = count > 0
        out[hit, 2 * l] = total[hit, 0] / count[hit]
        out[hit, 2 * l + 1] = total[hit, 1] / count[hit]
    return out.astype(np.float32)


def render_seatbelt_mask(frame, cfg=TargetConfig()):
    """Binary mask of pixels within half the belt width of any belt polyline."""
    shape = heatmap_shape(frame.image_size, cfg.stride)
    xs, ys = _grid(shape)
    mask = np.zeros(shape, dtype=bool)
    for belt in frame.seatbelts:
        half = belt.width / cfg.stride / 2.0
        pts = [(x / cfg.stride, y / cfg.stride) for x, y in belt.points]
        segments = list(zip(pts[:-1], pts[1:])) or [(pts[0], pts[0])]
        for a, b in segments:
            mask |= segment_distance(xs, ys, a, b) <= half
    return mask.astype(np.float32)[:, :, None]


def render_targets(frame, topology=DEFAULT_TOPOLOGY, cfg=TargetConfig()):
    return HeadOutputs(
        render_keypoint_heatmaps(frame, topology, cfg),
        render_paf(frame, topology, cfg),
        render_seatbelt_mask(frame, cfg),
    )
