"""Frame annotation records, their invariants and dataset statistics."""

from collections import Counter, defaultdict
from dataclasses import dataclass, field
import math

from .exceptions import ValidationError

DEFAULT_HEADREST_DIAGONAL = 170.0

ATTRIBUTE_VALUES = {
    "illumination": ("daytime", "nighttime"),
    "role": ("driver", "front_passenger"),
}


@dataclass(frozen=True)
class Seatbelt:
    points: tuple
    width: float
    includes_buckle: bool = None

    def __post_init__(self):
        object.__setattr__(self, "points", tuple((float(x), float(y)) for x, y in self.points))


@dataclass(frozen=True)
class PersonAnnotation:
    """One annotated person; ``joints[j]`` is ``(x, y)`` or ``None`` when not visible."""

    joints: tuple

    def __post_init__(self):
        object.__setattr__(
            self, "joints", tuple(None if p is None else (float(p[0]), float(p[1])) for p in self.joints)
        )

    @property
    def visible_count(self):
        return sum(p is not None for p in self.joints)


@dataclass(frozen=True)
class FrameAnnotation:
    image_id: str
    image_size: tuple
    persons: tuple = ()
    seatbelts: tuple = ()
    headrest_diagonal: float = None
    attributes: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))
        object.__setattr__(self, "persons", tuple(self.persons))
        object.__setattr__(self, "seatbelts", tuple(self.seatbelts))
        object.__setattr__(self, "attributes", dict(self.attributes))

    @property
    def reference_length(self):
        """Headrest diagonal used as the mPCKh reference, falling back to 170 px."""
        if self.headrest_diagonal is None:
            return DEFAULT_HEADREST_DIAGONAL
        return self.headrest_diagonal


def _check_point(frame, x, y, where):
    h, w = frame.image_size
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValidationError("coordinate is not finite", frame.image_id, where)
    if not (0 <= x < w):
        raise ValidationError(f"x={x} outside [0, {w})", frame.image_id, where)
    if not (0 <= y < h):
        raise ValidationError(f"y={y} outside [0, {h})", frame.image_id, where)


def validate_frame(frame, topology):
    """Raise :class:`ValidationError` naming the first violated invariant."""
    if not frame.image_id:
        raise ValidationError("image_id must be non-empty", frame.image_id, "image_id")
    if len(frame.image_size) != 2 or min(frame.image_size) < 1:
        raise ValidationError(f"bad image_size {frame.image_size}", frame.image_id, "image_size")
    for i, person in enumerate(frame.persons):
        if len(person.joints) != topology.n_joints:
            raise ValidationError(
                f"{len(person.joints)} joints, topology has {topology.n_joints}",
                frame.image_id, f"persons[{i}].joints",
            )
        for name, p in zip(topology.joints, person.joints):
            if p is not None:
                _check_point(frame, p[0], p[1], f"persons[{i}].joints.{name}")
    for i, belt in enumerate(frame.seatbelts):
        if not belt.points:
            raise ValidationError("polyline has no points", frame.image_id, f"seatbelts[{i}].points")
        if not (belt.width > 0 and math.isfinite(belt.width)):
            raise ValidationError(f"width {belt.width} must be > 0", frame.image_id, f"seatbelts[{i}].width")
        for k, (x, y) in enumerate(belt.points):
            _check_point(frame, x, y, f"seatbelts[{i}].points[{k}]")
    if frame.headrest_diagonal is not None and not (
        math.isfinite(frame.headrest_diagonal) and frame.headrest_diagonal > 0
    ):
        raise ValidationError(
            f"headrest_diagonal {frame.headrest_diagonal} must be > 0", frame.image_id, "headrest_diagonal"
        )
    for key, value in frame.attributes.items():
        if not isinstance(value, str):
            raise ValidationError("attribute values must be strings", frame.image_id, f"attributes.{key}")
        allowed = ATTRIBUTE_VALUES.get(key)
        if allowed is not None and value not in allowed:
            raise ValidationError(f"{value!r} not in {allowed}", frame.image_id, f"attributes.{key}")
    return frame


def dataset_stats(frames):
    """Count frames per attribute value: ``{attribute: {value: count}}``."""
    table = defaultdict(Counter)
    for frame in frames:
        for key, value in frame.attributes.items():
            table[key][value] += 1
    return {key: dict(sorted(counts.items())) for key, counts in sorted(table.items())}


def format_stats(stats):
    if not stats:
        return "(no attributes)"
    lines = []
    width = max(len(v) for counts in stats.values() for v in counts) + 2
    for key, counts in stats.items():
        lines.append(key)
        for value, n in counts.items():
            lines.append(f"  {value:<{width}}{n:>6}")
    return "\n".join(lines)
