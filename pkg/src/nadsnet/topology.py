"""Skeleton topology: joint names and the limb pairs joining them."""

from dataclasses import dataclass

from .exceptions import ConfigError


@dataclass(frozen=True)
class SkeletonTopology:
    joints: tuple
    limbs: tuple

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "limbs", tuple(tuple(l) for l in self.limbs))
        if len(set(self.joints)) != len(self.joints):
            raise ConfigError("duplicate joint names in topology")
        for a, b in self.limbs:
            if not (0 <= a < len(self.joints) and 0 <= b < len(self.joints)) or a == b:
                raise ConfigError(f"bad limb ({a}, {b}) for {len(self.joints)} joints")

    @property
    def n_joints(self):
        return len(self.joints)

    @property
    def n_limbs(self):
        return len(self.limbs)

    @property
    def keypoint_channels(self):
        # one map per joint plus background
        return self.n_joints + 1

    @property
    def paf_channels(self):
        return 2 * self.n_limbs

    def index(self, name):
        return self.joints.index(name)

    def to_dict(self):
        return {"joints": list(self.joints), "limbs": [list(l) for l in self.limbs]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["joints"], d["limbs"])


JOINTS = (
    "nose",
    "neck",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "head_top",
)

_J = {name: i for i, name in enumerate(JOINTS)}

LIMBS = (
    (_J["neck"], _J["nose"]),
    (_J["nose"], _J["head_top"]),
    (_J["neck"], _J["right_shoulder"]),
    (_J["right_shoulder"], _J["right_elbow"]),
    (_J["right_elbow"], _J["right_wrist"]),
    (_J["neck"], _J["left_shoulder"]),
    (_J["left_shoulder"], _J["left_elbow"]),
    (_J["left_elbow"], _J["left_wrist"]),
)

DEFAULT_TOPOLOGY = SkeletonTopology(JOINTS, LIMBS)
