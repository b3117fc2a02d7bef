"""Hand-skeleton landmarks and the orthonormal end-effector frame built from them.

Three landmarks carry the frame construction (wrist, index proximal, middle
proximal); the remaining landmarks are an ordered, configurable schema used
only as classifier features.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .kinematics import pose_to_transform

# 21-point hand model; the first entry is the frame origin and the two
# proximal phalange landmarks drive the axis construction.
DEFAULT_SCHEMA = (
    "wrist",
    "thumb_cmc", "thumb_mcp", "thumb_ip", "thumb_tip",
    "index_proximal", "index_intermediate", "index_distal", "index_tip",
    "middle_proximal", "middle_intermediate", "middle_distal", "middle_tip",
    "ring_proximal", "ring_intermediate", "ring_distal", "ring_tip",
    "pinky_proximal", "pinky_intermediate", "pinky_distal", "pinky_tip",
)

REQUIRED_LANDMARKS = ("wrist", "index_proximal", "middle_proximal")


class DegenerateHand(ValueError):
    """The landmarks defining the hand axes are collinear or coincident."""


class SchemaMismatch(ValueError):
    """Skeleton landmarks do not match the active schema."""


@dataclass
class HandSkeleton:
    """Named 3-D landmarks (meters) in schema order."""

    points: dict[str, np.ndarray]
    schema: tuple[str, ...] = DEFAULT_SCHEMA

    def __post_init__(self):
        clean = {}
        for name in self.schema:
            if name not in self.points:
                raise SchemaMismatch(f"missing landmark {name!r}")
            p = np.asarray(self.points[name], dtype=float).reshape(3)
            if not np.all(np.isfinite(p)):
                raise ValueError(f"landmark {name!r} has non-finite coordinates")
            clean[name] = p
        extra = set(self.points) - set(self.schema)
        if extra:
            raise SchemaMismatch(f"landmarks not in schema: {sorted(extra)}")
        self.points = clean

    def __getitem__(self, name):
        return self.points[name]

    def coords(self) -> np.ndarray:
        """(N, 3) array in schema order."""
        return np.stack([self.points[n] for n in self.schema])

    def to_json(self) -> str:
        return json.dumps({n: list(self.points[n]) for n in self.schema})

    @classmethod
    def from_json(cls, text: str, schema=DEFAULT_SCHEMA) -> "HandSkeleton":
        raw = json.loads(text)
        if not isinstance(raw, dict):
            raise SchemaMismatch("skeleton JSON must be an object of name: [x,y,z]")
        return cls({k: np.asarray(v, dtype=float) for k, v in raw.items()}, schema)


@dataclass(frozen=True)
class HandFrame:
    """Origin at the wrist plus a right-handed orthonormal (x, y, z) triad."""

    origin: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def axes(self) -> np.ndarray:
        """3x3 matrix with the axes as columns."""
        return np.column_stack([self.x, self.y, self.z])


def hand_frame(skel: HandSkeleton) -> HandFrame:
    """Orthonormal frame from the wrist and the two proximal phalange landmarks.

    y' runs wrist -> middle proximal, x' runs index proximal -> middle
    proximal; z = x' x y' normalized, y = y' normalized, x = y x z.  The
    cross product guarantees orthonormality even though x' and y' are not
    perpendicular.
    """
    wrist = skel["wrist"]
    x_raw = skel["middle_proximal"] - skel["index_proximal"]
    y_raw = skel["middle_proximal"] - wrist
    cross = np.cross(x_raw, y_raw)
    norm = np.linalg.norm(cross)
    if norm < 1e-9:
        raise DegenerateHand("wrist/index/middle landmarks are collinear")
    z = cross / norm
    y = y_raw / np.linalg.norm(y_raw)
    x = np.cross(y, z)
    return HandFrame(origin=wrist.copy(), x=x, y=y, z=z)


def hand_to_target_pose(frame: HandFrame) -> np.ndarray:
    """Homogeneous transform whose rotation columns are the hand axes and
    whose translation is the wrist position."""
    return pose_to_transform(frame.origin, frame.axes())
