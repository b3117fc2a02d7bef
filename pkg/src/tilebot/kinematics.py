"""Forward/inverse kinematics for a 6-revolute-joint arm described by DH rows.

Joint angles are degrees in [-180, 180] at every public boundary; internal
math is radians.  The shipped default table models a UR3-class arm with a
working radius of roughly half a meter around the shoulder.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class NonOrthonormalAxes(ValueError):
    """Axes passed to pose_to_transform are not an orthonormal right-handed triad."""


class NotConverged(RuntimeError):
    """Gauss-Newton iteration exhausted max_iterations above the error tolerance."""

    def __init__(self, message, q=None, error=None):
        super().__init__(message)
        self.q = q
        self.error = error


def wrap_angles(q):
    """Wrap raw joint angles (degrees) into [-180, 180], congruent mod 360.

    +180 maps to -180; -180 stays -180.
    """
    q = np.asarray(q, dtype=float)
    if not np.all(np.isfinite(q)):
        raise ValueError("joint angles must be finite")
    return (q + 180.0) % 360.0 - 180.0


@dataclass(frozen=True)
class DHTable:
    """Six DH rows: link length a (m), offset d (m), twist alpha (deg), theta offset (deg)."""

    a: np.ndarray
    d: np.ndarray
    alpha: np.ndarray
    theta_offset: np.ndarray
    # cached trig of the constant twist angles
    _ca: np.ndarray = field(init=False, repr=False, compare=False)
    _sa: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("a", "d", "alpha", "theta_offset"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (6,):
                raise ValueError(f"DH column {name!r} must have exactly 6 rows")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"DH column {name!r} contains non-finite values")
            object.__setattr__(self, name, v)
        al = np.deg2rad(self.alpha)
        object.__setattr__(self, "_ca", np.cos(al))
        object.__setattr__(self, "_sa", np.sin(al))

    @classmethod
    def from_rows(cls, rows):
        rows = np.asarray(rows, dtype=float)
        if rows.shape != (6, 4):
            raise ValueError("expected 6 rows of (a, d, alpha, theta_offset)")
        return cls(rows[:, 0], rows[:, 1], rows[:, 2], rows[:, 3])

    def rows(self):
        return np.stack([self.a, self.d, self.alpha, self.theta_offset], axis=1)


def load_dh_table(path) -> DHTable:
    """Read a DH table from a text file: six lines of four decimal numbers.

    Blank lines and lines starting with '#' are skipped.
    """
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        parts = text.split()
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected 4 numbers, got {len(parts)}")
        rows.append([float(p) for p in parts])
    if len(rows) != 6:
        raise ValueError(f"{path}: expected 6 DH rows, got {len(rows)}")
    return DHTable.from_rows(rows)


@functools.lru_cache(maxsize=1)
def ur3_dh() -> DHTable:
    """The bundled UR3-class DH table (shared immutable instance)."""
    from importlib import resources

    with resources.as_file(resources.files("tilebot.configs") / "ur3_dh.txt") as p:
        return load_dh_table(p)


def fk_frames(dh: DHTable, q):
    """All seven chain frames (base first) as a (7, 4, 4) array.

    Frame i is the pose of joint-frame i in the base frame; frame 6 is the
    end-effector pose.
    """
    q = wrap_angles(q)
    if q.shape != (6,):
        raise ValueError("expected 6 joint angles")
    theta = np.deg2rad(q + dh.theta_offset)
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = dh._ca, dh._sa
    a, d = dh.a, dh.d

    frames = np.empty((7, 4, 4))
    frames[0] = np.eye(4)
    A = np.empty((4, 4))
    A[3, :] = (0.0, 0.0, 0.0, 1.0)
    for i in range(6):
        A[0, 0] = ct[i]
        A[0, 1] = -st[i] * ca[i]
        A[0, 2] = st[i] * sa[i]
        A[0, 3] = a[i] * ct[i]
        A[1, 0] = st[i]
        A[1, 1] = ct[i] * ca[i]
        A[1, 2] = -ct[i] * sa[i]
        A[1, 3] = a[i] * st[i]
        A[2, 0] = 0.0
        A[2, 1] = sa[i]
        A[2, 2] = ca[i]
        A[2, 3] = d[i]
        np.dot(frames[i], A, out=frames[i + 1])
    return frames


def forward_kinematics(dh: DHTable, q) -> np.ndarray:
    """End-effector pose (4x4 homogeneous transform) for joint angles q (degrees)."""
    return fk_frames(dh, q)[6]


def jacobian(dh: DHTable, q) -> np.ndarray:
    """Geometric Jacobian (6x6, per radian) at q.

    Rows 1-3 map joint rates to the linear velocity of the end-effector
    origin, rows 4-6 to its angular velocity, both in the base frame.
    """
    frames = fk_frames(dh, q)
    o_n = frames[6, :3, 3]
    J = np.empty((6, 6))
    for i in range(6):
        z = frames[i, :3, 2]
        o = frames[i, :3, 3]
        J[:3, i] = np.cross(z, o_n - o)
        J[3:, i] = z
    return J


def pose_to_transform(position, axes) -> np.ndarray:
    """Assemble a homogeneous transform from a position and an (x, y, z) axis triad.

    ``axes`` is a 3x3 matrix whose *columns* are the unit axes.  Raises
    NonOrthonormalAxes when the triad is not orthonormal and right-handed
    (within 1e-6).
    """
    position = np.asarray(position, dtype=float).reshape(3)
    R = np.asarray(axes, dtype=float)
    if R.shape == (3, 3):
        pass
    elif R.shape == (3,) or (hasattr(axes, "__len__") and len(axes) == 3):
        R = np.column_stack([np.asarray(v, dtype=float).reshape(3) for v in axes])
    if R.shape != (3, 3):
        raise ValueError("axes must be a 3x3 matrix or three 3-vectors")
    if not np.allclose(R.T @ R, np.eye(3), atol=1e-6):
        raise NonOrthonormalAxes("axis triad is not orthonormal within 1e-6")
    if np.linalg.det(R) < 0.0:
        raise NonOrthonormalAxes("axis triad is left-handed (det = -1)")
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = position
    return T


def is_valid_transform(T, tol=1e-9) -> bool:
    """True when T is a rigid transform: orthonormal R, det +1, exact bottom row."""
    T = np.asarray(T)
    if T.shape != (4, 4) or not np.all(np.isfinite(T)):
        return False
    if not np.array_equal(T[3], [0.0, 0.0, 0.0, 1.0]):
        return False
    R = T[:3, :3]
    return bool(
        np.allclose(R.T @ R, np.eye(3), atol=tol) and np.linalg.det(R) > 0.0
    )


def transform_error(a, b) -> float:
    """Frobenius norm of the elementwise difference of two transforms."""
    return float(np.linalg.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))


def _rotation_to_angle_axis(R):
    """Angle-axis vector (radians) of a rotation matrix.

    Near pi the axis sign is ambiguous; the axis is recovered from the largest
    diagonal element (lowest index on ties) for a deterministic result.
    """
    trace = R[0, 0] + R[1, 1] + R[2, 2]
    cos_t = min(1.0, max(-1.0, (trace - 1.0) / 2.0))
    theta = math.acos(cos_t)
    if theta < 1e-10:
        # first-order: vee((R - R^T)/2)
        return 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < math.pi - 1e-6:
        axis = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        return axis * (theta / (2.0 * math.sin(theta)))
    # theta ~ pi: diagonal dominates; R = 2*outer(u,u) - I + O(pi - theta)
    diag = np.array([R[0, 0], R[1, 1], R[2, 2]])
    k = int(np.argmax(diag))  # argmax takes the lowest index on ties
    u = np.empty(3)
    u[k] = math.sqrt(max(0.0, (diag[k] - cos_t) / (1.0 - cos_t)))
    denom = 2.0 * u[k] * (1.0 - cos_t)
    for j in range(3):
        if j != k:
            u[j] = (R[k, j] + R[j, k]) / denom
    u /= np.linalg.norm(u)
    sin_t = 0.5 * np.array(
        [R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]
    ).dot(u)
    if sin_t < 0.0:
        u = -u
    return u * theta


def angle_axis_twist(current, target) -> np.ndarray:
    """6-vector from current to target: translation difference then angle-axis.

    The rotational part is the angle-axis vector of R_target @ R_current^T,
    i.e. the base-frame rotation carrying current onto target.
    """
    current = np.asarray(current, dtype=float)
    target = np.asarray(target, dtype=float)
    g = np.empty(6)
    g[:3] = target[:3, 3] - current[:3, 3]
    g[3:] = _rotation_to_angle_axis(target[:3, :3] @ current[:3, :3].T)
    return g


def reach_radius(dh: DHTable, n_samples: int = 10000, seed: int = 0) -> float:
    """Empirical working radius: max distance from the shoulder point to the
    wrist center (first wrist joint origin, chain frame 4) over random joint
    configurations."""
    rng = np.random.default_rng(seed)
    shoulder = np.array([0.0, 0.0, dh.d[0]])
    best = 0.0
    for q in rng.uniform(-180.0, 180.0, size=(n_samples, 6)):
        wrist = fk_frames(dh, q)[4, :3, 3]
        best = max(best, float(np.linalg.norm(wrist - shoulder)))
    return best


@dataclass(frozen=True)
class IkSettings:
    """Gauss-Newton loop controls."""

    e_max: float = 1e-4
    max_iterations: int = 200
    step_scale: float = 0.5
    singular_damping: float = 1e-6
    singularity_threshold: float = 1e6

    def __post_init__(self):
        if self.e_max <= 0.0:
            raise ValueError("e_max must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not 0.0 < self.step_scale <= 1.0:
            raise ValueError("step_scale must lie in (0, 1]")
        if self.singular_damping < 0.0:
            raise ValueError("singular_damping must be nonnegative")


def solve_ik(dh: DHTable, q0, target, settings: IkSettings | None = None) -> np.ndarray:
    """Gauss-Newton inverse kinematics from seed q0 (degrees) to a target transform.

    Steps use the Jacobian inverse while well conditioned and a damped
    least-squares pseudo-inverse near singularities.  Returns wrapped joint
    angles whose forward kinematics lies within e_max (Frobenius) of the
    target, or raises NotConverged after max_iterations.
    """
    if settings is None:
        settings = IkSettings()
    if not is_valid_transform(target):
        raise ValueError("target is not a valid rigid transform")
    q = wrap_angles(q0)
    current = forward_kinematics(dh, q)
    e = transform_error(current, target)
    for _ in range(settings.max_iterations):
        if e <= settings.e_max:
            return q
        J = jacobian(dh, q)
        g = angle_axis_twist(current, target)
        if np.linalg.cond(J) <= settings.singularity_threshold:
            dq = np.linalg.solve(J, g)
        else:
            JJt = J @ J.T + settings.singular_damping * np.eye(6)
            dq = J.T @ np.linalg.solve(JJt, g)
        q = wrap_angles(q + np.rad2deg(settings.step_scale * dq))
        current = forward_kinematics(dh, q)
        e = transform_error(current, target)
    if e <= settings.e_max:
        return q
    raise NotConverged(
        f"IK error {e:.3e} above tolerance {settings.e_max:.3e} "
        f"after {settings.max_iterations} iterations",
        q=q,
        error=e,
    )
