"""Planar poses, quaternions, and the 3-bar cable topology.

Conventions: vectors are float64 numpy arrays; quaternions are [w, x, y, z],
unit norm, and a rod's long axis is its local +z. Cap index = 2*rod + end
(end 0 at center - L/2 * axis, end 1 at center + L/2 * axis). Pose2 angles
are wrapped to (-pi, pi].

The quaternion helpers accept stacked leading axes and the dual arrays from
:mod:`.fmad`, so the physics step can run them in gradient mode.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import fmad
from .fmad import Dual

TWO_PI = 2.0 * math.pi


class DegenerateHeadingError(ValueError):
    """Heading is undefined: the rod-0 offset projects to (almost) nothing."""


def wrap_angle(theta: float) -> float:
    """Wrap a scalar angle to (-pi, pi]."""
    w = (theta + math.pi) % TWO_PI - math.pi
    if w == -math.pi:
        w = math.pi
    return w


def wrap_angle_array(theta: np.ndarray) -> np.ndarray:
    w = (np.asarray(theta, dtype=float) + math.pi) % TWO_PI - math.pi
    return np.where(w == -math.pi, math.pi, w)


@dataclass(frozen=True)
class Pose2:
    """Planar pose (x, y, theta), theta in (-pi, pi]."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.theta)):
            raise ValueError(f"non-finite pose ({self.x}, {self.y}, {self.theta})")
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.theta)


def se2_compose(a: Pose2, b: Pose2) -> Pose2:
    """a then b (b expressed in a's frame)."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(a.x + c * b.x - s * b.y,
                 a.y + s * b.x + c * b.y,
                 a.theta + b.theta)


def se2_inverse(p: Pose2) -> Pose2:
    c, s = math.cos(p.theta), math.sin(p.theta)
    return Pose2(-(c * p.x + s * p.y), -(-s * p.x + c * p.y), -p.theta)


def se2_between(a: Pose2, b: Pose2) -> Pose2:
    """The delta d with a o d = b."""
    return se2_compose(se2_inverse(a), b)


def se2_apply(p: Pose2, xy) -> np.ndarray:
    """Apply a planar pose to one or more 2D points."""
    xy = np.asarray(xy, dtype=float)
    c, s = math.cos(p.theta), math.sin(p.theta)
    out = np.empty_like(xy)
    out[..., 0] = c * xy[..., 0] - s * xy[..., 1] + p.x
    out[..., 1] = s * xy[..., 0] + c * xy[..., 1] + p.y
    return out


# -- quaternions -------------------------------------------------------------


def quat_normalize(q):
    if isinstance(q, Dual):
        n = fmad.norm_last(q)
        return q / n[..., None]
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_mul(q1, q2):
    w1, x1, y1, z1 = q1[..., 0], q1[..., 1], q1[..., 2], q1[..., 3]
    w2, x2, y2, z2 = q2[..., 0], q2[..., 1], q2[..., 2], q2[..., 3]
    return fmad.stack([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ], axis=-1)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[math.cos(half)], math.sin(half) * axis])


def quat_rotate(q, v):
    """Rotate vectors v (...,3) by quaternions q (...,4). Dual-safe."""
    w = q[..., 0]
    u = q[..., 1:]
    uv = fmad.cross(u, v)
    uuv = fmad.cross(u, uv)    # u x (u x v)
    return v + (uv * w[..., None] + uuv) * 2.0


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrices (...,3,3) from unit quaternions (plain numpy)."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    xx, yy, zz = x * x, y * y, z * z
    wx, wy, wz = w * x, w * y, w * z
    xy, xz, yz = x * y, x * z, y * z
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (yy + zz)
    m[..., 0, 1] = 2 * (xy - wz)
    m[..., 0, 2] = 2 * (xz + wy)
    m[..., 1, 0] = 2 * (xy + wz)
    m[..., 1, 1] = 1 - 2 * (xx + zz)
    m[..., 1, 2] = 2 * (yz - wx)
    m[..., 2, 0] = 2 * (xz - wy)
    m[..., 2, 1] = 2 * (yz + wx)
    m[..., 2, 2] = 1 - 2 * (xx + yy)
    return m


def rod_axis(q):
    """Unit vector of the rod's local +z in world frame. Dual-safe."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return fmad.stack([
        2.0 * (x * z + w * y),
        2.0 * (y * z - w * x),
        1.0 - 2.0 * (x * x + y * y),
    ], axis=-1)


# -- topology ----------------------------------------------------------------

SIDE_LEFT = "L"
SIDE_RIGHT = "R"


@dataclass(frozen=True)
class Tendon:
    rod_a: int
    end_a: int
    rod_b: int
    end_b: int
    actuated: bool

    def caps(self) -> tuple[int, int]:
        return (2 * self.rod_a + self.end_a, 2 * self.rod_b + self.end_b)


@dataclass(frozen=True)
class Topology:
    """Cable routing of the robot: which caps each tendon connects.

    ``sides`` labels the actuated tendons (in their order of appearance in
    ``tendons``) as left or right; turning gaits and the mirror symmetry act
    on these labels.
    """

    rod_length: float = 0.35
    end_cap_radius: float = 0.02
    rod_count: int = 3
    tendons: tuple[Tendon, ...] = ()
    sides: tuple[str, ...] = ()

    def __post_init__(self):
        if self.rod_length <= 0 or self.end_cap_radius <= 0:
            raise ValueError("rod_length and end_cap_radius must be positive")
        if len(self.tendons) != 9:
            raise ValueError(f"expected 9 tendons, got {len(self.tendons)}")
        actuated = [t for t in self.tendons if t.actuated]
        if len(actuated) != 6:
            raise ValueError(f"expected 6 actuated tendons, got {len(actuated)}")
        if len(self.sides) != 6 or self.sides.count(SIDE_LEFT) != 3 or self.sides.count(SIDE_RIGHT) != 3:
            raise ValueError(f"sides must label 3 left + 3 right tendons, got {self.sides}")
        for t in self.tendons:
            for rod, end in ((t.rod_a, t.end_a), (t.rod_b, t.end_b)):
                if not (0 <= rod < self.rod_count) or end not in (0, 1):
                    raise ValueError(f"tendon endpoint out of range: {t}")
            if t.rod_a == t.rod_b:
                raise ValueError(f"tendon connects a rod to itself: {t}")

    @property
    def actuated_tendons(self) -> tuple[Tendon, ...]:
        return tuple(t for t in self.tendons if t.actuated)

    @property
    def passive_tendons(self) -> tuple[Tendon, ...]:
        return tuple(t for t in self.tendons if not t.actuated)

    def cap_pairs(self) -> np.ndarray:
        """(9, 2) int array of (cap_a, cap_b), actuated tendons first."""
        ordered = list(self.actuated_tendons) + list(self.passive_tendons)
        return np.array([t.caps() for t in ordered], dtype=int)


def default_topology(rod_length: float = 0.35, end_cap_radius: float = 0.02) -> Topology:
    """The 3-bar prism: two actuated triangles plus three passive saddles.

    Right side = the end-0 triangle, left side = the end-1 triangle; rod i
    runs from end 0 (node A_i) to end 1 (node B_i), the B triangle twisted
    150 deg against the A triangle.
    """
    tendons = []
    for i in range(3):
        tendons.append(Tendon(i, 0, (i + 1) % 3, 0, True))     # A triangle
    for i in range(3):
        tendons.append(Tendon(i, 1, (i + 1) % 3, 1, True))     # B triangle
    for i in range(3):
        tendons.append(Tendon(i, 0, (i + 2) % 3, 1, False))    # saddles
    sides = (SIDE_RIGHT,) * 3 + (SIDE_LEFT,) * 3
    return Topology(rod_length=rod_length, end_cap_radius=end_cap_radius,
                    tendons=tuple(tendons), sides=sides)


# -- state-level geometry ----------------------------------------------------
# These take any object with pos (3,3), quat (3,4), lin_vel, ang_vel fields
# (the physics SystemState); duck-typed to keep this module dependency-free.


def end_cap_positions(state, topo: Topology):
    """Cap centers, shape (6, 3), rod-major with end 0 first."""
    axis = rod_axis(state.quat)
    half = 0.5 * topo.rod_length
    caps = fmad.stack([state.pos - axis * half, state.pos + axis * half], axis=1)
    return caps.reshape((2 * topo.rod_count, 3))


def extract_pose2(state, topo: Topology) -> Pose2:
    """Planar pose of the robot: centroid position, heading from rod 0.

    Heading = direction from the centroid of rod 0's caps to the centroid of
    the other four caps, projected to the ground plane.
    """
    caps = np.asarray(fmad.value(end_cap_positions(state, topo)))
    return pose2_from_caps(caps)


def pose2_from_caps(caps: np.ndarray) -> Pose2:
    """Planar pose from the six cap centers alone (rod-major order)."""
    caps = np.asarray(caps, dtype=float)
    centroid = caps.mean(axis=0)
    rod0 = caps[0:2].mean(axis=0)
    others = caps[2:].mean(axis=0)
    d = others[:2] - rod0[:2]
    n = float(np.hypot(d[0], d[1]))
    if n < 1e-9:
        raise DegenerateHeadingError(f"projected heading norm {n:.3e} < 1e-9")
    return Pose2(float(centroid[0]), float(centroid[1]), math.atan2(d[1], d[0]))


def transform_state_se2(state, pose: Pose2):
    """Apply a planar rigid transform to a full state (returns a new state)."""
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    t = np.array([pose.x, pose.y, 0.0])
    qz = quat_from_axis_angle([0.0, 0.0, 1.0], pose.theta)
    pos = state.pos @ rz.T + t
    quat = quat_mul(np.broadcast_to(qz, state.quat.shape), state.quat)
    quat = quat / np.linalg.norm(quat, axis=-1, keepdims=True)
    lin = state.lin_vel @ rz.T
    ang = state.ang_vel @ rz.T
    return dataclasses.replace(state, pos=pos, quat=quat, lin_vel=lin, ang_vel=ang)
