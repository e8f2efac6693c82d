"""Core 3D math: vectors, quaternion poses, pinhole cameras, least-squares fits.

Conventions
-----------
* points are float64 numpy arrays, shape (3,) for a single point or (n, 3)
  for clouds, in meters (world frame unless stated otherwise)
* quaternions are [w, x, y, z], unit norm
* camera frame: +x right, +y down, +z forward; pixel (u, v) maps to the ray
  direction ((u - cx) / fx, (v - cy) / fy, 1) so depth means camera-frame z
* fitted normals/directions follow a fixed sign convention: z-component >= 0,
  ties broken toward +x then +y, so fits are reproducible
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from camlab.errors import DegenerateGeometry

__all__ = [
    "vec3",
    "unit",
    "as_points",
    "angle_between",
    "quat_from_axis_angle",
    "quat_mul",
    "quat_conj",
    "quat_rotate",
    "quat_to_mat",
    "mat_to_quat",
    "quat_slerp",
    "Pose",
    "CameraModel",
    "look_at",
    "fit_plane",
    "fit_line",
    "canonical_sign",
]


def vec3(x: float, y: float, z: float) -> np.ndarray:
    return np.array([x, y, z], dtype=np.float64)


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        raise DegenerateGeometry("cannot normalize a zero-length vector")
    return v / n


def as_points(points) -> np.ndarray:
    """Coerce a point list / array into an (n, 3) float64 array."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, 3) if arr.size == 3 else arr.reshape(-1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected (n, 3) points, got shape {arr.shape}")
    return arr


def angle_between(u, v) -> float:
    """Angle in [0, pi] between two nonzero vectors."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu < 1e-12 or nv < 1e-12:
        raise DegenerateGeometry("angle_between requires nonzero vectors")
    c = float(np.dot(u, v)) / (nu * nv)
    return math.acos(max(-1.0, min(1.0, c)))


# ---------------------------------------------------------------------------
# quaternions


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    ax = unit(axis)
    h = 0.5 * angle
    s = math.sin(h)
    return np.array([math.cos(h), ax[0] * s, ax[1] * s, ax[2] * s])


def quat_mul(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conj(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_mat(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def mat_to_quat(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    t = np.trace(m)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    return q / np.linalg.norm(q)


def quat_rotate(q, points):
    """Rotate a point (3,) or cloud (n, 3) by quaternion q."""
    m = quat_to_mat(q)
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        return m @ pts
    return pts @ m.T


def quat_slerp(a, b, t: float) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = float(np.dot(a, b))
    if d < 0:
        b = -b
        d = -d
    if d > 0.9995:
        q = a + t * (b - a)
        return q / np.linalg.norm(q)
    th = math.acos(max(-1.0, min(1.0, d)))
    sa = math.sin((1 - t) * th) / math.sin(th)
    sb = math.sin(t * th) / math.sin(th)
    return sa * a + sb * b


@dataclass(frozen=True)
class Pose:
    """Rigid transform: x_world = R(q) @ x_local + t."""

    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=np.float64))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64))
        if abs(float(np.linalg.norm(self.q)) - 1.0) > 1e-9:
            raise ValueError("Pose quaternion must be unit norm")

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    def apply(self, points):
        return quat_rotate(self.q, points) + self.t

    def inverse(self) -> "Pose":
        qi = quat_conj(self.q)
        return Pose(qi, -quat_rotate(qi, self.t))

    def compose(self, other: "Pose") -> "Pose":
        """self after other: (self @ other).apply(x) == self.apply(other.apply(x))."""
        return Pose(quat_mul(self.q, other.q), self.apply(other.t))

    def rotation(self) -> np.ndarray:
        return quat_to_mat(self.q)


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: Pose = field(default_factory=Pose.identity)  # camera-to-world

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera-to-world pose with +z looking from eye toward target, +y down."""
    eye = np.asarray(eye, dtype=np.float64)
    z = unit(np.asarray(target, dtype=np.float64) - eye)
    y_des = -unit(up)
    x = np.cross(y_des, z)
    if np.linalg.norm(x) < 1e-9:
        raise DegenerateGeometry("look_at: up is parallel to the view direction")
    x = unit(x)
    y = np.cross(z, x)
    m = np.column_stack([x, y, z])
    return Pose(mat_to_quat(m), eye)


# ---------------------------------------------------------------------------
# least-squares fits


def canonical_sign(v: np.ndarray) -> np.ndarray:
    """Flip v so its z-component is >= 0, ties toward +x then +y."""
    for i in (2, 0, 1):
        if v[i] > 0:
            return v
        if v[i] < 0:
            return -v
    return v


def _svd_centered(points: np.ndarray):
    centroid = points.mean(axis=0)
    _, svals, vt = np.linalg.svd(points - centroid, full_matrices=False)
    # pad so svals/vt always cover 3 principal directions (n == 2 gives 2)
    if len(svals) < 3:
        svals = np.concatenate([svals, np.zeros(3 - len(svals))])
        vt = np.vstack([vt, np.cross(vt[0], vt[1])[None, :] if len(vt) == 2 else np.eye(3)[len(vt):]])
    return centroid, svals, vt  # svals descending; vt rows are directions


def fit_plane(points):
    """Least-squares plane; returns (unit normal, centroid, rms residual).

    The normal is the smallest principal direction of the centered cloud
    (equivalently the smallest-eigenvector of the covariance). Raises
    DegenerateGeometry for < 3 points or (near-)collinear input: the two
    smallest singular values both below 1e-12 of the largest.
    """
    pts = as_points(points)
    if len(pts) < 3:
        raise DegenerateGeometry(f"fit_plane needs >= 3 points, got {len(pts)}")
    centroid, svals, vt = _svd_centered(pts)
    if svals[0] < 1e-12 or (svals[1] < 1e-12 * svals[0] and svals[2] < 1e-12 * svals[0]):
        raise DegenerateGeometry("fit_plane: points are collinear or coincident")
    normal = canonical_sign(vt[2].copy())
    rms = float(svals[2] / math.sqrt(len(pts)))
    return normal, centroid, rms


def fit_line(points):
    """Least-squares line; returns (unit direction, centroid, rms residual).

    The direction is the largest principal direction of the centered cloud.
    Raises DegenerateGeometry for < 2 points or coincident input.
    """
    pts = as_points(points)
    if len(pts) < 2:
        raise DegenerateGeometry(f"fit_line needs >= 2 points, got {len(pts)}")
    centroid, svals, vt = _svd_centered(pts)
    if svals[0] < 1e-12:
        raise DegenerateGeometry("fit_line: points are coincident")
    direction = canonical_sign(vt[0].copy())
    rms = float(math.sqrt((svals[1] ** 2 + svals[2] ** 2) / len(pts)))
    return direction, centroid, rms
