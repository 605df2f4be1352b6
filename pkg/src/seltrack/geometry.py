"""Oriented 3D boxes, rotated IoU, center distance and image projection.

Conventions: ``z`` is up and is the box *center* height; ``theta`` is the
heading measured counter-clockwise from +x in the ground plane; ``l`` runs
along the heading and ``w`` across it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._backend import kernels


def wrap_angle(theta: float) -> float:
    """Map an angle to [-pi, pi)."""
    t = math.fmod(theta + math.pi, 2.0 * math.pi)
    if t < 0.0:
        t += 2.0 * math.pi
    t -= math.pi
    # fmod rounding can land exactly on +pi
    return -math.pi if t >= math.pi else t


class NonPositiveDepth(ValueError):
    """A box corner projects onto or behind the camera plane."""


@dataclass(frozen=True)
class Box3D:
    x: float
    y: float
    z: float
    l: float
    w: float
    h: float
    theta: float = 0.0

    def __post_init__(self):
        vals = (self.x, self.y, self.z, self.l, self.w, self.h, self.theta)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box field in {vals}")
        if self.l <= 0 or self.w <= 0 or self.h <= 0:
            raise ValueError(f"box extents must be positive, got l={self.l} w={self.w} h={self.h}")
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.l, self.w, self.h, self.theta])

    @classmethod
    def from_array(cls, a) -> "Box3D":
        return cls(*(float(v) for v in a[:7]))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def volume(self) -> float:
        return self.l * self.w * self.h

    def moved(self, dx=0.0, dy=0.0, dz=0.0) -> "Box3D":
        return Box3D(self.x + dx, self.y + dy, self.z + dz, self.l, self.w, self.h, self.theta)


@dataclass(frozen=True)
class Box2D:
    xc: float
    yc: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"2D box needs positive size, got w={self.w} h={self.h}")

    @property
    def corners(self):
        return (self.xc - self.w / 2, self.yc - self.h / 2, self.xc + self.w / 2, self.yc + self.h / 2)


def boxes_to_array(boxes) -> np.ndarray:
    if len(boxes) == 0:
        return np.zeros((0, 7))
    return np.array([[b.x, b.y, b.z, b.l, b.w, b.h, b.theta] for b in boxes], dtype=np.float64)


def iou_bev(a: Box3D, b: Box3D) -> float:
    return float(kernels.box_iou(a.as_array(), b.as_array(), True))


def iou_3d(a: Box3D, b: Box3D) -> float:
    return float(kernels.box_iou(a.as_array(), b.as_array(), False))


def iou_matrix(a, b, bev: bool = False) -> np.ndarray:
    """Pairwise IoU between two box lists (or ``(n, 7)`` arrays)."""
    aa = a if isinstance(a, np.ndarray) else boxes_to_array(a)
    bb = b if isinstance(b, np.ndarray) else boxes_to_array(b)
    if len(aa) == 0 or len(bb) == 0:
        return np.zeros((len(aa), len(bb)))
    return kernels.iou_matrix(aa, bb, bev)


def center_distance(a: Box3D, b: Box3D, planar: bool = False) -> float:
    dz = 0.0 if planar else a.z - b.z
    return math.sqrt((a.x - b.x) ** 2 + (a.y - b.y) ** 2 + dz * dz)


def distance_matrix(a, b, planar: bool = False) -> np.ndarray:
    aa = a if isinstance(a, np.ndarray) else boxes_to_array(a)
    bb = b if isinstance(b, np.ndarray) else boxes_to_array(b)
    if len(aa) == 0 or len(bb) == 0:
        return np.zeros((len(aa), len(bb)))
    k = 2 if planar else 3
    diff = aa[:, None, :k] - bb[None, :, :k]
    return np.sqrt((diff**2).sum(-1))


_UNIT_CORNERS = np.array(
    [
        [0.5, 0.5, -0.5],
        [-0.5, 0.5, -0.5],
        [-0.5, -0.5, -0.5],
        [0.5, -0.5, -0.5],
        [0.5, 0.5, 0.5],
        [-0.5, 0.5, 0.5],
        [-0.5, -0.5, 0.5],
        [0.5, -0.5, 0.5],
    ]
)


def corners_3d(b: Box3D) -> np.ndarray:
    """The 8 vertices as an ``(8, 3)`` array: bottom face CCW, then top face."""
    local = _UNIT_CORNERS * np.array([b.l, b.w, b.h])
    c, s = math.cos(b.theta), math.sin(b.theta)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ rot.T + np.array([b.x, b.y, b.z])


def box_from_corners(corners: np.ndarray) -> Box3D:
    """Inverse of :func:`corners_3d` for corners in its vertex order."""
    c = np.asarray(corners, dtype=np.float64)
    center = c.mean(axis=0)
    l_vec = c[0] - c[1]
    w_vec = c[0] - c[3]
    h_vec = c[4] - c[0]
    theta = math.atan2(l_vec[1], l_vec[0])
    return Box3D(
        center[0],
        center[1],
        center[2],
        float(np.linalg.norm(l_vec)),
        float(np.linalg.norm(w_vec)),
        float(np.linalg.norm(h_vec)),
        theta,
    )


def project_points(points: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Project ``(n, 3)`` points with a 3x4 camera matrix; returns ``(n, 3)`` of (u, v, depth)."""
    P = np.asarray(P, dtype=np.float64)
    if P.shape != (3, 4) or not np.all(np.isfinite(P)):
        raise ValueError("camera matrix must be a finite 3x4 array")
    hom = np.hstack([points, np.ones((len(points), 1))]) @ P.T
    depth = hom[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = hom[:, :2] / depth[:, None]
    return np.column_stack([uv, depth])


def project_to_image(b: Box3D, P: np.ndarray, points: np.ndarray | None = None) -> Box2D:
    """Minimum axis-aligned rectangle around the projected box corners.

    ``P`` maps homogeneous points given in the same frame as ``b``; when the
    box lives in a different frame, pass the already-transformed corners via
    ``points``. No clipping to image bounds is applied.
    """
    pts = corners_3d(b) if points is None else points
    proj = project_points(pts, P)
    if np.any(proj[:, 2] <= 0):
        raise NonPositiveDepth("box corner projects behind the camera")
    u0, v0 = proj[:, 0].min(), proj[:, 1].min()
    u1, v1 = proj[:, 0].max(), proj[:, 1].max()
    return Box2D(0.5 * (u0 + u1), 0.5 * (v0 + v1), u1 - u0, v1 - v0)


@dataclass(frozen=True)
class Detection:
    """A detector output: box, raw confidence score and frame index.

    ``source_id`` is the generating object id when known (simulator only);
    ``-1`` marks a detection with no generating object.
    """

    box: Box3D
    score: float
    frame: int = 0
    box2d: Box2D | None = None
    source_id: int = -1

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError("detection score must be finite")
