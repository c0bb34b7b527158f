"""SE(2) pose algebra and K-nearest-neighbor index construction.

Poses are plain float64 arrays ``[..., 3]`` holding ``(x, y, theta)``. The
``Pose2`` dataclass exists for scalar convenience; vectorised code passes arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi


class EmptyNeighborhoodError(ValueError):
    pass


def wrap_angle(theta):
    """Wrap radians into the half-open interval (-pi, pi]; -pi maps to pi."""
    theta = np.asarray(theta, dtype=np.float64)
    if not np.all(np.isfinite(theta)):
        raise ValueError("wrap_angle: non-finite input")
    out = np.pi - np.mod(np.pi - theta, TWO_PI)
    out = np.where(out <= -np.pi, out + TWO_PI, out)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class Pose2:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", float(wrap_angle(self.theta)))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @classmethod
    def from_array(cls, a) -> "Pose2":
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class RelPose:
    dx: float
    dy: float
    dtheta: float


@dataclass
class NeighborIndex:
    idx: np.ndarray    # [M, K] int64
    valid: np.ndarray  # [M, K] bool


def _arr(p) -> np.ndarray:
    if isinstance(p, Pose2):
        return p.as_array()
    return np.asarray(p, dtype=np.float64)


def compose(a, b) -> np.ndarray:
    """``a ∘ b``: pose ``b`` expressed in a's frame mapped to the world."""
    a, b = _arr(a), _arr(b)
    c, s = np.cos(a[..., 2]), np.sin(a[..., 2])
    x = a[..., 0] + c * b[..., 0] - s * b[..., 1]
    y = a[..., 1] + s * b[..., 0] + c * b[..., 1]
    return np.stack([x, y, wrap_angle(a[..., 2] + b[..., 2])], axis=-1)


def inverse(p) -> np.ndarray:
    p = _arr(p)
    c, s = np.cos(p[..., 2]), np.sin(p[..., 2])
    x = -(c * p[..., 0] + s * p[..., 1])
    y = s * p[..., 0] - c * p[..., 1]
    return np.stack([x, y, wrap_angle(-p[..., 2])], axis=-1)


def relative_pose_array(p_i, p_j) -> np.ndarray:
    """``inverse(p_i) ∘ p_j`` with broadcasting over leading dims; returns ``[..., 3]``."""
    p_i, p_j = _arr(p_i), _arr(p_j)
    dx = p_j[..., 0] - p_i[..., 0]
    dy = p_j[..., 1] - p_i[..., 1]
    c, s = np.cos(p_i[..., 2]), np.sin(p_i[..., 2])
    return np.stack([c * dx + s * dy, -s * dx + c * dy,
                     wrap_angle(p_j[..., 2] - p_i[..., 2])], axis=-1)


def relative_pose(p_i, p_j) -> RelPose:
    r = relative_pose_array(p_i, p_j)
    return RelPose(float(r[0]), float(r[1]), float(r[2]))


def transform_points(pose, pts, direction: str = "local_to_global") -> np.ndarray:
    """Rigidly map ``[N, 2]`` points between a pose's local frame and the world."""
    p = _arr(pose)
    pts = np.asarray(pts, dtype=np.float64)
    c, s = np.cos(p[2]), np.sin(p[2])
    if direction == "local_to_global":
        x = c * pts[..., 0] - s * pts[..., 1] + p[0]
        y = s * pts[..., 0] + c * pts[..., 1] + p[1]
    elif direction == "global_to_local":
        dx, dy = pts[..., 0] - p[0], pts[..., 1] - p[1]
        x = c * dx + s * dy
        y = -s * dx + c * dy
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return np.stack([x, y], axis=-1)


def rotate_vectors(theta: float, vecs, inverse_: bool = False) -> np.ndarray:
    vecs = np.asarray(vecs, dtype=np.float64)
    c, s = np.cos(theta), np.sin(theta)
    if inverse_:
        s = -s
    return np.stack([c * vecs[..., 0] - s * vecs[..., 1], s * vecs[..., 0] + c * vecs[..., 1]], axis=-1)


def knn_indices(query_poses, target_poses, target_valid, k: int) -> NeighborIndex:
    """K nearest valid targets per query by planar L2 distance.

    Output width is ``min(k, N)``; slots beyond the number of valid targets are
    marked invalid (their index is 0). Ties are broken by ascending target index.
    A query may select itself when it is also a target.
    """
    if k < 1:
        raise ValueError("knn_indices: K must be >= 1")
    q = np.asarray(query_poses, dtype=np.float64).reshape(-1, 3)
    t = np.asarray(target_poses, dtype=np.float64).reshape(-1, 3)
    valid = np.asarray(target_valid, dtype=bool).reshape(-1)
    if valid.shape[0] != t.shape[0]:
        raise ValueError("knn_indices: target_valid length mismatch")
    if not valid.any():
        raise EmptyNeighborhoodError("knn_indices: no valid targets")
    width = min(k, t.shape[0])
    d2 = (q[:, None, 0] - t[None, :, 0]) ** 2 + (q[:, None, 1] - t[None, :, 1]) ** 2
    d2[:, ~valid] = np.inf
    order = np.argsort(d2, axis=1, kind="stable")[:, :width]
    n_valid = int(valid.sum())
    slot_ok = np.broadcast_to(np.arange(width) < n_valid, order.shape).copy()
    idx = np.where(slot_ok, order, 0)
    return NeighborIndex(idx=idx.astype(np.int64), valid=slot_ok)
