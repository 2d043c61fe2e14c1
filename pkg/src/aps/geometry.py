"""Quaternion and pinhole-camera math shared by rendering, trajectories, and metrics.

Conventions
-----------
- World frame: X east, Y north, Z up (meters).
- Body frame: X forward, Y left, Z up. Pose quaternions are (w, x, y, z) and
  rotate body-frame vectors into the world frame; a level heading is a pure
  rotation about Z. Yaw is measured CCW from world +X, so yaw 0 faces east.
- The camera is rigidly mounted looking along body +X. Its optical frame
  (+Z forward, +X image-right, +Y image-down) relates to the body frame by
  the fixed CAMERA_ALIGNMENT matrix, which the camera model composes in, so
  pose labels stay smooth functions of heading.
- Pixel coordinates: u along width, v along height, (0, 0) at the top-left
  pixel center; array indexing is image[v, u].
"""
from __future__ import annotations

import math

import numpy as np

from .errors import InvalidQuaternionError


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = float(np.linalg.norm(q))
    if n == 0.0:
        raise InvalidQuaternionError("zero-norm quaternion")
    return q / n


def quat_canonical(q) -> np.ndarray:
    """Flip sign so the first nonzero component is positive.

    q and -q encode the same rotation; regression targets use the canonical
    representative so nearby headings get nearby targets.
    """
    q = np.asarray(q, dtype=np.float64)
    for c in q:
        if c != 0.0:
            return -q if c < 0.0 else q
    raise InvalidQuaternionError("zero-norm quaternion")


def yaw_quat(yaw: float) -> np.ndarray:
    """Unit quaternion for a level body heading `yaw` (canonical sign)."""
    q = np.array([math.cos(yaw / 2.0), 0.0, 0.0, math.sin(yaw / 2.0)])
    return quat_canonical(q)


# columns are the optical axes (right, down, forward) in the body frame
CAMERA_ALIGNMENT = np.array(
    [
        [0.0, 0.0, 1.0],
        [-1.0, 0.0, 0.0],
        [0.0, -1.0, 0.0],
    ]
)


def quat_to_rotmat(q) -> np.ndarray:
    """3x3 matrix sending body-frame vectors to world frame."""
    w, x, y, z = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotmat_to_quat(r) -> np.ndarray:
    """Inverse of quat_to_rotmat (Shepperd's method, canonical sign)."""
    r = np.asarray(r, dtype=np.float64)
    t = np.trace(r)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(r)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = math.sqrt(r[i, i] - r[j, j] - r[k, k] + 1.0) * 2.0
        q = np.empty(4)
        q[0] = (r[k, j] - r[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (r[j, i] + r[i, j]) / s
        q[1 + k] = (r[k, i] + r[i, k]) / s
    return quat_canonical(quat_normalize(q))


def yaw_forward(yaw: float) -> np.ndarray:
    return np.array([math.cos(yaw), math.sin(yaw), 0.0])


def camera_rotation_from_yaw(yaw: float) -> np.ndarray:
    """Optical-to-world rotation for a level heading: columns are the image
    right, image down, and viewing directions in world coordinates."""
    f = yaw_forward(yaw)
    down = np.array([0.0, 0.0, -1.0])
    right = np.cross(down, f)
    return np.stack([right, down, f], axis=1)


class PinholeCamera:
    """Square-pixel pinhole model defined by image size and vertical FOV."""

    def __init__(self, width: int, height: int, vertical_fov_deg: float):
        self.width = int(width)
        self.height = int(height)
        self.fy = (height / 2.0) / math.tan(math.radians(vertical_fov_deg) / 2.0)
        self.fx = self.fy
        self.cx = (width - 1) / 2.0
        self.cy = (height - 1) / 2.0

    def world_to_camera(self, points, position, quaternion) -> np.ndarray:
        r = quat_to_rotmat(quaternion) @ CAMERA_ALIGNMENT
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return (p - np.asarray(position, dtype=np.float64)) @ r

    def project(self, points, position, quaternion):
        """Project world points; returns (uv (N,2), depth (N,)).

        Points behind the camera get negative depth; callers filter on it.
        """
        cam = self.world_to_camera(points, position, quaternion)
        z = cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * cam[:, 0] / z + self.cx
            v = self.fy * cam[:, 1] / z + self.cy
        return np.stack([u, v], axis=1), z

    def pixel_rays(self, position, quaternion) -> np.ndarray:
        """World-frame ray directions through every pixel center, shape (H, W, 3).

        Directions have unit z in the camera frame (not normalized), so the
        ray parameter equals camera-frame depth.
        """
        r = quat_to_rotmat(quaternion) @ CAMERA_ALIGNMENT
        u = np.arange(self.width, dtype=np.float64)
        v = np.arange(self.height, dtype=np.float64)
        dx = (u - self.cx) / self.fx
        dy = (v - self.cy) / self.fy
        d = np.empty((self.height, self.width, 3))
        d[:, :, 0] = dx[None, :]
        d[:, :, 1] = dy[:, None]
        d[:, :, 2] = 1.0
        return d @ r.T
