"""Pinhole camera model, collinearity projection and GNSS look-at poses.

Conventions
-----------
* ``CameraPose.rotation_matrix`` (``M``) maps world offsets to camera axes:
  ``p_cam = M @ (P - X0)``; ``M = Rz(kappa) @ Ry(phi) @ Rx(omega)``.
  The collinearity coefficients ``r_ij`` are the entries of ``M.T``, so
  ``x = x0 + z * (r11 dX + r21 dY + r31 dZ) / (r13 dX + r23 dY + r33 dZ)``.
* Camera axes: x right, y down, z forward (depth > 0 in front).
* Pixels: x to the right, y down, (0, 0) is the centre of the top-left pixel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BehindCameraError, LastFrameError, OutOfBoundsError, ParseError

UP = np.array([0.0, 0.0, 1.0])


def rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]])


def rot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1.0, 0], [-s, 0, c]])


def rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def rotation_from_angles(omega, phi, kappa) -> np.ndarray:
    return rot_z(kappa) @ rot_y(phi) @ rot_x(omega)


def angles_from_rotation(M) -> tuple:
    """Inverse of :func:`rotation_from_angles`, phi in [-pi/2, pi/2]."""
    M = np.asarray(M, dtype=float)
    phi = math.asin(max(-1.0, min(1.0, -M[2, 0])))
    omega = math.atan2(M[2, 1], M[2, 2])
    kappa = math.atan2(M[1, 0], M[0, 0])
    return omega, phi, kappa


def nearest_rotation(A) -> np.ndarray:
    U, _, Vt = np.linalg.svd(A)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


@dataclass(frozen=True)
class CameraIntrinsics:
    width: int
    height: int
    principal_distance: float  # pixels
    x0: float = None
    y0: float = None

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if not self.principal_distance > 0:
            raise ValueError("principal distance must be positive")
        if self.x0 is None:
            object.__setattr__(self, "x0", (self.width - 1) / 2.0)
        if self.y0 is None:
            object.__setattr__(self, "y0", (self.height - 1) / 2.0)

    @property
    def K(self) -> np.ndarray:
        z = self.principal_distance
        return np.array([[z, 0, self.x0], [0, z, self.y0], [0, 0, 1.0]])

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "principal_distance": self.principal_distance,
            "x0": self.x0,
            "y0": self.y0,
        }

    @classmethod
    def from_dict(cls, d) -> "CameraIntrinsics":
        return cls(
            int(d["width"]), int(d["height"]), float(d["principal_distance"]),
            d.get("x0"), d.get("y0"),
        )


@dataclass(frozen=True, eq=False)
class CameraPose:
    position: np.ndarray  # X0, Y0, Z0 in metres
    angles: tuple  # omega, phi, kappa in radians
    rotation_matrix: np.ndarray = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        pos = np.array(self.position, dtype=float).reshape(3)
        pos.setflags(write=False)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))
        if self.rotation_matrix is None:
            M = rotation_from_angles(*self.angles)
        else:
            M = np.array(self.rotation_matrix, dtype=float)
        M.setflags(write=False)
        object.__setattr__(self, "rotation_matrix", M)

    @classmethod
    def from_matrix(cls, position, M) -> "CameraPose":
        """Build from a world-to-camera rotation; the matrix is kept verbatim."""
        return cls(position, angles_from_rotation(M), np.asarray(M, dtype=float))

    @property
    def params(self) -> np.ndarray:
        """(X0, Y0, Z0, omega, phi, kappa)."""
        return np.concatenate([self.position, self.angles])

    @classmethod
    def from_params(cls, p) -> "CameraPose":
        p = np.asarray(p, dtype=float)
        return cls(p[:3], p[3:6])

    @property
    def forward(self) -> np.ndarray:
        return self.rotation_matrix[2].copy()


def camera_coords(pose: CameraPose, P) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    return (P - pose.position) @ pose.rotation_matrix.T


def project(pose: CameraPose, k: CameraIntrinsics, P) -> np.ndarray:
    """Collinearity projection of world point(s) ``P`` (shape (3,) or (N, 3))."""
    pc = camera_coords(pose, P)
    depth = pc[..., 2]
    if np.any(depth <= 0):
        raise BehindCameraError("point not in front of the camera")
    x = k.x0 + k.principal_distance * pc[..., 0] / depth
    y = k.y0 + k.principal_distance * pc[..., 1] / depth
    return np.stack([x, y], axis=-1)


def pixel_ray(pose: CameraPose, k: CameraIntrinsics, pixel):
    """Return (origin, unit direction) of the ray through ``pixel``."""
    x, y = float(pixel[0]), float(pixel[1])
    if not (-0.5 <= x <= k.width - 0.5 and -0.5 <= y <= k.height - 0.5):
        raise OutOfBoundsError(f"pixel ({x}, {y}) outside {k.width}x{k.height}")
    d = np.array([(x - k.x0) / k.principal_distance, (y - k.y0) / k.principal_distance, 1.0])
    d = pose.rotation_matrix.T @ d
    return pose.position.copy(), d / np.linalg.norm(d)


def pixel_rays(pose: CameraPose, k: CameraIntrinsics) -> np.ndarray:
    """Unit directions through every pixel centre, shape (H, W, 3)."""
    xs = (np.arange(k.width) - k.x0) / k.principal_distance
    ys = (np.arange(k.height) - k.y0) / k.principal_distance
    gx, gy = np.meshgrid(xs, ys)
    d = np.stack([gx, gy, np.ones_like(gx)], axis=-1) @ pose.rotation_matrix
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


# ------------------------------------------------------------------ GNSS


@dataclass(frozen=True, eq=False)
class GnssTrack:
    frames: tuple
    positions: np.ndarray  # antenna positions, (N, 3)
    antenna_to_camera_height: float = 0.0

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float).reshape(-1, 3)
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "frames", tuple(self.frames))
        if len(self.frames) != len(pos):
            raise ValueError("frame ids and positions differ in length")

    def camera_position(self, i: int) -> np.ndarray:
        return self.positions[i] + np.array([0.0, 0.0, self.antenna_to_camera_height])


def load_track(path, antenna_to_camera_height: float = 0.0) -> GnssTrack:
    frames, pos = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ParseError(f"{path}:{lineno}: expected 'frame X Y Z'")
        try:
            pos.append([float(p) for p in parts[1:]])
        except ValueError:
            raise ParseError(f"{path}:{lineno}: non-numeric coordinate") from None
        frames.append(parts[0])
    return GnssTrack(frames, np.array(pos).reshape(-1, 3), antenna_to_camera_height)


def save_track(path, track: GnssTrack) -> None:
    lines = [f"{f} {p[0]!r} {p[1]!r} {p[2]!r}" for f, p in zip(track.frames, track.positions.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def arc_offset(r_gnss: float, angle_deg: float) -> float:
    """Metric displacement of the look-at target for an angular offset."""
    return r_gnss * angle_deg * math.pi / 180.0


def lookat_target(track: GnssTrack, frame: int, offsets=None, r_gnss=None):
    """Camera position and displaced look-at target for ``frame``.

    Pitch moves the target along world up, yaw along the horizontal axis
    to the left of the viewing direction (positive = left). ``r_gnss``
    defaults to the distance between the consecutive camera positions.
    """
    if frame < 0 or frame + 1 >= len(track.positions):
        raise LastFrameError(f"frame {frame} has no successor in a track of {len(track.positions)}")
    offsets = offsets or {}
    pos = track.camera_position(frame)
    target = track.camera_position(frame + 1)
    fwd = target - pos
    dist = float(np.linalg.norm(fwd))
    if dist == 0:
        raise ValueError("consecutive GNSS points coincide")
    r = dist if r_gnss is None else float(r_gnss)
    left = np.cross(UP, fwd)
    if np.linalg.norm(left) < 1e-12 * dist:
        left = np.array([0.0, 1.0, 0.0])
    left /= np.linalg.norm(left)
    target = (
        target
        + UP * arc_offset(r, offsets.get("pitch", 0.0))
        + left * arc_offset(r, offsets.get("yaw", 0.0))
    )
    return pos, target


def lookat_matrix(position, target, roll: float = 0.0) -> np.ndarray:
    """World-to-camera rotation looking from ``position`` to ``target``; roll in radians."""
    f = np.asarray(target, float) - np.asarray(position, float)
    f /= np.linalg.norm(f)
    right = np.cross(f, UP)
    if np.linalg.norm(right) < 1e-12:
        right = np.cross(f, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(f, right)
    return rot_z(roll) @ np.vstack([right, down, f])


def build_lookat_pose(track: GnssTrack, frame: int, offsets=None, r_gnss=None) -> CameraPose:
    """Virtual camera pose for ``frame``: offsets in degrees ({roll, pitch, yaw})."""
    offsets = offsets or {}
    pos, target = lookat_target(track, frame, offsets, r_gnss)
    M = lookat_matrix(pos, target, math.radians(offsets.get("roll", 0.0)))
    return CameraPose.from_matrix(pos, M)
