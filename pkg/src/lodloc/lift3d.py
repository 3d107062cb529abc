"""Lift matched virtual-image pixels to world points through the ray-cast buffers."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MissError, ParseError
from .raycaster import MISS_ID, RaycastBuffers
from .semantic_mesh import SemanticMesh

log = logging.getLogger(__name__)

BARY_EPS = 1e-9
WEIGHT_POLICIES = ("identity", "inverse-distance")


@dataclass(frozen=True)
class Correspondence2D3D:
    x: float
    y: float
    X: float
    Y: float
    Z: float
    weight: float = 1.0

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError("weight must be positive")
        if not np.all(np.isfinite([self.X, self.Y, self.Z])):
            raise ValueError("world point must be finite")

    @property
    def pixel(self):
        return np.array([self.x, self.y])

    @property
    def point(self):
        return np.array([self.X, self.Y, self.Z])


@dataclass
class LiftResult:
    correspondences: list
    dropped: int = 0

    def __len__(self):
        return len(self.correspondences)


def barycentric_point(tri_pts, u, v):
    """``u * P1 + v * P2 + s * P3`` with ``s = 1 - u - v``; accepts batches."""
    tri_pts = np.asarray(tri_pts, dtype=float)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    s = 1.0 - u - v
    return u[..., None] * tri_pts[..., 0, :] + v[..., None] * tri_pts[..., 1, :] + s[..., None] * tri_pts[..., 2, :]


def lift(buffers: RaycastBuffers, mesh: SemanticMesh, pixel) -> np.ndarray:
    """World point behind integer pixel ``(x, y)`` of the virtual image."""
    x, y = int(pixel[0]), int(pixel[1])
    H, W = buffers.shape
    if not (0 <= x < W and 0 <= y < H):
        raise MissError(f"pixel ({x}, {y}) outside the buffers")
    tri = int(buffers.primitive_id[y, x])
    if tri == MISS_ID:
        raise MissError(f"pixel ({x}, {y}) is a miss")
    u, v = buffers.barycentric[y, x]
    s = 1.0 - u - v
    if s < -BARY_EPS or s > 1.0 + BARY_EPS:
        log.warning("barycentric s=%g out of range at (%d, %d); clamped", s, x, y)
        s = min(max(s, 0.0), 1.0)
        u, v = (u, v) if u + v == 0 else (u * (1 - s) / (u + v), v * (1 - s) / (u + v))
    P = mesh.vertices[mesh.triangles[tri]]
    return u * P[0] + v * P[1] + s * P[2]


def build_correspondences(matches, buffers: RaycastBuffers, mesh: SemanticMesh, weights: str = "identity") -> LiftResult:
    """Pair each match's real-image keypoint with the world point under its virtual keypoint.

    Virtual keypoints round to the nearest pixel; misses are dropped and counted.
    """
    if weights not in WEIGHT_POLICIES:
        raise ValueError(f"unknown weight policy {weights!r}")
    out = []
    dropped = 0
    H, W = buffers.shape
    for xa, ya, xb, yb in matches.coordinates():
        px, py = int(np.rint(xb)), int(np.rint(yb))
        if not (0 <= px < W and 0 <= py < H) or buffers.primitive_id[py, px] == MISS_ID:
            dropped += 1
            continue
        X = lift(buffers, mesh, (px, py))
        w = 1.0 if weights == "identity" else 1.0 / float(buffers.hit_distance[py, px])
        out.append(Correspondence2D3D(float(xa), float(ya), *map(float, X), w))
    return LiftResult(out, dropped)


CSV_FIELDS = ("x", "y", "X", "Y", "Z", "weight")


def write_correspondences(path, correspondences) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for c in correspondences:
            w.writerow([repr(float(getattr(c, f))) for f in CSV_FIELDS])


def read_correspondences(path) -> list:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(CSV_FIELDS) - set(reader.fieldnames):
            raise ParseError(f"{path}: expected columns {', '.join(CSV_FIELDS)}")
        for row in reader:
            try:
                out.append(Correspondence2D3D(*(float(row[f]) for f in CSV_FIELDS)))
            except ValueError as exc:
                raise ParseError(f"{path}: bad row {row}: {exc}") from None
    return out


def read_matches_csv(path) -> np.ndarray:
    """(k, 5) array xA, yA, xB, yB, hamming."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows.append([float(row[c]) for c in ("xA", "yA", "xB", "yB", "hamming")])
    return np.array(rows).reshape(-1, 5)


class _CsvMatches:
    """Adapter giving a matches CSV the ``coordinates()`` interface of a MatchSet."""

    def __init__(self, rows):
        self.rows = rows

    def coordinates(self):
        return self.rows[:, :4]

    def __len__(self):
        return len(self.rows)


def matches_from_csv(path):
    return _CsvMatches(read_matches_csv(Path(path)))
