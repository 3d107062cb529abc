"""Per-pixel ray casting of a :class:`SemanticMesh`.

Five buffers come out of :func:`cast_scene`: hit distance, geometry
(building) id, primitive (triangle) id, primitive normal and barycentric
``(u, v)``. Barycentric pairing is fixed: ``u`` weights the first stored
vertex, ``v`` the second and ``s = 1 - u - v`` the third.

Miss sentinels: distance ``+inf``, ids ``MISS_ID`` (uint32 max), normal
``(0, 0, 0)``, barycentric ``(0, 0)``.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .semantic_mesh import SemanticMesh
from .virtual_camera import CameraIntrinsics, CameraPose, pixel_rays

MISS_ID = np.iinfo(np.uint32).max
RAY_EPS = 1e-9  # determinant threshold
T_EPS = 1e-9  # minimum hit distance, metres
LEAF_SIZE = 8


@dataclass(frozen=True, eq=False)
class RaycastBuffers:
    hit_distance: np.ndarray  # (H, W) float64
    geometry_id: np.ndarray  # (H, W) uint32
    primitive_id: np.ndarray  # (H, W) uint32
    primitive_normal: np.ndarray  # (H, W, 3) float64
    barycentric: np.ndarray  # (H, W, 2) float64, (u, v)

    @property
    def shape(self):
        return self.hit_distance.shape

    @property
    def hit_mask(self) -> np.ndarray:
        return self.primitive_id != MISS_ID

    def s(self) -> np.ndarray:
        return 1.0 - self.barycentric[..., 0] - self.barycentric[..., 1]

    def equals(self, other: "RaycastBuffers") -> bool:
        """Bitwise equality of all five buffers."""
        return all(
            a.dtype == b.dtype and a.tobytes() == b.tobytes()
            for a, b in zip(self._arrays(), other._arrays())
        )

    def _arrays(self):
        return (
            self.hit_distance, self.geometry_id, self.primitive_id,
            self.primitive_normal, self.barycentric,
        )


# ------------------------------------------------------------------- BVH


class BVH:
    """Median-split bounding-volume hierarchy over triangle centroids."""

    def __init__(self, tri_pts: np.ndarray, leaf_size: int = LEAF_SIZE):
        self.tri_pts = tri_pts
        self.lo = []
        self.hi = []
        self.children = []  # (left, right) or None
        self.items = []  # sorted triangle indices at leaves
        if len(tri_pts):
            cen = tri_pts.mean(axis=1)
            self._build(np.arange(len(tri_pts)), cen, leaf_size)
        self.lo = np.array(self.lo).reshape(-1, 3)
        self.hi = np.array(self.hi).reshape(-1, 3)

    def _build(self, idx, cen, leaf_size):
        node = len(self.lo)
        pts = self.tri_pts[idx].reshape(-1, 3)
        self.lo.append(pts.min(axis=0))
        self.hi.append(pts.max(axis=0))
        self.children.append(None)
        self.items.append(None)
        if len(idx) <= leaf_size:
            self.items[node] = np.sort(idx)
            return node
        c = cen[idx]
        axis = int(np.argmax(np.ptp(c, axis=0)))
        order = idx[np.argsort(c[:, axis], kind="stable")]
        half = len(order) // 2
        left = self._build(order[:half], cen, leaf_size)
        right = self._build(order[half:], cen, leaf_size)
        self.children[node] = (left, right)
        return node


def _slab_entry(origin, inv_d, lo, hi):
    t1 = (lo - origin) * inv_d
    t2 = (hi - origin) * inv_d
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    # nan arises for 0 * inf on a slab boundary; treat as unbounded
    tmin = np.where(np.isnan(tmin), -np.inf, tmin)
    tmax = np.where(np.isnan(tmax), np.inf, tmax)
    t_enter = np.maximum(np.maximum(tmin[:, 0], tmin[:, 1]), tmin[:, 2])
    t_exit = np.minimum(np.minimum(tmax[:, 0], tmax[:, 1]), tmax[:, 2])
    return t_enter, t_exit


def _cross(a, b):
    return np.stack(
        [
            a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
            a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
            a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0],
        ],
        axis=-1,
    )


def _dot(a, b):
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


def moller_trumbore(origin, dirs, tri_pts):
    """Intersect rays with triangles.

    ``origin`` (3,), ``dirs`` (N, 3), ``tri_pts`` (M, 3, 3). Returns
    ``t, b1, b2`` of shape (N, M) with ``t = inf`` where there is no hit;
    the hit point is ``(1 - b1 - b2) P1 + b1 P2 + b2 P3``. Back faces hit.
    """
    p1 = tri_pts[:, 0]
    e1 = tri_pts[:, 1] - p1
    e2 = tri_pts[:, 2] - p1
    d = dirs[:, None, :]
    pvec = _cross(d, e2[None])
    det = _dot(e1[None], pvec)
    ok = np.abs(det) > RAY_EPS
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = (origin - p1)[None]
    b1 = _dot(tvec, pvec) * inv
    qvec = _cross(tvec, e1[None])
    b2 = _dot(d, qvec) * inv
    t = _dot(e2[None], qvec) * inv
    hit = ok & (b1 >= 0) & (b2 >= 0) & (b1 + b2 <= 1) & (t > T_EPS)
    return np.where(hit, t, np.inf), b1, b2


def _trace(bvh: BVH, origin, dirs):
    n = len(dirs)
    best_t = np.full(n, np.inf)
    best_i = np.full(n, MISS_ID, dtype=np.int64)
    best_b1 = np.zeros(n)
    best_b2 = np.zeros(n)
    if not len(bvh.lo) or n == 0:
        return best_t, best_i, best_b1, best_b2
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_d = 1.0 / dirs
    stack = [(0, np.arange(n))]
    while stack:
        node, rays = stack.pop()
        lo, hi = bvh.lo[node], bvh.hi[node]
        with np.errstate(invalid="ignore"):
            t_in, t_out = _slab_entry(origin, inv_d[rays], lo, hi)
        keep = (t_out >= np.maximum(t_in, 0.0)) & (t_in <= best_t[rays])
        rays = rays[keep]
        if len(rays) == 0:
            continue
        kids = bvh.children[node]
        if kids is None:
            tris = bvh.items[node]
            t, b1, b2 = moller_trumbore(origin, dirs[rays], bvh.tri_pts[tris])
            j = np.argmin(t, axis=1)  # first minimum = lowest index in the sorted leaf
            r = np.arange(len(rays))
            tj = t[r, j]
            cand = tris[j]
            cur_t = best_t[rays]
            cur_i = best_i[rays]
            better = (tj < cur_t) | ((tj == cur_t) & (cand < cur_i) & np.isfinite(tj))
            upd = rays[better]
            best_t[upd] = tj[better]
            best_i[upd] = cand[better]
            best_b1[upd] = b1[r, j][better]
            best_b2[upd] = b2[r, j][better]
        else:
            stack.append((kids[1], rays))
            stack.append((kids[0], rays))
    return best_t, best_i, best_b1, best_b2


def cast_scene(
    mesh: SemanticMesh, pose: CameraPose, k: CameraIntrinsics, workers: int = 1, bvh=None
) -> RaycastBuffers:
    """One ray per pixel centre; nearest hit wins, ties go to the lower triangle index."""
    H, W = k.height, k.width
    dirs = pixel_rays(pose, k).reshape(-1, 3)
    origin = pose.position.copy()
    if bvh is None:
        bvh = BVH(mesh.triangle_vertices())
    chunks = np.array_split(np.arange(len(dirs)), max(1, int(workers)))

    def run(idx):
        return _trace(bvh, origin, dirs[idx])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    t, tri, b1, b2 = (np.concatenate(p) for p in zip(*parts))

    hit = tri != MISS_ID
    geom = np.full(len(tri), MISS_ID, dtype=np.uint32)
    normal = np.zeros((len(tri), 3))
    bary = np.zeros((len(tri), 2))
    if hit.any():
        th = tri[hit]
        geom[hit] = mesh.tri_building[th]
        normal[hit] = mesh.tri_normals[th]
        bary[hit, 0] = 1.0 - b1[hit] - b2[hit]
        bary[hit, 1] = b1[hit]
    return RaycastBuffers(
        t.reshape(H, W),
        geom.reshape(H, W),
        tri.astype(np.uint32).reshape(H, W),
        normal.reshape(H, W, 3),
        bary.reshape(H, W, 2),
    )


# ----------------------------------------------------------- normal image

BACKGROUND_RGB = (0, 0, 0)  # unreachable: a unit normal has a component >= 1/sqrt(3)


def render_normal_image(buffers: RaycastBuffers, mesh: SemanticMesh = None) -> np.ndarray:
    """8-bit RGB false-colour image of componentwise ``|normal|``."""
    img = np.rint(np.abs(buffers.primitive_normal) * 255.0).astype(np.uint8)
    img[~buffers.hit_mask] = BACKGROUND_RGB
    return img


def to_gray(rgb: np.ndarray) -> np.ndarray:
    """ITU-R 601 luma, uint8."""
    rgb = np.asarray(rgb, dtype=float)
    g = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return np.clip(np.rint(g), 0, 255).astype(np.uint8)


# ------------------------------------------------------------- buffer I/O


def save_buffers(out_dir, buffers: RaycastBuffers, mesh: SemanticMesh = None, pose=None, k=None):
    """Dump buffers as little-endian ``.npy`` grids plus ``normal.png``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "distance.npy", buffers.hit_distance.astype("<f8"))
    np.save(out / "geometry_id.npy", buffers.geometry_id.astype("<u4"))
    np.save(out / "primitive_id.npy", buffers.primitive_id.astype("<u4"))
    np.save(out / "normals.npy", buffers.primitive_normal.astype("<f8"))
    np.save(out / "barycentric.npy", buffers.barycentric.astype("<f8"))
    Image.fromarray(render_normal_image(buffers)).save(out / "normal.png")
    meta = {
        "format": "lodloc-buffers-1",
        "endianness": "little",
        "miss": {"distance": "inf", "id": int(MISS_ID), "normal": [0, 0, 0], "barycentric": [0, 0]},
        "barycentric": "u weights vertex 1, v vertex 2, s = 1 - u - v vertex 3",
    }
    if pose is not None:
        meta["pose"] = {"position": pose.position.tolist(), "angles": list(pose.angles)}
    if k is not None:
        meta["intrinsics"] = k.to_dict()
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    if mesh is not None:
        np.savez(
            out / "mesh.npz",
            vertices=mesh.vertices.astype("<f8"),
            triangles=mesh.triangles.astype("<i8"),
            tri_building=mesh.tri_building.astype("<i8"),
            tri_semantics=mesh.tri_semantics.astype("<i8"),
            tri_normals=mesh.tri_normals.astype("<f8"),
            tri_lod=mesh.tri_lod.astype("<i8"),
            tri_surface=mesh.tri_surface.astype("<i8"),
            building_ids=np.array(mesh.building_ids, dtype=str),
        )


def load_buffers(in_dir):
    """Return (buffers, mesh or None, meta dict)."""
    d = Path(in_dir)
    buffers = RaycastBuffers(
        np.load(d / "distance.npy"),
        np.load(d / "geometry_id.npy"),
        np.load(d / "primitive_id.npy"),
        np.load(d / "normals.npy"),
        np.load(d / "barycentric.npy"),
    )
    mesh = None
    if (d / "mesh.npz").exists():
        z = np.load(d / "mesh.npz")
        mesh = SemanticMesh(
            z["vertices"], z["triangles"], z["tri_building"], z["tri_semantics"],
            z["tri_normals"], z["tri_lod"], z["tri_surface"], [str(s) for s in z["building_ids"]],
        )
    meta = json.loads((d / "meta.json").read_text()) if (d / "meta.json").exists() else {}
    return buffers, mesh, meta
