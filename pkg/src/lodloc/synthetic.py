"""Synthetic scenes standing in for proprietary imagery.

Builders for the fixtures used across tests and scripts: unit cubes, a cube
with a recessed window, a street of LoD2/LoD3 twins and an underpass block,
plus a shaded "optical" renderer that plays the role of the real camera.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .features import Method
from .raycaster import BVH, cast_scene
from .semantic_mesh import (
    Building,
    LoD,
    SemanticModel,
    Semantics,
    Surface,
    format_model,
    newell_normal,
    triangulate,
)
from .virtual_camera import (
    CameraIntrinsics,
    CameraPose,
    GnssTrack,
    build_lookat_pose,
    save_track,
)

Z = np.array([0.0, 0.0, 1.0])


def _oriented(ring, normal):
    ring = np.asarray(ring, dtype=float)
    if np.dot(newell_normal(ring), normal) < 0:
        ring = ring[::-1]
    return ring


def _rect(corners, normal, semantics, holes=()):
    return Surface(semantics, _oriented(corners, normal), [_oriented(h, -np.asarray(normal)) for h in holes])


def box_surfaces(footprint, z0, z1, roof=True, ground=True, wall_sem=Semantics.Wall):
    """Prism over a CCW footprint; walls face outward."""
    fp = np.asarray(footprint, dtype=float)
    surfs = []
    if ground:
        surfs.append(Surface(Semantics.Ground, [(x, y, z0) for x, y in fp[::-1]]))
    if roof:
        surfs.append(Surface(Semantics.Roof, [(x, y, z1) for x, y in fp]))
    for i in range(len(fp)):
        (xa, ya), (xb, yb) = fp[i], fp[(i + 1) % len(fp)]
        surfs.append(Surface(wall_sem, [(xa, ya, z0), (xb, yb, z0), (xb, yb, z1), (xa, ya, z1)]))
    return surfs


def box_building(bid, footprint, z0, z1, closed=True) -> Building:
    return Building(bid, box_surfaces(footprint, z0, z1), closed)


def cube_model() -> SemanticModel:
    """Axis-aligned unit cube, LoD2."""
    fp = [(0, 0), (1, 0), (1, 1), (0, 1)]
    return SemanticModel([box_building("cube", fp, 0.0, 1.0)], LoD.LoD2, "local metric")


class Facade:
    """Local frame of a vertical wall from ``p0`` to ``p1`` (outward = right side)."""

    def __init__(self, p0, p1, z0, z1):
        self.p0 = np.array([p0[0], p0[1], 0.0])
        p1 = np.array([p1[0], p1[1], 0.0])
        self.length = float(np.linalg.norm(p1 - self.p0))
        self.t = (p1 - self.p0) / self.length
        self.n = np.cross(self.t, Z)
        self.z0, self.z1 = z0, z1

    def at(self, s, h, depth=0.0):
        return self.p0 + s * self.t + (self.z0 + h) * Z - depth * self.n

    def surfaces(self, windows=(), doors=(), depth=0.2, passages=()):
        """Wall with recessed windows/doors; ``passages`` are open notches.

        windows: (s0, s1, h0, h1); doors/passages: (s0, s1, h1) from ground.
        """
        H = self.z1 - self.z0
        notches = sorted([(d[0], d[1], d[2]) for d in doors] + [(p[0], p[1], p[2]) for p in passages])
        outline = [(0.0, 0.0)]
        for s0, s1, h1 in notches:
            outline += [(s0, 0.0), (s0, h1), (s1, h1), (s1, 0.0)]
        outline += [(self.length, 0.0), (self.length, H), (0.0, H)]
        outer = [self.at(s, h) for s, h in outline]
        holes = [[self.at(s0, h0), self.at(s1, h0), self.at(s1, h1), self.at(s0, h1)] for s0, s1, h0, h1 in windows]
        surfs = [_rect(outer, self.n, Semantics.Wall, holes)]
        for s0, s1, h0, h1 in windows:
            surfs += self._recess(s0, s1, h0, h1, depth, Semantics.Window, sill=True)
        for s0, s1, h1 in doors:
            surfs += self._recess(s0, s1, 0.0, h1, depth, Semantics.Door, sill=False)
        return surfs

    def _recess(self, s0, s1, h0, h1, d, sem, sill):
        a = self.at
        out = [_rect([a(s0, h0, d), a(s1, h0, d), a(s1, h1, d), a(s0, h1, d)], self.n, sem)]
        if sill:
            out.append(_rect([a(s0, h0, 0), a(s1, h0, 0), a(s1, h0, d), a(s0, h0, d)], Z, Semantics.Wall))
        out.append(_rect([a(s0, h1, 0), a(s1, h1, 0), a(s1, h1, d), a(s0, h1, d)], -Z, Semantics.Wall))
        out.append(_rect([a(s0, h0, 0), a(s0, h1, 0), a(s0, h1, d), a(s0, h0, d)], self.t, Semantics.Wall))
        out.append(_rect([a(s1, h0, 0), a(s1, h1, 0), a(s1, h1, d), a(s1, h0, d)], -self.t, Semantics.Wall))
        return out


def cube_window_model() -> SemanticModel:
    """Unit cube, LoD3: one wall (x = 1) with a recessed window."""
    fp = [(0, 0), (1, 0), (1, 1), (0, 1)]
    surfs = []
    surfs.append(Surface(Semantics.Ground, [(x, y, 0.0) for x, y in fp[::-1]]))
    surfs.append(Surface(Semantics.Roof, [(x, y, 1.0) for x, y in fp]))
    for i in range(4):
        f = Facade(fp[i], fp[(i + 1) % 4], 0.0, 1.0)
        if i == 1:
            surfs += f.surfaces(windows=[(0.3, 0.7, 0.35, 0.75)], depth=0.1)
        else:
            surfs += f.surfaces()
    return SemanticModel([Building("cube", surfs, closed=False)], LoD.LoD3, "local metric")


def _window_grid(length, height, floor_h=3.0, win_w=1.2, win_h=1.5, bay=3.0, first_floor=1, door_at=None):
    wins = []
    n_bays = int((length - 1.0) // bay)
    margin = (length - n_bays * bay) / 2.0
    floors = int(height // floor_h)
    for f in range(first_floor, floors):
        h0 = f * floor_h + 0.9
        if h0 + win_h > height - 0.3:
            continue
        for b in range(n_bays):
            sc = margin + (b + 0.5) * bay
            if door_at is not None and f == 0 and abs(sc - door_at) < bay / 2:
                continue
            wins.append((sc - win_w / 2, sc + win_w / 2, h0, h0 + win_h))
    return wins


def _eaves(fp, z, overhang=0.5, thickness=0.3):
    """Overhanging roof slab: top, fascia and soffit (soffit has the footprint as hole)."""
    fp = np.asarray(fp, dtype=float)
    c = fp.mean(axis=0)
    ext = []
    for x, y in fp:
        ext.append((x + math.copysign(overhang, x - c[0]), y + math.copysign(overhang, y - c[1])))
    ext = np.array(ext)
    top = z + thickness
    surfs = [Surface(Semantics.Roof, [(x, y, top) for x, y in ext])]
    surfs.append(
        _rect([(x, y, z) for x, y in ext], -Z, Semantics.Roof, holes=[[(x, y, z) for x, y in fp]])
    )
    surfs += box_surfaces(ext, z, top, roof=False, ground=False, wall_sem=Semantics.Roof)
    return surfs


def street_building(bid, x0, length, side, height=12.0, depth=10.0, lod=LoD.LoD3, door=True, street_half=6.0):
    """Building on the left (side=+1, y > 0) or right (side=-1) of a street along +x."""
    if side > 0:
        fp = [(x0, street_half), (x0 + length, street_half), (x0 + length, street_half + depth), (x0, street_half + depth)]
        front = 0  # wall fp[0] -> fp[1] faces -y
    else:
        fp = [(x0, -street_half - depth), (x0 + length, -street_half - depth), (x0 + length, -street_half), (x0, -street_half)]
        front = 2  # wall fp[2] -> fp[3] faces +y
    if lod <= LoD.LoD2:
        return Building(bid, box_surfaces(fp, 0.0, height), closed=True)
    surfs = [Surface(Semantics.Ground, [(x, y, 0.0) for x, y in fp[::-1]])]
    for i in range(4):
        f = Facade(fp[i], fp[(i + 1) % 4], 0.0, height)
        if i == front:
            door_s = length / 2 if door else None
            wins = _window_grid(length, height, first_floor=0, door_at=door_s)
            doors = [(door_s - 0.8, door_s + 0.8, 2.4)] if door else []
            surfs += f.surfaces(windows=wins, doors=doors, depth=0.25)
        else:
            surfs += f.surfaces()
    surfs += _eaves(fp, height)
    return Building(bid, surfs, closed=False)


def street_models(n_per_side=3, length=14.0, gap=4.0, start=8.0):
    """(lod2, lod3_left, truth) models of a two-sided street along +x.

    The LoD3 model covers only the left side, mirroring hybrid city models
    where LoD3 exists on one side of the street; ``truth`` is LoD3 on both
    sides and is only used to synthesise the optical images.
    """
    lod2, lod3, truth = [], [], []
    for side, tag in ((1, "L"), (-1, "R")):
        for i in range(n_per_side):
            x0 = start + i * (length + gap) + (0 if side > 0 else gap / 2)
            h = 12.0 + 3.0 * ((i + (side < 0)) % 2)
            bid = f"{tag}{i}"
            lod2.append(street_building(bid, x0, length, side, h, lod=LoD.LoD2))
            t3 = street_building(bid, x0, length, side, h, lod=LoD.LoD3, door=(i % 2 == 0))
            truth.append(t3)
            if side > 0:
                lod3.append(t3)
    return (
        SemanticModel(lod2, LoD.LoD2, "synthetic street"),
        SemanticModel(lod3, LoD.LoD3, "synthetic street"),
        SemanticModel(truth, LoD.LoD3, "synthetic street"),
    )


def underpass_models(x0=0.0, length=20.0, height=12.0, depth=10.0, pass_w=4.0, pass_h=4.5, street_half=6.0):
    """(lod2, lod3) of a block with a ground-floor through-passage, plus a courtyard building.

    The passage is centred on the facade and runs in +y; the LoD2 twin
    renders a vertical wall down to the ground where the passage is.
    """
    fp = [(x0, street_half), (x0 + length, street_half), (x0 + length, street_half + depth), (x0, street_half + depth)]
    s0, s1 = length / 2 - pass_w / 2, length / 2 + pass_w / 2
    surfs = [Surface(Semantics.Roof, [(x, y, height) for x, y in fp])]
    wins = [
        w for w in _window_grid(length, height, first_floor=1)
        if not (w[2] < pass_h + 0.3 and w[1] > s0 - 0.3 and w[0] < s1 + 0.3)
    ]
    front = Facade(fp[0], fp[1], 0.0, height)
    surfs += front.surfaces(windows=wins, passages=[(s0, s1, pass_h)], depth=0.25)
    surfs += Facade(fp[1], fp[2], 0.0, height).surfaces()
    back = Facade(fp[2], fp[3], 0.0, height)
    surfs += back.surfaces(passages=[(length - s1, length - s0, pass_h)])
    surfs += Facade(fp[3], fp[0], 0.0, height).surfaces()
    ya, yb = street_half, street_half + depth
    xa, xb = x0 + s0, x0 + s1
    # passage side walls face into the passage, ceiling faces down
    surfs.append(_rect([(xa, ya, 0), (xa, yb, 0), (xa, yb, pass_h), (xa, ya, pass_h)], np.array([1.0, 0, 0]), Semantics.Wall))
    surfs.append(_rect([(xb, ya, 0), (xb, yb, 0), (xb, yb, pass_h), (xb, ya, pass_h)], np.array([-1.0, 0, 0]), Semantics.Wall))
    surfs.append(_rect([(xa, ya, pass_h), (xb, ya, pass_h), (xb, yb, pass_h), (xa, yb, pass_h)], -Z, Semantics.Other))
    # ground of the block minus the passage strip: two pieces
    surfs.append(Surface(Semantics.Ground, [(x, y, 0.0) for x, y in [(x0, ya), (x0, yb), (xa, yb), (xa, ya)]]))
    surfs.append(Surface(Semantics.Ground, [(x, y, 0.0) for x, y in [(xb, ya), (xb, yb), (x0 + length, yb), (x0 + length, ya)]]))
    block3 = Building("U0", surfs, closed=False)
    block2 = Building("U0", box_surfaces(fp, 0.0, height), closed=True)

    # courtyard building seen through the passage
    cy = street_half + depth + 8.0
    cfp = [(x0 + 2, cy), (x0 + length - 2, cy), (x0 + length - 2, cy + 8), (x0 + 2, cy + 8)]
    csurfs = [Surface(Semantics.Ground, [(x, y, 0.0) for x, y in cfp[::-1]]), Surface(Semantics.Roof, [(x, y, 9.0) for x, y in cfp])]
    cwins = _window_grid(length - 4, 9.0, first_floor=0)
    csurfs += Facade(cfp[0], cfp[1], 0.0, 9.0).surfaces(windows=cwins, depth=0.25)
    for i in (1, 2, 3):
        csurfs += Facade(cfp[i], cfp[(i + 1) % 4], 0.0, 9.0).surfaces()
    court3 = Building("C0", csurfs, closed=False)
    court2 = box_building("C0", cfp, 0.0, 9.0)
    return (
        SemanticModel([block2, court2], LoD.LoD2, "synthetic underpass"),
        SemanticModel([block3, court3], LoD.LoD3, "synthetic underpass"),
    )


def frontal_plane_model(distance=10.0, half=50.0) -> SemanticModel:
    """Large square wall at x = distance facing -x (toward a camera at the origin)."""
    d = distance
    wall = Surface(Semantics.Wall, [(d, half, -half), (d, -half, -half), (d, -half, half), (d, half, half)])
    others = [
        Surface(Semantics.Other, [(d + 1, -half, -half), (d + 1, half, -half), (d + 1, half, half), (d + 1, -half, half)]),
        Surface(Semantics.Other, [(d, -half, half), (d, -half + 1, half), (d + 1, -half + 1, half), (d + 1, -half, half)]),
        Surface(Semantics.Other, [(d, -half, -half), (d + 1, -half, -half), (d + 1, -half + 1, -half), (d, -half + 1, -half)]),
    ]
    return SemanticModel([Building("plane", [wall] + others)], LoD.LoD2, "fixture")


# ------------------------------------------------------------- trajectories


def street_track(n_frames=24, spacing=2.0, start=2.0, lateral=-1.5, antenna_z=1.0, height=1.5,
                 gnss_sigma=0.3, seed=0):
    """(true track, GNSS track): the vehicle drives +x; GNSS adds seeded noise."""
    rng = np.random.default_rng(seed)
    xs = start + spacing * np.arange(n_frames + 1)
    true = np.column_stack([xs, np.full_like(xs, lateral), np.full_like(xs, antenna_z)])
    noisy = true + rng.normal(0.0, gnss_sigma, true.shape) * np.array([1.0, 1.0, 0.3])
    frames = [f"{i:04d}" for i in range(n_frames + 1)]
    return GnssTrack(frames, true, height), GnssTrack(frames, noisy, height)


def underpass_track(x=10.0, y_start=-6.0, spacing=2.0, n_frames=7, antenna_z=1.0, height=1.5,
                    gnss_sigma=0.1, seed=0):
    """(true, GNSS) tracks approaching the passage of :func:`underpass_models` head-on.

    Frame :data:`UNDERPASS_FRAME` stands 4 m in front of the facade, where
    the whole frustum falls on the passage mouth and its surroundings.
    """
    rng = np.random.default_rng(seed)
    ys = y_start + spacing * np.arange(n_frames + 1)
    true = np.column_stack([np.full_like(ys, x), ys, np.full_like(ys, antenna_z)])
    noisy = true + rng.normal(0.0, gnss_sigma, true.shape) * np.array([1.0, 1.0, 0.3])
    frames = [f"{i:04d}" for i in range(n_frames + 1)]
    return GnssTrack(frames, true, height), GnssTrack(frames, noisy, height)


UNDERPASS_FRAME = 4
STREET_OFFSETS = {"yaw": 45.0}  # look towards the left-hand facades


def true_pose(track: GnssTrack, i: int, offsets=None) -> CameraPose:
    """Pose of the optical camera, built from the error-free track."""
    return build_lookat_pose(track, i, offsets)


DEFAULT_INTRINSICS = CameraIntrinsics(320, 240, 260.0)
STREET_INTRINSICS = CameraIntrinsics(480, 360, 390.0)

_ALBEDO = {
    Semantics.Wall: 0.78,
    Semantics.Roof: 0.45,
    Semantics.Ground: 0.6,
    Semantics.Window: 0.22,
    Semantics.Door: 0.35,
    Semantics.Other: 0.55,
}
_LIGHT = np.array([-0.45, -0.6, 0.66]) / np.linalg.norm([-0.45, -0.6, 0.66])


def render_optical(mesh, pose, k, seed=0, noise=1.5, sky=205.0, bvh=None):
    """Shaded grayscale rendering used as the stand-in optical image."""
    b = cast_scene(mesh, pose, k, bvh=bvh)
    hit = b.hit_mask
    img = np.full(b.shape, sky)
    if hit.any():
        tri = b.primitive_id[hit].astype(np.int64)
        alb = np.array([_ALBEDO[Semantics(s)] for s in range(len(Semantics))])[mesh.tri_semantics[tri]]
        lam = np.abs(mesh.tri_normals[tri] @ _LIGHT)
        img[hit] = 255.0 * alb * (0.35 + 0.65 * lam)
    if noise:
        img = img + np.random.default_rng(seed).normal(0.0, noise, img.shape)
    mask = np.where(hit, 255, 0).astype(np.uint8)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), mask


# ---------------------------------------------------------------- datasets


def _write_dataset(out_dir, models, scenes, true_track, gnss_track, truth_mesh, k, frames, offsets,
                   area, methods, seed):
    from PIL import Image

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)
    for name, model in models.items():
        (out / name).write_text(format_model(model))
    save_track(out / "gnss.txt", gnss_track)
    save_track(out / "truth.txt", true_track)
    bvh = BVH(truth_mesh.triangle_vertices())
    for i in frames:
        pose = true_pose(true_track, i, offsets)
        img, mask = render_optical(truth_mesh, pose, k, seed=seed + i, bvh=bvh)
        fid = true_track.frames[i]
        Image.fromarray(img).save(out / "images" / f"{fid}.png")
        Image.fromarray(mask).save(out / "masks" / f"{fid}.png")
    cfg = {
        "area": area,
        "scenes": scenes,
        "track": "gnss.txt",
        "antenna_height": gnss_track.antenna_to_camera_height,
        "images": "images",
        "masks": "masks",
        "intrinsics": k.to_dict(),
        "methods": [Method.parse(m).value for m in methods],
        "offsets": dict(offsets),
        "frames": [true_track.frames[i] for i in frames],
        "out_dir": "run",
    }
    (out / "config.json").write_text(json.dumps(cfg, indent=2) + "\n")
    return out / "config.json"


def write_street_dataset(out_dir, n_frames=24, intrinsics=STREET_INTRINSICS, methods=tuple(Method),
                         offsets=None, gnss_sigma=0.3, seed=0):
    """Street fixture on disk: models, GNSS track, optical images, masks and a run config.

    The LoD3 scene is hybrid: LoD3 buildings on the left side, the LoD2
    twins of the remaining buildings on the right.
    """
    lod2, lod3, truth = street_models()
    true_tr, gnss = street_track(n_frames=n_frames, gnss_sigma=gnss_sigma, seed=seed)
    offsets = STREET_OFFSETS if offsets is None else offsets
    lod3_ids = [b.id for b in lod3.buildings]
    scenes = {
        "LoD2": ["street_lod2.model"],
        "LoD3": ["street_lod3.model", {"path": "street_lod2.model", "exclude": lod3_ids}],
    }
    return _write_dataset(
        out_dir, {"street_lod2.model": lod2, "street_lod3.model": lod3}, scenes, true_tr, gnss,
        triangulate(truth), intrinsics, range(n_frames), offsets, "synthetic street", methods, seed,
    )


def write_underpass_dataset(out_dir, intrinsics=STREET_INTRINSICS, methods=tuple(Method), frames=None,
                            gnss_sigma=0.1, seed=0):
    """Underpass fixture on disk; by default only the frame facing the passage is run."""
    lod2, lod3 = underpass_models()
    true_tr, gnss = underpass_track(gnss_sigma=gnss_sigma, seed=seed)
    frames = [UNDERPASS_FRAME] if frames is None else list(frames)
    scenes = {"LoD2": ["underpass_lod2.model"], "LoD3": ["underpass_lod3.model"]}
    return _write_dataset(
        out_dir, {"underpass_lod2.model": lod2, "underpass_lod3.model": lod3}, scenes, true_tr, gnss,
        triangulate(lod3), intrinsics, frames, {}, "synthetic underpass", methods, seed,
    )
