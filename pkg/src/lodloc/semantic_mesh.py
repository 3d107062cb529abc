"""Semantic building models and their triangulated, ray-castable form.

Model file grammar (one model per file, ``#`` starts a comment)::

    lod LoD3
    crs local metric frame, metres
    building <id> [closed]
    surface <Wall|Roof|Ground|Window|Door|Other>
    outer x y z  x y z  x y z ...
    inner x y z  x y z  x y z ...      # zero or more holes

``outer``/``inner`` belong to the most recent ``surface``, which belongs to
the most recent ``building``. See ``docs/model_format.md``.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DuplicateBuildingError,
    ParseError,
    TriangulationError,
    ValidationError,
)

log = logging.getLogger(__name__)

PLANE_EPS = 1e-3  # metres, max point-to-plane distance of a ring
_AREA_EPS = 1e-12


class LoD(enum.IntEnum):
    LoD1 = 1
    LoD2 = 2
    LoD3 = 3


class Semantics(enum.IntEnum):
    Wall = 0
    Roof = 1
    Ground = 2
    Window = 3
    Door = 4
    Other = 5


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Surface:
    semantics: Semantics
    outer_ring: np.ndarray
    inner_rings: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "outer_ring", _frozen(self.outer_ring).reshape(-1, 3))
        object.__setattr__(
            self, "inner_rings", tuple(_frozen(r).reshape(-1, 3) for r in self.inner_rings)
        )


@dataclass(frozen=True, eq=False)
class Building:
    id: str
    surfaces: tuple
    closed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "surfaces", tuple(self.surfaces))


@dataclass(frozen=True, eq=False)
class SemanticModel:
    buildings: tuple
    lod: LoD
    crs_note: str = ""

    def __post_init__(self):
        object.__setattr__(self, "buildings", tuple(self.buildings))
        object.__setattr__(self, "lod", LoD(self.lod))

    def without(self, building_ids) -> "SemanticModel":
        drop = set(building_ids)
        return SemanticModel(
            [b for b in self.buildings if b.id not in drop], self.lod, self.crs_note
        )


@dataclass(frozen=True, eq=False)
class SemanticMesh:
    """Triangle soup with per-triangle attribution.

    ``tri_building`` indexes ``building_ids`` (the geometry ID of the ray
    caster); ``tri_surface`` counts surfaces in scene order.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    tri_building: np.ndarray
    tri_semantics: np.ndarray
    tri_normals: np.ndarray
    tri_lod: np.ndarray
    tri_surface: np.ndarray
    building_ids: tuple = ()
    building_lod: tuple = ()
    building_closed: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "vertices", _frozen(self.vertices).reshape(-1, 3))
        object.__setattr__(self, "triangles", _frozen(self.triangles, np.int64).reshape(-1, 3))
        object.__setattr__(self, "tri_normals", _frozen(self.tri_normals).reshape(-1, 3))
        for name in ("tri_building", "tri_semantics", "tri_lod", "tri_surface"):
            object.__setattr__(self, name, _frozen(getattr(self, name), np.int64).reshape(-1))
        for name in ("building_ids", "building_lod", "building_closed"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def triangle_vertices(self) -> np.ndarray:
        """(T, 3, 3) corner coordinates in stored order."""
        return self.vertices[self.triangles]

    def triangle_areas(self) -> np.ndarray:
        p = self.triangle_vertices()
        return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)

    @classmethod
    def empty(cls) -> "SemanticMesh":
        z = np.zeros(0, dtype=np.int64)
        return cls(np.zeros((0, 3)), np.zeros((0, 3), np.int64), z, z, np.zeros((0, 3)), z, z)


# ---------------------------------------------------------------- loading


def parse_model(text: str, lod=None, source: str = "<string>") -> SemanticModel:
    file_lod = None
    crs = ""
    buildings = []  # list of [id, closed, surfaces]
    surface = None  # [semantics, outer, inners, lineno]

    def close_surface():
        nonlocal surface
        if surface is not None:
            if surface[1] is None:
                raise ParseError(f"{source}:{surface[3]}: surface without outer ring")
            buildings[-1][2].append(surface)
            surface = None

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, rest = line.partition(" ")
        rest = rest.strip()
        if key == "lod":
            try:
                file_lod = LoD[rest]
            except KeyError:
                raise ParseError(f"{source}:{lineno}: unknown LoD {rest!r}") from None
        elif key == "crs":
            crs = rest
        elif key == "building":
            close_surface()
            parts = rest.split()
            if not parts or len(parts) > 2 or (len(parts) == 2 and parts[1] != "closed"):
                raise ParseError(f"{source}:{lineno}: expected 'building <id> [closed]'")
            buildings.append([parts[0], len(parts) == 2, []])
        elif key == "surface":
            if not buildings:
                raise ParseError(f"{source}:{lineno}: surface before any building")
            close_surface()
            try:
                sem = Semantics[rest]
            except KeyError:
                raise ParseError(f"{source}:{lineno}: unknown semantics {rest!r}") from None
            surface = [sem, None, [], lineno]
        elif key in ("outer", "inner"):
            if surface is None:
                raise ParseError(f"{source}:{lineno}: ring outside a surface")
            try:
                vals = [float(t) for t in rest.split()]
            except ValueError:
                raise ParseError(f"{source}:{lineno}: non-numeric coordinate") from None
            if len(vals) % 3:
                raise ParseError(f"{source}:{lineno}: coordinate count not a multiple of 3")
            ring = np.array(vals).reshape(-1, 3)
            if key == "outer":
                if surface[1] is not None:
                    raise ParseError(f"{source}:{lineno}: second outer ring")
                surface[1] = ring
            else:
                surface[2].append(ring)
        else:
            raise ParseError(f"{source}:{lineno}: unknown keyword {key!r}")
    close_surface()

    if file_lod is None and lod is None:
        raise ParseError(f"{source}: missing 'lod' header")
    if lod is not None and file_lod is not None and LoD(lod) != file_lod:
        raise ParseError(f"{source}: header says {file_lod.name}, caller asked {LoD(lod).name}")
    model = SemanticModel(
        [
            Building(bid, [Surface(s[0], s[1], s[2]) for s in surfs], closed)
            for bid, closed, surfs in buildings
        ],
        file_lod if file_lod is not None else LoD(lod),
        crs,
    )
    validate_model(model)
    return model


def load_model(path, lod=None) -> SemanticModel:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    return parse_model(text, lod, source=str(path))


def format_model(model: SemanticModel) -> str:
    out = [f"lod {model.lod.name}"]
    if model.crs_note:
        out.append(f"crs {model.crs_note}")
    for b in model.buildings:
        out.append(f"building {b.id}" + (" closed" if b.closed else ""))
        for s in b.surfaces:
            out.append(f"surface {s.semantics.name}")
            out.append("outer " + "  ".join(" ".join(repr(float(c)) for c in p) for p in s.outer_ring))
            for r in s.inner_rings:
                out.append("inner " + "  ".join(" ".join(repr(float(c)) for c in p) for p in r))
    return "\n".join(out) + "\n"


def newell_normal(ring) -> np.ndarray:
    """Area-weighted (unnormalised) normal of a closed ring; length = 2 * area."""
    p = np.asarray(ring, dtype=float)
    q = np.roll(p, -1, axis=0)
    return np.cross(p, q).sum(axis=0)


def ring_area(ring) -> float:
    return 0.5 * float(np.linalg.norm(newell_normal(ring)))


def validate_model(model: SemanticModel) -> None:
    seen = set()
    for b in model.buildings:
        if b.id in seen:
            raise ValidationError(f"duplicate building id {b.id!r}")
        seen.add(b.id)
        if len(b.surfaces) < 4:
            raise ValidationError(f"building {b.id!r} has {len(b.surfaces)} surfaces, need >= 4")
        for k, s in enumerate(b.surfaces):
            where = f"building {b.id!r} surface {k} ({s.semantics.name})"
            for r in (s.outer_ring, *s.inner_rings):
                if len(r) < 3:
                    raise ValidationError(f"{where}: ring with {len(r)} points")
                if not np.all(np.isfinite(r)):
                    raise ValidationError(f"{where}: non-finite coordinate")
            n = newell_normal(s.outer_ring)
            scale = max(np.ptp(s.outer_ring, axis=0).max(), 1.0)
            if np.linalg.norm(n) <= 1e-12 * scale * scale:
                raise ValidationError(f"{where}: outer ring is collinear")
            n = n / np.linalg.norm(n)
            c = s.outer_ring.mean(axis=0)
            for r in (s.outer_ring, *s.inner_rings):
                d = np.abs((r - c) @ n).max()
                if d > PLANE_EPS:
                    raise ValidationError(f"{where}: ring off-plane by {d:.3g} m > {PLANE_EPS} m")


# ---------------------------------------------------------- triangulation


def _plane_basis(n):
    a = np.array([1.0, 0, 0]) if abs(n[0]) < 0.9 else np.array([0, 1.0, 0])
    u = np.cross(n, a)
    u /= np.linalg.norm(u)
    return u, np.cross(n, u)


def _cross2(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _signed_area2(pts):
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _segments_cross(p1, p2, q1, q2, eps):
    """Proper intersection or collinear overlap of two segments."""
    d1 = _cross2(q1, q2, p1)
    d2 = _cross2(q1, q2, p2)
    d3 = _cross2(p1, p2, q1)
    d4 = _cross2(p1, p2, q2)
    if ((d1 > eps and d2 < -eps) or (d1 < -eps and d2 > eps)) and (
        (d3 > eps and d4 < -eps) or (d3 < -eps and d4 > eps)
    ):
        return True
    return False


def _point_in_poly(pt, poly):
    x, y = pt
    inside = False
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if xi > x:
                inside = not inside
    return inside


def _ring_edges(rings):
    for ri, r in enumerate(rings):
        for i in range(len(r)):
            yield ri, i, r[i], r[(i + 1) % len(r)]


def _check_simple(rings2d, eps, where):
    edges = list(_ring_edges(rings2d))
    for a in range(len(edges)):
        ra, ia, p1, p2 = edges[a]
        for b in range(a + 1, len(edges)):
            rb, ib, q1, q2 = edges[b]
            if ra == rb:
                n = len(rings2d[ra])
                if ib == (ia + 1) % n or ia == (ib + 1) % n:
                    continue
            if _segments_cross(p1, p2, q1, q2, eps):
                raise TriangulationError(f"{where}: ring edges intersect")


def _touches_vertex(p, q, pts, edges, eps):
    """True if any edge endpoint other than p, q lies on the open segment pq."""
    d = q - p
    L2 = float(d @ d)
    for a, _ in edges:
        w = pts[a]
        if np.array_equal(w, p) or np.array_equal(w, q):
            continue
        if abs(_cross2(p, q, w)) <= eps * max(1.0, L2):
            s = float((w - p) @ d) / L2
            if 0.0 < s < 1.0:
                return True
    return False


def _bridge_holes(pts, outer, holes, eps):
    """Splice holes into the outer index loop via bridge edges."""
    poly = list(outer)
    order = sorted(range(len(holes)), key=lambda h: -max(pts[i][0] for i in holes[h]))
    pending = [holes[h] for h in order]
    while pending:
        hole = pending.pop(0)
        m_pos = max(range(len(hole)), key=lambda k: (pts[hole[k]][0], -pts[hole[k]][1]))
        m = hole[m_pos]
        pm = pts[m]
        # every edge the bridge must not cross: current loop + unmerged holes
        blockers = []
        for loop in [poly] + pending + [hole]:
            for i in range(len(loop)):
                blockers.append((loop[i], loop[(i + 1) % len(loop)]))
        cands = sorted(
            range(len(poly)), key=lambda k: (np.hypot(*(pts[poly[k]] - pm)), k)
        )
        chosen = None
        for k in cands:
            v = poly[k]
            pv = pts[v]
            if np.allclose(pv, pm):
                continue
            ok = True
            for a, b in blockers:
                if a in (v, m) or b in (v, m):
                    continue
                if _segments_cross(pm, pv, pts[a], pts[b], eps):
                    ok = False
                    break
            if not ok:
                continue
            if _touches_vertex(pm, pv, pts, blockers, eps):
                continue
            mid = 0.5 * (pm + pv)
            outer_pts = pts[[i for i in outer]]
            if not _point_in_poly(mid, outer_pts):
                continue
            if any(_point_in_poly(mid, pts[list(h)]) for h in pending + [hole]):
                continue
            # bridge must leave v into the polygon interior (wedge test at v)
            prv = pts[poly[k - 1]]
            nxt = pts[poly[(k + 1) % len(poly)]]
            convex = _cross2(prv, pv, nxt) >= 0
            a1 = _cross2(prv, pv, pm) > 0
            a2 = _cross2(pv, nxt, pm) > 0
            if (convex and not (a1 and a2)) or (not convex and not (a1 or a2)):
                continue
            chosen = k
            break
        if chosen is None:
            raise TriangulationError("no visible bridge vertex for hole")
        rot = hole[m_pos:] + hole[:m_pos]
        poly = poly[: chosen + 1] + rot + [m, poly[chosen]] + poly[chosen + 1 :]
    return poly


def _ear_clip(pts, poly, eps):
    idx = list(poly)
    tris = []
    guard = 0
    strict = False
    while len(idx) > 3:
        guard += 1
        if guard > 10 * len(poly) ** 2 + 100:
            raise TriangulationError("ear clipping did not terminate")
        n = len(idx)
        removed = False
        # drop zero-area straight vertices first
        for i in range(n):
            a, b, c = pts[idx[i - 1]], pts[idx[i]], pts[idx[(i + 1) % n]]
            if abs(_cross2(a, b, c)) <= eps and np.dot(b - a, c - b) > 0:
                del idx[i]
                removed = True
                break
        if removed:
            continue
        for i in range(n):
            ia, ib, ic = idx[i - 1], idx[i], idx[(i + 1) % n]
            a, b, c = pts[ia], pts[ib], pts[ic]
            if _cross2(a, b, c) <= eps:
                continue
            blocked = False
            for j in idx:
                p = pts[j]
                if (
                    np.array_equal(p, a) or np.array_equal(p, b) or np.array_equal(p, c)
                ):
                    continue
                s1, s2, s3 = _cross2(a, b, p), _cross2(b, c, p), _cross2(c, a, p)
                lim = eps if strict else -eps
                if s1 > lim and s2 > lim and s3 > lim:
                    blocked = True
                    break
            if blocked:
                continue
            tris.append((ia, ib, ic))
            del idx[i]
            removed = True
            strict = False
            break
        if not removed:
            if strict:
                raise TriangulationError("no ear found; ring is self-intersecting or degenerate")
            strict = True
    if len(idx) == 3:
        a, b, c = (pts[i] for i in idx)
        if _cross2(a, b, c) > eps:
            tris.append(tuple(idx))
    return tris


def triangulate_surface(surface: Surface, where: str = "surface"):
    """Return (vertices (N,3), triangles (T,3)) covering outer minus holes.

    Triangles wind like the outer ring (their normal equals the ring normal).
    """
    n = newell_normal(surface.outer_ring)
    if not np.linalg.norm(n) > 0:
        raise TriangulationError(f"{where}: ring encloses no area")
    n = n / np.linalg.norm(n)
    u, v = _plane_basis(n)
    outer3 = surface.outer_ring
    holes3 = [np.asarray(h) for h in surface.inner_rings]
    verts3 = np.vstack([outer3] + holes3) if holes3 else outer3.copy()
    pts = np.column_stack([verts3 @ u, verts3 @ v])
    scale = max(float(np.ptp(pts, axis=0).max()), 1e-9)
    eps = 1e-12 * scale * scale

    outer = list(range(len(outer3)))
    holes = []
    off = len(outer3)
    for h in holes3:
        ids = list(range(off, off + len(h)))
        off += len(h)
        if _signed_area2(pts[ids]) > 0:
            ids.reverse()
        holes.append(ids)

    _check_simple([pts[outer]] + [pts[h] for h in holes], eps, where)
    poly = _bridge_holes(pts, outer, holes, eps) if holes else outer
    tris = _ear_clip(pts, poly, eps)
    return verts3, np.array(tris, dtype=np.int64).reshape(-1, 3)


def _normals(verts, tris):
    p = verts[tris]
    c = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    return c / np.linalg.norm(c, axis=1, keepdims=True)


def triangulate(model: SemanticModel) -> SemanticMesh:
    return compose_scene([model])


def compose_scene(models) -> SemanticMesh:
    """Triangulate and merge models into one scene with global building indices."""
    verts, tris, tb, ts, tl, tsurf = [], [], [], [], [], []
    ids, lods, closed = [], [], []
    seen = {}
    voff = 0
    surf_no = 0
    for model in models:
        for b in model.buildings:
            key = (b.id, model.lod)
            if key in seen:
                raise DuplicateBuildingError(
                    f"building {b.id!r} contributed twice at {model.lod.name}"
                )
            seen[key] = len(ids)
            bidx = len(ids)
            ids.append(b.id)
            lods.append(int(model.lod))
            closed.append(b.closed)
            for k, s in enumerate(b.surfaces):
                v3, t = triangulate_surface(s, f"building {b.id!r} surface {k}")
                if len(t):
                    area = 0.5 * np.linalg.norm(
                        np.cross(v3[t[:, 1]] - v3[t[:, 0]], v3[t[:, 2]] - v3[t[:, 0]]), axis=1
                    )
                    t = t[area > _AREA_EPS]
                verts.append(v3)
                tris.append(t + voff)
                voff += len(v3)
                nt = len(t)
                tb.append(np.full(nt, bidx))
                ts.append(np.full(nt, int(s.semantics)))
                tl.append(np.full(nt, int(model.lod)))
                tsurf.append(np.full(nt, surf_no))
                surf_no += 1
    if not tris or sum(len(t) for t in tris) == 0:
        mesh = SemanticMesh.empty()
        return SemanticMesh(
            mesh.vertices if not verts else np.vstack(verts), mesh.triangles,
            mesh.tri_building, mesh.tri_semantics, mesh.tri_normals, mesh.tri_lod,
            mesh.tri_surface, ids, lods, closed,
        )
    V = np.vstack(verts)
    T = np.vstack(tris)
    return SemanticMesh(
        V, T, np.concatenate(tb), np.concatenate(ts), _normals(V, T),
        np.concatenate(tl), np.concatenate(tsurf), ids, lods, closed,
    )


# ---------------------------------------------------------------- winding


@dataclass
class WindingReport:
    inward: dict = field(default_factory=dict)  # building id -> [triangle indices]
    not_checked: list = field(default_factory=list)

    @property
    def consistent(self) -> bool:
        return not any(self.inward.values())


def validate_winding(mesh: SemanticMesh, solids=None) -> WindingReport:
    """Flag triangles of closed buildings whose normal faces the building centroid.

    ``solids`` lists building ids to treat as closed; by default the
    ``closed`` flag from the model file is used. Only meaningful for
    star-shaped solids around their area centroid.
    """
    if solids is None:
        solids = {bid for bid, c in zip(mesh.building_ids, mesh.building_closed) if c}
    solids = set(solids)
    report = WindingReport()
    p = mesh.triangle_vertices()
    cen = p.mean(axis=1)
    area = mesh.triangle_areas()
    for bidx, bid in enumerate(mesh.building_ids):
        if bid not in solids:
            report.not_checked.append(bid)
            continue
        sel = np.flatnonzero(mesh.tri_building == bidx)
        if len(sel) == 0:
            report.inward[bid] = []
            continue
        centroid = (cen[sel] * area[sel, None]).sum(axis=0) / area[sel].sum()
        d = np.einsum("ij,ij->i", cen[sel] - centroid, mesh.tri_normals[sel])
        report.inward[bid] = [int(i) for i in sel[d < 0]]
    return report
