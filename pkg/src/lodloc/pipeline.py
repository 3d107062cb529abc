"""Trajectory runs: render, match, lift and resect every frame, then aggregate.

A run covers one area and two scenes (an LoD2-only scene and a hybrid
scene with LoD3 buildings swapped in). For every frame and matching method
the per-frame outcome is either a resected pose or a tagged failure; the
area statistics are medians over the frames, and the gain compares the
two scenes per method.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    BehindCameraError,
    ConfigError,
    DivisionByZeroError,
    IllConditionedError,
    NonConvergenceError,
    ParseError,
)
from .features import METHOD_LABELS, MatchParams, Method, match_pipeline
from .lift3d import WEIGHT_POLICIES, build_correspondences
from .raycaster import BVH, cast_scene, render_normal_image
from .resection import MIN_POINTS, ResectionConfig, ResectionProblem, resect_frame
from .semantic_mesh import LoD, compose_scene, load_model
from .virtual_camera import CameraIntrinsics, build_lookat_pose, load_track

log = logging.getLogger(__name__)

SCENES = ("LoD2", "LoD3")

# failure tags
OK = "ok"
NO_HITS = "no-hits"
TOO_FEW = "too-few-correspondences"
NON_CONVERGENCE = "non-convergence"
ILL_CONDITIONED = "ill-conditioned"
FAILURE_TAGS = (NO_HITS, TOO_FEW, NON_CONVERGENCE, ILL_CONDITIONED)


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class ModelRef:
    path: Path
    lod: LoD = None  # override the file's header
    exclude: tuple = ()  # building ids dropped from this model in the scene


@dataclass(frozen=True)
class RunConfig:
    area: str
    scenes: dict  # "LoD2"/"LoD3" -> tuple of ModelRef
    track: Path
    images: Path  # directory of <frame>.png optical images
    intrinsics: CameraIntrinsics
    methods: tuple = tuple(Method)
    masks: Path = None  # directory of <frame>.png building masks
    antenna_height: float = 0.0
    offsets: dict = field(default_factory=dict)
    r_gnss: float = None
    frames: tuple = None  # frame ids; default: every frame with a successor
    out_dir: Path = Path("run")
    match: MatchParams = field(default_factory=MatchParams)
    resection: ResectionConfig = field(default_factory=ResectionConfig)
    weights: str = "identity"
    workers: int = 1

    def validate(self) -> None:
        if not self.methods:
            raise ConfigError("at least one method must be selected")
        if set(self.scenes) - set(SCENES) or not self.scenes:
            raise ConfigError(f"scenes must be a subset of {SCENES}")
        paths = [self.track, self.images] + [m.path for refs in self.scenes.values() for m in refs]
        if self.masks is not None:
            paths.append(self.masks)
        for p in paths:
            if not Path(p).exists():
                raise ConfigError(f"referenced path does not exist: {p}")
        if any(m.needs_mask for m in self.methods) and self.masks is None:
            raise ConfigError("mask methods selected but no mask directory given")
        if self.weights not in WEIGHT_POLICIES:
            raise ConfigError(f"weights must be one of {WEIGHT_POLICIES}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


_CONFIG_KEYS = {
    "area", "scenes", "track", "images", "masks", "intrinsics", "methods", "antenna_height",
    "offsets", "r_gnss", "frames", "out_dir", "match", "resection", "weights", "workers",
}


def config_from_dict(d: dict, base: Path = Path(".")) -> RunConfig:
    """Build a :class:`RunConfig`; relative paths resolve against ``base``."""
    unknown = set(d) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for key in ("scenes", "track", "images", "intrinsics"):
        if key not in d:
            raise ConfigError(f"missing config key {key!r}")

    def path(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    try:
        scenes = {}
        for name, refs in d["scenes"].items():
            out = []
            for r in refs:
                r = {"path": r} if isinstance(r, str) else dict(r)
                lod = r.get("lod")
                out.append(ModelRef(path(r["path"]), LoD[lod] if lod else None, tuple(r.get("exclude", ()))))
            scenes[name] = tuple(out)
        methods = tuple(Method.parse(m) for m in d.get("methods", [m.value for m in Method]))
        cfg = RunConfig(
            area=str(d.get("area", "area")),
            scenes=scenes,
            track=path(d["track"]),
            images=path(d["images"]),
            masks=path(d["masks"]) if d.get("masks") else None,
            intrinsics=CameraIntrinsics.from_dict(d["intrinsics"]),
            methods=methods,
            antenna_height=float(d.get("antenna_height", 0.0)),
            offsets={k: float(v) for k, v in d.get("offsets", {}).items()},
            r_gnss=None if d.get("r_gnss") is None else float(d["r_gnss"]),
            frames=None if d.get("frames") is None else tuple(str(f) for f in d["frames"]),
            out_dir=path(d.get("out_dir", "run")),
            match=MatchParams(**d.get("match", {})),
            resection=ResectionConfig(**d.get("resection", {})),
            weights=d.get("weights", "identity"),
            workers=int(d.get("workers", 1)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from None
    if set(cfg.offsets) - {"roll", "pitch", "yaw"}:
        raise ConfigError("offsets accepts roll, pitch and yaw only")
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(d, path.parent)


def build_scene(refs):
    models = []
    for ref in refs:
        m = load_model(ref.path, ref.lod)
        models.append(m.without(ref.exclude) if ref.exclude else m)
    return compose_scene(models)


# ------------------------------------------------------------------ frames


@dataclass(frozen=True, eq=False)
class FrameResult:
    scene: str
    method: Method
    frame: str
    n_matches: int
    n_correspondences: int
    status: str
    solution: object = None  # ResectionSolution when status == "ok"

    @property
    def ok(self) -> bool:
        return self.status == OK


def _read_raster(path):
    try:
        with Image.open(path) as im:
            return np.asarray(im)
    except FileNotFoundError:
        raise ConfigError(f"missing image {path}") from None


def _process_frame(cfg, scene, mesh, bvh, track, idx):
    frame = track.frames[idx]
    pose = build_lookat_pose(track, idx, cfg.offsets, cfg.r_gnss)
    buffers = cast_scene(mesh, pose, cfg.intrinsics, bvh=bvh)
    if not buffers.hit_mask.any():
        return [FrameResult(scene, m, frame, 0, 0, NO_HITS) for m in cfg.methods]
    virtual = render_normal_image(buffers, mesh)
    real = _read_raster(Path(cfg.images) / f"{frame}.png")
    mask = _read_raster(Path(cfg.masks) / f"{frame}.png") if cfg.masks is not None else None
    approx = track.camera_position(idx)
    out = []
    for method in cfg.methods:
        matches = match_pipeline(real, virtual, mask, method, cfg.match)
        corr = build_correspondences(matches, buffers, mesh, cfg.weights).correspondences
        status, sol = OK, None
        if len(corr) < MIN_POINTS:
            status = TOO_FEW
        else:
            try:
                sol = resect_frame(ResectionProblem(corr, cfg.intrinsics, approx), cfg.resection)
            except (NonConvergenceError, BehindCameraError):
                status = NON_CONVERGENCE
            except IllConditionedError:
                status = ILL_CONDITIONED
        out.append(FrameResult(scene, method, frame, len(matches), len(corr), status, sol))
    return out


def frame_indices(cfg: RunConfig, track) -> list:
    if cfg.frames is None:
        return list(range(len(track.frames) - 1))
    lookup = {f: i for i, f in enumerate(track.frames)}
    missing = [f for f in cfg.frames if f not in lookup]
    if missing:
        raise ConfigError(f"frames not in track: {', '.join(missing)}")
    return [lookup[f] for f in cfg.frames]


def run_frames(cfg: RunConfig, workers: int = None) -> list:
    """Per-frame results ordered by scene, frame index, then method."""
    track = load_track(cfg.track, cfg.antenna_height)
    idx = frame_indices(cfg, track)
    workers = cfg.workers if workers is None else workers
    results = []
    for scene in SCENES:
        if scene not in cfg.scenes:
            continue
        mesh = build_scene(cfg.scenes[scene])
        bvh = BVH(mesh.triangle_vertices())
        job = lambda i: _process_frame(cfg, scene, mesh, bvh, track, i)  # noqa: E731
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                per_frame = list(pool.map(job, idx))
        else:
            per_frame = [job(i) for i in idx]
        for rows in per_frame:
            results.extend(rows)
    return results


# ------------------------------------------------------------ statistics


def median(values) -> float:
    """Median with the midpoint of the two central values for even counts; NaN if empty."""
    v = sorted(float(x) for x in values)
    n = len(v)
    if n == 0:
        return float("nan")
    if n % 2:
        return v[n // 2]
    return (v[n // 2 - 1] + v[n // 2]) / 2.0


def _round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def compute_gain(lod2_value: float, lod3_value: float, lower_is_better: bool = False) -> int:
    """Percent gain of LoD3 over LoD2, rounded to an integer.

    For counts (higher is better) the difference is taken relative to the
    LoD3 value, ``100 (L3 - L2) / L3``. For standard deviations
    (``lower_is_better``) it is relative to LoD2, ``100 (L2 - L3) / L2``,
    i.e. the count formula applied to the precisions ``1 / sigma``.
    """
    lod2_value, lod3_value = float(lod2_value), float(lod3_value)
    if lower_is_better:
        if lod2_value == 0:
            raise DivisionByZeroError("LoD2 standard deviation is zero")
        return _round_half_away(100.0 * (lod2_value - lod3_value) / lod2_value)
    if lod3_value == 0:
        raise DivisionByZeroError("LoD3 value is zero")
    return _round_half_away(100.0 * (lod3_value - lod2_value) / lod3_value)


@dataclass(frozen=True)
class SceneStats:
    n_frames: int
    median_features: float  # matches, over frames whose render had hits
    median_sigma: tuple  # (sigma_X, sigma_Y, sigma_Z), over solved frames
    n_solved: int
    failures: dict  # tag -> count


@dataclass(frozen=True)
class MethodStats:
    method: Method
    lod2: SceneStats = None
    lod3: SceneStats = None

    def gain(self, metric: str):
        """Gain for ``features`` or ``sigma_X``/``sigma_Y``/``sigma_Z``; None when undefined."""
        if self.lod2 is None or self.lod3 is None:
            return None
        if metric == "features":
            a, b, lower = self.lod2.median_features, self.lod3.median_features, False
        else:
            i = "XYZ".index(metric[-1])
            a, b, lower = self.lod2.median_sigma[i], self.lod3.median_sigma[i], True
        if not (np.isfinite(a) and np.isfinite(b)):
            return None
        try:
            return compute_gain(a, b, lower)
        except DivisionByZeroError:
            return None


@dataclass(frozen=True)
class AreaStats:
    area: str
    methods: tuple  # MethodStats in report order
    frames: tuple = ()  # FrameResult detail rows

    def by_method(self, method) -> MethodStats:
        method = Method.parse(method)
        for m in self.methods:
            if m.method == method:
                return m
        raise KeyError(method)


def scene_stats(rows) -> SceneStats:
    rows = list(rows)
    fails = {t: sum(r.status == t for r in rows) for t in FAILURE_TAGS}
    matched = [r.n_matches for r in rows if r.status != NO_HITS]
    solved = [r.solution for r in rows if r.ok]
    sig = tuple(median(s.sigma[i] for s in solved) for i in range(3))
    return SceneStats(len(rows), median(matched), sig, len(solved), fails)


def aggregate(area: str, results, methods=None) -> AreaStats:
    results = list(results)
    present = {r.method for r in results} if methods is None else {Method.parse(m) for m in methods}
    methods = [m for m in Method if m in present]  # report rows always in table order
    out = []
    for m in methods:
        per = {}
        for scene in SCENES:
            rows = [r for r in results if r.method == m and r.scene == scene]
            if rows:
                per[scene.lower()] = scene_stats(rows)
        out.append(MethodStats(m, **per))
    return AreaStats(area, tuple(out), tuple(results))


def run_trajectory(cfg: RunConfig, workers: int = None) -> AreaStats:
    """Full run; frame-level detail is kept in ``AreaStats.frames``."""
    return aggregate(cfg.area, run_frames(cfg, workers), cfg.methods)


# ------------------------------------------------------------------ report


REPORT_FIELDS = (
    "method", "label",
    "features_lod2", "features_lod3", "features_gain",
    "sigma_X_lod2", "sigma_X_lod3", "sigma_X_gain",
    "sigma_Y_lod2", "sigma_Y_lod3", "sigma_Y_gain",
    "sigma_Z_lod2", "sigma_Z_lod3", "sigma_Z_gain",
    "solved_lod2", "solved_lod3", "failed_lod2", "failed_lod3",
)

FRAME_FIELDS = (
    "scene", "method", "frame", "n_matches", "n_correspondences", "status",
    "X0", "Y0", "Z0", "omega", "phi", "kappa",
    "sigma_X", "sigma_Y", "sigma_Z", "sigma_omega", "sigma_phi", "sigma_kappa", "s0", "iterations",
)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def _parse(s: str, kind=float):
    return None if s == "" else kind(s)


def report_rows(stats: AreaStats) -> list:
    rows = []
    for ms in stats.methods:
        l2, l3 = ms.lod2, ms.lod3
        row = [ms.method.value, METHOD_LABELS[ms.method]]
        row += [_fmt(l2 and l2.median_features), _fmt(l3 and l3.median_features), _fmt(ms.gain("features"))]
        for i, ax in enumerate("XYZ"):
            row += [_fmt(l2 and l2.median_sigma[i]), _fmt(l3 and l3.median_sigma[i]), _fmt(ms.gain(f"sigma_{ax}"))]
        row += [_fmt(l2 and l2.n_solved), _fmt(l3 and l3.n_solved)]
        row += [_fmt(l2 and (l2.n_frames - l2.n_solved)), _fmt(l3 and (l3.n_frames - l3.n_solved))]
        rows.append(row)
    return rows


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def frame_rows(results) -> list:
    rows = []
    for r in results:
        row = [r.scene, r.method.value, r.frame, str(r.n_matches), str(r.n_correspondences), r.status]
        if r.solution is not None:
            s = r.solution
            row += [_fmt(v) for v in (*s.pose.position, *s.pose.angles, *s.sigma, s.s0)]
            row.append(str(s.iterations))
        else:
            row += [""] * 14
        rows.append(row)
    return rows


def summary_text(stats: AreaStats) -> str:
    lines = [f"area: {stats.area}"]
    for ms in stats.methods:
        parts = [f"{METHOD_LABELS[ms.method]}:"]
        for name, s in (("LoD2", ms.lod2), ("LoD3", ms.lod3)):
            if s is None:
                continue
            fails = ", ".join(f"{t}={n}" for t, n in s.failures.items() if n)
            parts.append(
                f"{name} features {s.median_features:g}, solved {s.n_solved}/{s.n_frames}"
                + (f" ({fails})" if fails else "")
            )
        g = ms.gain("features")
        if g is not None:
            parts.append(f"gain {g}%")
        lines.append(" ".join(parts[:1]) + " " + "; ".join(parts[1:]))
    return "\n".join(lines) + "\n"


def emit_report(stats: AreaStats, out_dir, summary: bool = True) -> dict:
    """Write ``report.csv`` and ``frames.csv`` (plus ``summary.txt``) into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "report": out / "report.csv",
        "frames": out / "frames.csv",
    }
    paths["report"].write_text(_csv_text(REPORT_FIELDS, report_rows(stats)))
    paths["frames"].write_text(_csv_text(FRAME_FIELDS, frame_rows(stats.frames)))
    if summary:
        paths["summary"] = out / "summary.txt"
        paths["summary"].write_text(summary_text(stats))
    return paths


def read_report(path) -> list:
    """Parse ``report.csv`` into dicts of typed values (None for empty cells)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != REPORT_FIELDS:
            raise ParseError(f"{path}: unexpected report header")
        out = []
        for row in reader:
            d = {"method": Method.parse(row["method"]), "label": row["label"]}
            for k in REPORT_FIELDS[2:]:
                kind = int if k.endswith("_gain") or k.startswith(("solved", "failed")) else float
                d[k] = _parse(row[k], kind)
            out.append(d)
    return out


def read_frames(path) -> list:
    """Per-frame rows back as :class:`FrameResult` (solutions as lightweight records)."""
    from .resection import ResectionSolution
    from .virtual_camera import CameraPose

    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != FRAME_FIELDS:
            raise ParseError(f"{path}: unexpected frames header")
        for row in reader:
            sol = None
            if row["status"] == OK:
                p = [float(row[k]) for k in ("X0", "Y0", "Z0", "omega", "phi", "kappa")]
                sig = np.array([float(row[k]) for k in FRAME_FIELDS[12:18]])
                sol = ResectionSolution(
                    CameraPose(p[:3], p[3:]), sig, np.zeros(0), int(row["iterations"]), True, float(row["s0"])
                )
            out.append(FrameResult(
                row["scene"], Method.parse(row["method"]), row["frame"],
                int(row["n_matches"]), int(row["n_correspondences"]), row["status"], sol,
            ))
    return out
