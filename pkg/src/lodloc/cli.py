"""Command line entry point: ``lodloc <render|match|lift|resect|run|report> ...``.

Errors are reported on stderr as ``error: <category>: <message>`` with a
nonzero exit status.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, LodLocError, ParseError
from .features import MatchParams, Method, match_pipeline
from .lift3d import WEIGHT_POLICIES, build_correspondences, matches_from_csv, read_correspondences, write_correspondences
from .pipeline import aggregate, emit_report, load_config, read_frames, run_trajectory
from .raycaster import cast_scene, load_buffers, save_buffers
from .resection import ResectionConfig, ResectionProblem, resect_frame, write_solution
from .semantic_mesh import compose_scene, load_model
from .virtual_camera import CameraIntrinsics, build_lookat_pose, load_track

EXIT_ERROR = 1


def _read_image(path):
    with Image.open(path) as im:
        return np.asarray(im)


def read_intrinsics(path) -> CameraIntrinsics:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    try:
        return CameraIntrinsics.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: invalid intrinsics: {exc}") from None


def _frame_index(track, frame: str) -> int:
    if frame in track.frames:
        return track.frames.index(frame)
    try:
        i = int(frame)
    except ValueError:
        raise ConfigError(f"frame {frame!r} not in track") from None
    if not 0 <= i < len(track.frames):
        raise ConfigError(f"frame index {i} outside track of {len(track.frames)} frames")
    return i


def cmd_render(a):
    mesh = compose_scene([load_model(p) for p in a.model])
    track = load_track(a.track, a.antenna_height)
    k = read_intrinsics(a.intrinsics)
    offsets = {"roll": a.roll, "pitch": a.pitch, "yaw": a.yaw}
    pose = build_lookat_pose(track, _frame_index(track, a.frame), offsets, a.r_gnss)
    buffers = cast_scene(mesh, pose, k, workers=a.workers)
    save_buffers(a.out, buffers, mesh, pose, k)
    print(f"{a.out}: {int(buffers.hit_mask.sum())} of {buffers.hit_mask.size} pixels hit")


def cmd_match(a):
    params = MatchParams(max_features=a.max_features, ratio=a.ratio, mask_virtual=a.mask_virtual)
    mask = _read_image(a.mask) if a.mask else None
    ms = match_pipeline(_read_image(a.real), _read_image(a.virtual), mask, a.method, params)
    with open(a.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("xA", "yA", "xB", "yB", "hamming"))
        for (xa, ya, xb, yb), d in zip(ms.coordinates(), ms.distance):
            w.writerow((repr(float(xa)), repr(float(ya)), repr(float(xb)), repr(float(yb)), int(d)))
    print(f"{a.out}: {len(ms)} matches")


def cmd_lift(a):
    buffers, mesh, _ = load_buffers(a.buffers)
    if mesh is None:
        raise ConfigError(f"{a.buffers}: no mesh.npz alongside the buffers")
    res = build_correspondences(matches_from_csv(a.matches), buffers, mesh, a.weights)
    write_correspondences(a.out, res.correspondences)
    print(f"{a.out}: {len(res)} correspondences ({res.dropped} dropped on misses)")


def cmd_resect(a):
    try:
        gnss = [float(v) for v in a.gnss.replace(",", " ").split()]
    except ValueError:
        gnss = []
    if len(gnss) != 3:
        raise ConfigError("--gnss expects three numbers \"X Y Z\"")
    problem = ResectionProblem(read_correspondences(a.correspondences), read_intrinsics(a.intrinsics), gnss)
    sol = resect_frame(problem, ResectionConfig(tol=a.tol, max_iter=a.max_iter))
    write_solution(a.out, sol)
    print(f"{a.out}: s0 = {sol.s0:.4g} px after {sol.iterations} iterations")


def cmd_run(a):
    cfg = load_config(a.config)
    stats = run_trajectory(cfg, a.workers)
    out = Path(a.out) if a.out else cfg.out_dir
    paths = emit_report(stats, out)
    print(paths["summary"].read_text(), end="")


def cmd_report(a):
    rows = read_frames(a.frames)
    stats = aggregate(a.area, rows)
    paths = emit_report(stats, a.out)
    print(paths["summary"].read_text(), end="")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lodloc", description="Map-based camera localisation against LoD2/LoD3 building models.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("render", help="ray-cast the model from a GNSS look-at pose")
    r.add_argument("--model", action="append", required=True, help="model file (repeatable)")
    r.add_argument("--track", required=True)
    r.add_argument("--frame", required=True, help="frame id or index")
    r.add_argument("--intrinsics", required=True, help="JSON intrinsics file")
    r.add_argument("--antenna-height", type=float, default=0.0)
    r.add_argument("--roll", type=float, default=0.0, help="degrees")
    r.add_argument("--pitch", type=float, default=0.0, help="degrees")
    r.add_argument("--yaw", type=float, default=0.0, help="degrees, positive to the left")
    r.add_argument("--r-gnss", type=float, default=None)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)

    m = sub.add_parser("match", help="match a real image against a virtual image")
    m.add_argument("--real", required=True)
    m.add_argument("--virtual", required=True)
    m.add_argument("--method", default="feature-images", choices=[x.value for x in Method])
    m.add_argument("--mask")
    m.add_argument("--mask-virtual", action="store_true")
    m.add_argument("--max-features", type=int, default=500)
    m.add_argument("--ratio", type=float, default=0.75)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_match)

    li = sub.add_parser("lift", help="lift matched virtual pixels to world points")
    li.add_argument("--matches", required=True)
    li.add_argument("--buffers", required=True, help="directory written by render")
    li.add_argument("--weights", default="identity", choices=WEIGHT_POLICIES)
    li.add_argument("--out", required=True)
    li.set_defaults(func=cmd_lift)

    rs = sub.add_parser("resect", help="estimate the camera pose from 2D-3D correspondences")
    rs.add_argument("--correspondences", required=True)
    rs.add_argument("--intrinsics", required=True)
    rs.add_argument("--gnss", required=True, help='approximate camera position "X Y Z"')
    rs.add_argument("--tol", type=float, default=1e-6)
    rs.add_argument("--max-iter", type=int, default=50)
    rs.add_argument("--out", required=True)
    rs.set_defaults(func=cmd_resect)

    ru = sub.add_parser("run", help="full trajectory run from a JSON config")
    ru.add_argument("--config", required=True)
    ru.add_argument("--workers", type=int, default=None)
    ru.add_argument("--out", default=None, help="override the config's out_dir")
    ru.set_defaults(func=cmd_run)

    rp = sub.add_parser("report", help="recompute the area report from frames.csv")
    rp.add_argument("--frames", required=True)
    rp.add_argument("--area", default="area")
    rp.add_argument("--out", required=True)
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except LodLocError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
