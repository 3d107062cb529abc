import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lodloc.errors import ConfigError, DivisionByZeroError
from lodloc.features import METHOD_LABELS, Method
from lodloc.pipeline import (
    FAILURE_TAGS,
    NO_HITS,
    OK,
    REPORT_FIELDS,
    TOO_FEW,
    AreaStats,
    FrameResult,
    aggregate,
    compute_gain,
    emit_report,
    load_config,
    median,
    read_frames,
    read_report,
    run_trajectory,
)
from lodloc.resection import ResectionSolution
from lodloc.synthetic import write_street_dataset
from lodloc.virtual_camera import CameraIntrinsics, CameraPose, GnssTrack, load_track, save_track

SMALL = CameraIntrinsics(240, 180, 195.0)
FAST_METHODS = ("direct", "feature-images", "canny", "mask")


@pytest.mark.parametrize(
    "l2, l3, want",
    [(20, 65, 69), (14, 13, -8), (7, 7, 0), (0, 5, 100), (12.5, 12.5, 0)],
)
def test_gain_counts(l2, l3, want):
    assert compute_gain(l2, l3) == want


def test_gain_sigma():
    assert compute_gain(50.40, 152.39, lower_is_better=True) == -202
    assert compute_gain(0.8, 0.2, lower_is_better=True) == 75
    assert compute_gain(1.0, 1.0, lower_is_better=True) == 0


def test_gain_division_by_zero():
    with pytest.raises(DivisionByZeroError):
        compute_gain(3, 0)
    with pytest.raises(DivisionByZeroError):
        compute_gain(0, 3, lower_is_better=True)
    with pytest.raises(ZeroDivisionError):
        compute_gain(0, 0)


def test_gain_rounds_half_away_from_zero():
    assert compute_gain(1, 8) == 88  # 87.5
    assert compute_gain(9, 8) == -13  # -12.5


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=40))
def test_median_oracle(values):
    assert median(values) == pytest.approx(float(np.median(values)), rel=1e-12, abs=1e-9)


def test_median_empty_and_even():
    assert math.isnan(median([]))
    assert median([4, 1, 3, 2]) == 2.5


def _sol(sx, sy, sz):
    return ResectionSolution(CameraPose(np.zeros(3), (0, 0, 0)), np.array([sx, sy, sz, 0, 0, 0]),
                             np.zeros(0), 3, True, 0.5)


def test_aggregate_by_hand():
    rows = [
        FrameResult("LoD2", Method.Direct, "0", 4, 4, TOO_FEW),
        FrameResult("LoD2", Method.Direct, "1", 10, 9, OK, _sol(2.0, 4.0, 1.0)),
        FrameResult("LoD2", Method.Direct, "2", 0, 0, NO_HITS),
        FrameResult("LoD3", Method.Direct, "0", 20, 18, OK, _sol(1.0, 1.0, 1.0)),
        FrameResult("LoD3", Method.Direct, "1", 30, 25, OK, _sol(3.0, 1.0, 0.5)),
        FrameResult("LoD3", Method.Direct, "2", 0, 0, NO_HITS),
    ]
    ms = aggregate("t", rows).by_method("direct")
    assert ms.lod2.median_features == 7.0  # no-hits frame excluded
    assert ms.lod3.median_features == 25.0
    assert ms.lod2.median_sigma == (2.0, 4.0, 1.0)
    assert ms.lod3.median_sigma == (2.0, 1.0, 0.75)
    assert ms.gain("features") == 72
    assert ms.gain("sigma_Y") == 75
    assert ms.lod2.failures[NO_HITS] == 1 and ms.lod2.failures[TOO_FEW] == 1
    assert ms.lod2.n_solved == 1 and ms.lod3.n_solved == 2


def test_report_header_only_when_empty(tmp_path):
    paths = emit_report(AreaStats("empty", ()), tmp_path)
    assert paths["report"].read_text() == ",".join(REPORT_FIELDS) + "\n"
    assert read_report(paths["report"]) == []


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("street")
    cfg_path = write_street_dataset(root, n_frames=4, intrinsics=SMALL, methods=FAST_METHODS)
    d = json.loads(cfg_path.read_text())
    d["frames"] = d["frames"][1:4]
    cfg_path.write_text(json.dumps(d))
    cfg = load_config(cfg_path)
    return cfg_path, cfg, run_trajectory(cfg)


def test_three_frame_run(small_run):
    _, cfg, stats = small_run
    assert [m.method.value for m in stats.methods] == list(FAST_METHODS)
    assert len(stats.frames) == 2 * 3 * len(FAST_METHODS)
    for r in stats.frames:
        assert r.status == OK or r.status in FAILURE_TAGS
        assert r.n_correspondences <= r.n_matches
        assert (r.solution is not None) == r.ok
    for ms in stats.methods:
        assert ms.lod2.n_frames == ms.lod3.n_frames == 3


def test_report_round_trip(small_run, tmp_path):
    _, cfg, stats = small_run
    paths = emit_report(stats, tmp_path / "a")
    rows = read_report(paths["report"])
    assert [r["method"] for r in rows] == [m.method for m in stats.methods]
    assert [r["label"] for r in rows] == [METHOD_LABELS[m.method] for m in stats.methods]
    for r, ms in zip(rows, stats.methods):
        assert r["features_lod2"] == ms.lod2.median_features
        assert r["features_gain"] == ms.gain("features")
    again = emit_report(aggregate(stats.area, read_frames(paths["frames"])), tmp_path / "b")
    assert again["report"].read_text() == paths["report"].read_text()
    assert again["frames"].read_text() == paths["frames"].read_text()


def test_all_methods_give_seven_rows():
    rows = [FrameResult(s, m, "0", 0, 0, NO_HITS) for m in reversed(list(Method)) for s in ("LoD2", "LoD3")]
    stats = aggregate("x", rows)
    assert [m.method for m in stats.methods] == list(Method)


def test_no_hits_frame(small_run, tmp_path):
    cfg_path, cfg, _ = small_run
    d = json.loads(cfg_path.read_text())
    track = load_track(cfg.track)
    far = GnssTrack(track.frames, track.positions + [0.0, 1000.0, 0.0], track.antenna_to_camera_height)
    save_track(cfg_path.parent / "far.txt", far)  # a street with no buildings in view
    d["track"] = "far.txt"
    d["frames"] = d["frames"][:1]
    d["methods"] = ["direct"]
    p = cfg_path.parent / "nohits.json"
    p.write_text(json.dumps(d))
    stats = run_trajectory(load_config(p))
    assert {r.status for r in stats.frames} == {NO_HITS}
    ms = stats.by_method("direct")
    assert math.isnan(ms.lod2.median_features) and ms.gain("features") is None


def test_config_errors(small_run, tmp_path):
    cfg_path, *_ = small_run
    base = json.loads(cfg_path.read_text())

    def check(d):
        p = cfg_path.parent / "bad.json"
        p.write_text(json.dumps(d) if isinstance(d, dict) else d)
        with pytest.raises(ConfigError):
            load_config(p)

    check({**base, "methods": []})
    check({**base, "bogus": 1})
    check({**base, "track": "missing.txt"})
    check({k: v for k, v in base.items() if k != "masks"})
    check({**base, "weights": "nope"})
    check({**base, "workers": 0})
    check({**base, "offsets": {"tilt": 3}})
    check({**base, "scenes": {"LoD4": ["street_lod2.model"]}})
    check("{not json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.json")
