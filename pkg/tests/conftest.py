from pathlib import Path

import numpy as np
import pytest

from lodloc.semantic_mesh import load_model, triangulate
from lodloc.synthetic import cube_model, cube_window_model

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "docs" / "fixtures"


@pytest.fixture(scope="session")
def cube_mesh():
    return triangulate(cube_model())


@pytest.fixture(scope="session")
def cube_window_mesh():
    return triangulate(cube_window_model())


@pytest.fixture(scope="session")
def golden_cube():
    return load_model(FIXTURES / "cube_lod2.model")


@pytest.fixture(scope="session")
def golden_cube_window():
    return load_model(FIXTURES / "cube_window_lod3.model")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def street_pair():
    """(real, virtual, mask, buffers, mesh, pose) for one street frame against the LoD3 scene."""
    from lodloc.raycaster import cast_scene, render_normal_image, to_gray
    from lodloc.semantic_mesh import compose_scene
    from lodloc.synthetic import STREET_INTRINSICS, STREET_OFFSETS, render_optical, street_models, street_track, true_pose
    from lodloc.virtual_camera import build_lookat_pose

    lod2, lod3, truth = street_models()
    true_track, gnss = street_track()
    i = 8
    real, mask = render_optical(triangulate(truth), true_pose(true_track, i, STREET_OFFSETS), STREET_INTRINSICS)
    mesh = compose_scene([lod3])
    pose = build_lookat_pose(gnss, i, STREET_OFFSETS)
    buffers = cast_scene(mesh, pose, STREET_INTRINSICS)
    virtual = to_gray(render_normal_image(buffers))
    return real, virtual, mask, buffers, mesh, pose


# acceptance criteria record one line each; printed in the terminal summary
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
