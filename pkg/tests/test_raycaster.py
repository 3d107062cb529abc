import json

import numpy as np
import pytest

from lodloc.raycaster import (
    BACKGROUND_RGB,
    MISS_ID,
    BVH,
    cast_scene,
    load_buffers,
    moller_trumbore,
    render_normal_image,
    save_buffers,
)
from lodloc.semantic_mesh import SemanticMesh, triangulate
from lodloc.synthetic import frontal_plane_model
from lodloc.virtual_camera import CameraIntrinsics, CameraPose, lookat_matrix

K = CameraIntrinsics(64, 48, 50.0)


def _look(pos, target):
    return CameraPose.from_matrix(pos, lookat_matrix(np.asarray(pos, float), np.asarray(target, float)))


def _mesh_from_triangles(tris):
    tris = np.asarray(tris, float)
    n = len(tris)
    v = tris.reshape(-1, 3)
    t = np.arange(3 * n).reshape(n, 3)
    p = v[t]
    nn = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    nn /= np.linalg.norm(nn, axis=1, keepdims=True)
    z = np.zeros(n, int)
    return SemanticMesh(v, t, z, z, nn, z + 2, np.arange(n), ("b",), (2,), (False,))


def test_single_triangle_full_frustum():
    big = [[(10, -1e3, -1e3), (10, 1e3, -1e3), (10, 0, 1e3)]]
    mesh = _mesh_from_triangles(big)
    k = CameraIntrinsics(33, 25, 40.0)
    buf = cast_scene(mesh, _look([0, 0, 0], [1, 0, 0]), k)
    assert buf.hit_mask.all()
    assert buf.hit_distance[12, 16] == pytest.approx(10.0, rel=1e-12)


def test_vertex_hit_pairs_u_with_first_vertex():
    P = np.array([[5.0, 0.0, 0.0], [5.0, 2.0, 0.0], [5.0, 0.0, 2.0]])
    d = P / np.linalg.norm(P, axis=1, keepdims=True)
    for i in range(3):
        t, b1, b2 = moller_trumbore(np.zeros(3), d[i:i + 1], P[None])
        u, v, s = 1 - b1[0, 0] - b2[0, 0], b1[0, 0], b2[0, 0]
        want = np.eye(3)[i]
        np.testing.assert_allclose([u, v, s], want, atol=1e-9)


def test_empty_mesh_all_miss():
    buf = cast_scene(SemanticMesh.empty(), _look([0, 0, 0], [1, 0, 0]), K)
    assert not buf.hit_mask.any()
    assert np.all(np.isinf(buf.hit_distance))
    assert np.all(buf.geometry_id == MISS_ID)
    assert np.all(buf.primitive_normal == 0) and np.all(buf.barycentric == 0)
    assert np.all(render_normal_image(buf) == 0)


def test_buffer_invariants(cube_window_mesh):
    pose = _look([3.0, 0.5, 0.55], [1.0, 0.45, 0.5])
    k = CameraIntrinsics(96, 72, 60.0)
    buf = cast_scene(cube_window_mesh, pose, k)
    hit = buf.hit_mask
    assert hit.sum() > 500
    u, v = buf.barycentric[hit].T
    assert np.all(u >= -1e-12) and np.all(v >= -1e-12) and np.all(u + v <= 1 + 1e-12)
    # distance equals |origin - hit point|
    tri = cube_window_mesh.triangle_vertices()[buf.primitive_id[hit]]
    s = 1 - u - v
    P = u[:, None] * tri[:, 0] + v[:, None] * tri[:, 1] + s[:, None] * tri[:, 2]
    d = np.linalg.norm(P - pose.position, axis=1)
    np.testing.assert_allclose(d, buf.hit_distance[hit], rtol=1e-9)
    # ids agree
    assert np.all(cube_window_mesh.tri_building[buf.primitive_id[hit]] == buf.geometry_id[hit])


def test_depth_law_frontal_plane():
    mesh = triangulate(frontal_plane_model(10.0))
    k = CameraIntrinsics(80, 60, 45.0)
    buf = cast_scene(mesh, _look([0, 0, 0], [1, 0, 0]), k)
    assert buf.hit_mask.all()
    xs, ys = np.meshgrid(np.arange(k.width) - k.x0, np.arange(k.height) - k.y0)
    cos = k.principal_distance / np.sqrt(xs**2 + ys**2 + k.principal_distance**2)
    np.testing.assert_allclose(buf.hit_distance, 10.0 / cos, rtol=1e-9)


def test_occlusion_monotone():
    far = [[(10, -50, -50), (10, 50, -50), (10, 0, 50)]]
    near = [[(4, -1, -1), (4, 1, -1), (4, 0, 1)]]
    pose = _look([0, 0, 0], [1, 0, 0])
    a = cast_scene(_mesh_from_triangles(far), pose, K)
    b = cast_scene(_mesh_from_triangles(far + near), pose, K)
    c = cast_scene(_mesh_from_triangles(near + far), pose, K)
    assert np.all(b.hit_distance <= a.hit_distance)
    assert np.any(b.hit_distance < a.hit_distance)
    np.testing.assert_array_equal(b.hit_distance, c.hit_distance)


def test_tie_goes_to_lower_index():
    tri = [(10, -50, -50), (10, 50, -50), (10, 0, 50)]
    buf = cast_scene(_mesh_from_triangles([tri, tri]), _look([0, 0, 0], [1, 0, 0]), K)
    assert set(np.unique(buf.primitive_id[buf.hit_mask])) == {0}


def test_backfaces_are_hit(cube_mesh):
    pose = _look([0.5, 0.5, 0.5], [2.0, 0.5, 0.5])  # inside the cube
    buf = cast_scene(cube_mesh, pose, K)
    assert buf.hit_mask.all()


def test_normal_image_absolute_values():
    wall = np.array([[(10, -50, -50), (10, 50, -50), (10, 0, 50)]])
    flipped = wall[:, ::-1]
    pose = _look([0, 0, 0], [1, 0, 0])
    a = render_normal_image(cast_scene(_mesh_from_triangles(wall), pose, K))
    b = render_normal_image(cast_scene(_mesh_from_triangles(flipped), pose, K))
    np.testing.assert_array_equal(a, b)
    assert tuple(a[24, 32]) == (255, 0, 0)


def test_normal_image_roof_vs_wall(cube_mesh):
    pose = _look([3.0, 2.5, 3.0], [0.5, 0.5, 0.5])
    img = render_normal_image(cast_scene(cube_mesh, pose, CameraIntrinsics(96, 72, 60.0)))
    colours = {tuple(c) for c in img.reshape(-1, 3)} - {BACKGROUND_RGB}
    assert {(0, 0, 255), (255, 0, 0), (0, 255, 0)} <= colours


def test_background_colour_unreachable():
    rng = np.random.default_rng(0)
    n = rng.normal(size=(100_000, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    c = np.rint(np.abs(n) * 255)
    assert np.all(c.max(axis=1) >= 147)


def _colour_edges(img):
    dx = np.any(img[:, 1:] != img[:, :-1], axis=2).sum()
    dy = np.any(img[1:] != img[:-1], axis=2).sum()
    return int(dx + dy)


def test_lod3_facade_has_more_structure(cube_mesh, cube_window_mesh):
    # oblique view of the x = 1 facade shows the window reveals
    pose = _look([2.5, -0.4, 1.1], [1.0, 0.5, 0.55])
    k = CameraIntrinsics(128, 96, 90.0)
    a = render_normal_image(cast_scene(cube_mesh, pose, k))
    b = render_normal_image(cast_scene(cube_window_mesh, pose, k))
    ca = {tuple(c) for c in a.reshape(-1, 3)}
    cb = {tuple(c) for c in b.reshape(-1, 3)}
    assert len(cb) >= len(ca)
    assert _colour_edges(b) > _colour_edges(a)


def test_worker_count_is_bitwise_irrelevant(cube_window_mesh):
    pose = _look([3.0, 0.2, 0.9], [1.0, 0.5, 0.5])
    k = CameraIntrinsics(97, 61, 70.0)
    a = cast_scene(cube_window_mesh, pose, k, workers=1)
    for w in (2, 3, 7):
        assert a.equals(cast_scene(cube_window_mesh, pose, k, workers=w))


def test_bvh_matches_brute_force(cube_window_mesh):
    rng = np.random.default_rng(3)
    tri = cube_window_mesh.triangle_vertices()
    bvh = BVH(tri)
    origin = np.array([2.2, 0.4, 0.6])
    dirs = rng.normal(size=(500, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    from lodloc.raycaster import _trace

    t, ids, _, _ = _trace(bvh, origin, dirs)
    T, _, _ = moller_trumbore(origin, dirs, tri)
    best = np.where(np.isfinite(T).any(axis=1), np.argmin(T, axis=1), MISS_ID)
    tmin = T.min(axis=1)
    np.testing.assert_array_equal(ids, best)
    np.testing.assert_array_equal(t, tmin)


def test_dump_round_trip(tmp_path, cube_window_mesh):
    pose = _look([3.0, 0.2, 0.9], [1.0, 0.5, 0.5])
    buf = cast_scene(cube_window_mesh, pose, K)
    save_buffers(tmp_path, buf, cube_window_mesh, pose, K)
    back, mesh, meta = load_buffers(tmp_path)
    assert back.equals(buf)
    np.testing.assert_array_equal(mesh.triangles, cube_window_mesh.triangles)
    assert meta["miss"]["id"] == int(MISS_ID) and meta["endianness"] == "little"
    assert np.load(tmp_path / "distance.npy").dtype.str == "<f8"
    assert np.load(tmp_path / "primitive_id.npy").dtype.str == "<u4"
    assert json.loads((tmp_path / "meta.json").read_text())["intrinsics"]["width"] == K.width
