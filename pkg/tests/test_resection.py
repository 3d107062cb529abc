import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lodloc.errors import DegenerateConfigError, IllConditionedError, NonConvergenceError, PreconditionError
from lodloc.lift3d import Correspondence2D3D
from lodloc.resection import (
    ResectionConfig,
    ResectionProblem,
    build_normal_system,
    design_matrix,
    dlt_init,
    gauss_newton_resect,
    read_solution,
    resect_frame,
    write_solution,
)
from lodloc.virtual_camera import CameraIntrinsics, CameraPose, project

K = CameraIntrinsics(640, 480, 500.0)
TRUTH = CameraPose(np.array([2.0, -3.0, 1.5]), (0.05, -0.1, 0.2))


def _points(pose, n, rng, depth=(8.0, 25.0), planar=False):
    """World points inside the camera frustum at the given depth range."""
    M = pose.rotation_matrix
    z = rng.uniform(*depth, n)
    if planar:
        z = np.full(n, np.mean(depth))
    x = rng.uniform(-0.5, 0.5, n) * K.width / K.principal_distance * z
    y = rng.uniform(-0.5, 0.5, n) * K.height / K.principal_distance * z
    return pose.position + np.column_stack([x, y, z]) @ M


def _problem(pose, X, noise=0.0, rng=None, gnss_err=(0.3, -0.2, 0.1)):
    xy = project(pose, K, X)
    if noise:
        xy = xy + rng.normal(0.0, noise, xy.shape)
    corr = [Correspondence2D3D(*p, *P) for p, P in zip(xy, X)]
    return ResectionProblem(corr, K, pose.position + np.array(gnss_err))


def _angle_between(Ma, Mb):
    c = (np.trace(Ma @ Mb.T) - 1) / 2
    return math.acos(min(1.0, max(-1.0, c)))


def test_noiseless_recovery(rng):
    prob = _problem(TRUTH, _points(TRUTH, 20, rng))
    sol = resect_frame(prob)
    assert sol.converged
    np.testing.assert_allclose(sol.pose.position, TRUTH.position, atol=1e-6)
    assert _angle_between(sol.pose.rotation_matrix, TRUTH.rotation_matrix) < 1e-8
    assert sol.s0 < 1e-6


def test_s0_matches_pixel_noise():
    rng = np.random.default_rng(7)
    s0 = []
    for _ in range(40):
        prob = _problem(TRUTH, _points(TRUTH, 50, rng), noise=0.5, rng=rng)
        s0.append(resect_frame(prob).s0)
    assert abs(np.median(s0) - 0.5) < 0.05


def test_max_iter_zero_returns_init(rng):
    prob = _problem(TRUTH, _points(TRUTH, 12, rng))
    init = dlt_init(prob)
    with pytest.raises(NonConvergenceError) as exc:
        gauss_newton_resect(prob, init, max_iter=0)
    best = exc.value.best
    assert best.iterations == 0 and not best.converged
    np.testing.assert_array_equal(best.pose.params, init.params)


def test_non_convergence_keeps_best_iterate(rng):
    prob = _problem(TRUTH, _points(TRUTH, 12, rng), noise=0.3, rng=rng)
    with pytest.raises(NonConvergenceError) as exc:
        gauss_newton_resect(prob, dlt_init(prob), max_iter=1)
    assert exc.value.best is not None and not exc.value.best.converged


@settings(max_examples=40, deadline=None)
@given(st.floats(-0.6, 0.6), st.floats(-1.2, 1.2), st.floats(-math.pi, math.pi), st.integers(0, 2**31 - 1))
def test_dlt_rotation_noiseless(om, ph, ka, seed):
    rng = np.random.default_rng(seed)
    pose = CameraPose(np.array([1.0, 2.0, 3.0]), (om, ph, ka))
    prob = _problem(pose, _points(pose, 15, rng))
    init = dlt_init(prob)
    assert _angle_between(init.rotation_matrix, pose.rotation_matrix) < 1e-3
    np.testing.assert_array_equal(init.position, prob.approx_position)


def test_coplanar_points_degenerate(rng):
    prob = _problem(TRUTH, _points(TRUTH, 15, rng, planar=True))
    with pytest.raises(DegenerateConfigError):
        dlt_init(prob)


def test_five_points_rejected(rng):
    with pytest.raises(PreconditionError):
        _problem(TRUTH, _points(TRUTH, 5, rng))


def test_six_point_minimal_case(rng):
    prob = _problem(TRUTH, _points(TRUTH, 6, rng))
    sol = resect_frame(prob)
    np.testing.assert_allclose(sol.pose.position, TRUTH.position, atol=1e-6)


def test_duplicate_points_ill_conditioned(rng):
    X = _points(TRUTH, 3, rng)
    with pytest.raises(IllConditionedError):
        resect_frame(_problem(TRUTH, np.vstack([X, X, X])))


def test_weights_validation(rng):
    prob = _problem(TRUTH, _points(TRUTH, 8, rng))
    with pytest.raises(PreconditionError):
        prob.with_weights(np.ones(5))
    with pytest.raises(PreconditionError):
        prob.with_weights(np.r_[np.ones(15), 0.0])


def test_jacobian_matches_finite_differences(rng):
    pose = CameraPose(np.array([0.5, -1.0, 2.0]), (0.3, -0.4, 1.1))
    X = _points(pose, 10, rng)
    A, xy = design_matrix(pose, K, X)
    eps = 1e-6
    for j in range(6):
        dp = np.zeros(6)
        dp[j] = eps
        plus = project(CameraPose.from_params(pose.params + dp), K, X).reshape(-1)
        minus = project(CameraPose.from_params(pose.params - dp), K, X).reshape(-1)
        np.testing.assert_allclose(A[:, j], (plus - minus) / (2 * eps), rtol=1e-5, atol=1e-4)
    np.testing.assert_allclose(xy, project(pose, K, X), atol=1e-9)


def test_misclosure_zero_at_truth(rng):
    prob = _problem(TRUTH, _points(TRUTH, 10, rng))
    A, w = build_normal_system(TRUTH, prob)
    assert A.shape == (20, 6) and w.shape == (20,)
    np.testing.assert_allclose(w, 0, atol=1e-9)


def test_truth_is_a_fixed_point(rng):
    prob = _problem(TRUTH, _points(TRUTH, 10, rng))
    sol = gauss_newton_resect(prob, TRUTH)
    assert sol.iterations == 1
    np.testing.assert_allclose(sol.pose.params, TRUTH.params, atol=1e-9)


def test_solution_shapes(rng):
    sol = resect_frame(_problem(TRUTH, _points(TRUTH, 9, rng), noise=0.5, rng=rng))
    assert sol.sigma.shape == (6,) and sol.residuals.shape == (18,)
    assert sol.cofactor.shape == (6, 6)
    np.testing.assert_allclose(sol.covariance, sol.covariance.T, atol=1e-15)
    np.testing.assert_allclose(np.sqrt(np.diag(sol.covariance)), sol.sigma)


def test_uniform_weight_scaling_invariance(rng):
    prob = _problem(TRUTH, _points(TRUTH, 15, rng), noise=0.5, rng=rng)
    a = resect_frame(prob)
    b = resect_frame(prob.with_weights(np.full(prob.n_obs, 4.0)))
    np.testing.assert_allclose(a.pose.params, b.pose.params, atol=1e-9)
    np.testing.assert_allclose(a.sigma, b.sigma, rtol=1e-6)


def test_lateral_sigmas_balanced():
    # camera looking along +Y at a symmetric block: sigma_X and sigma_Z comparable
    rng = np.random.default_rng(11)
    pose = CameraPose(np.zeros(3), (-math.pi / 2, 0.0, 0.0))
    ratios = []
    for _ in range(20):
        sol = resect_frame(_problem(pose, _points(pose, 40, rng), noise=0.5, rng=rng))
        ratios.append(sol.sigma[0] / sol.sigma[2])
    assert 0.5 < np.median(ratios) < 2.0


def test_resect_frame_is_dlt_then_gauss_newton(rng):
    prob = _problem(TRUTH, _points(TRUTH, 15, rng), noise=0.5, rng=rng)
    a = resect_frame(prob, ResectionConfig(working_frame=False))
    b = gauss_newton_resect(prob, dlt_init(prob))
    np.testing.assert_array_equal(a.pose.params, b.pose.params)
    np.testing.assert_array_equal(a.sigma, b.sigma)


def test_working_frame_near_gimbal(rng):
    pose = CameraPose(np.array([1.0, 1.0, 1.0]), (0.2, math.pi / 2 - 1e-4, 0.3))
    prob = _problem(pose, _points(pose, 20, rng), noise=0.3, rng=rng)
    sol = resect_frame(prob)
    assert sol.converged
    np.testing.assert_allclose(sol.pose.position, pose.position, atol=0.05)
    assert _angle_between(sol.pose.rotation_matrix, pose.rotation_matrix) < 0.01
    assert np.all(np.isfinite(sol.sigma[:3]))


def test_more_points_reduce_sigma():
    rng = np.random.default_rng(5)
    few, many = [], []
    for _ in range(15):
        X = _points(TRUTH, 80, rng)
        prob_many = _problem(TRUTH, X, noise=0.5, rng=rng)
        prob_few = ResectionProblem(prob_many.correspondences[:10], K, prob_many.approx_position)
        few.append(resect_frame(prob_few).sigma[:3])
        many.append(resect_frame(prob_many).sigma[:3])
    assert np.all(np.median(many, axis=0) < np.median(few, axis=0))


def test_solution_csv_round_trip(tmp_path, rng):
    sol = resect_frame(_problem(TRUTH, _points(TRUTH, 12, rng), noise=0.5, rng=rng))
    p = tmp_path / "sol.csv"
    write_solution(p, sol)
    back = read_solution(p)
    assert back["X0"] == sol.pose.position[0] and back["sigma_Z"] == sol.sigma[2]
    assert back["s0"] == sol.s0 and back["converged"] is True
    assert back["iterations"] == sol.iterations
