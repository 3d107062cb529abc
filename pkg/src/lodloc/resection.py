"""Single-image spatial resection: DLT start values + weighted Gauss-Newton.

Unknowns are ``(X0, Y0, Z0, omega, phi, kappa)``; observations are the
image coordinates of each correspondence (two rows per point). The step
solves the weighted normal equations ``(A^T P A) dx = A^T P w`` with
``w = observed - computed``; updates are additive in all six parameters.
Standard deviations are ``s0 * sqrt(diag((A^T P A)^-1))``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import (
    DegenerateConfigError,
    NonConvergenceError,
    ParseError,
    PreconditionError,
    SingularNormalMatrixError,
)
from .errors import BehindCameraError
from .virtual_camera import (
    CameraIntrinsics,
    angles_from_rotation,
    rotation_from_angles,
    CameraPose,
    nearest_rotation,
    rot_x,
    rot_y,
    rot_z,
)

MIN_POINTS = 6
N_UNKNOWNS = 6
COND_LIMIT = 1e12
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 50


@dataclass(frozen=True, eq=False)
class ResectionProblem:
    correspondences: tuple
    intrinsics: CameraIntrinsics
    approx_position: np.ndarray
    weights: np.ndarray = None  # one per observation row (2n); defaults from correspondences

    def __post_init__(self):
        corr = tuple(self.correspondences)
        object.__setattr__(self, "correspondences", corr)
        if len(corr) < MIN_POINTS:
            raise PreconditionError(
                f"{len(corr)} correspondences given; at least {MIN_POINTS} are required"
            )
        object.__setattr__(self, "approx_position", np.asarray(self.approx_position, float).reshape(3))
        if self.weights is None:
            w = np.repeat([c.weight for c in corr], 2).astype(float)
        else:
            w = np.asarray(self.weights, float).reshape(-1)
        if w.shape != (2 * len(corr),) or np.any(w <= 0):
            raise PreconditionError("weights must be positive, one per observation row")
        object.__setattr__(self, "weights", w)

    @property
    def pixels(self) -> np.ndarray:
        return np.array([[c.x, c.y] for c in self.correspondences])

    @property
    def points(self) -> np.ndarray:
        return np.array([[c.X, c.Y, c.Z] for c in self.correspondences])

    @property
    def n_obs(self) -> int:
        return 2 * len(self.correspondences)

    def with_weights(self, weights) -> "ResectionProblem":
        return ResectionProblem(self.correspondences, self.intrinsics, self.approx_position, weights)


@dataclass(frozen=True, eq=False)
class ResectionSolution:
    pose: CameraPose
    sigma: np.ndarray  # sigma_X, sigma_Y, sigma_Z, sigma_omega, sigma_phi, sigma_kappa
    residuals: np.ndarray  # (2n,) pixels, x/y interleaved
    iterations: int
    converged: bool
    s0: float
    cofactor: np.ndarray = field(default=None, repr=False)

    @property
    def covariance(self) -> np.ndarray:
        return self.s0**2 * self.cofactor


# ---------------------------------------------------------------------- DLT


def _normalizer(x):
    c = x.mean(axis=0)
    d = np.sqrt(((x - c) ** 2).sum(axis=1)).mean()
    s = math.sqrt(x.shape[1]) / d if d > 0 else 1.0
    T = np.eye(x.shape[1] + 1)
    T[:-1, :-1] *= s
    T[:-1, -1] = -s * c
    return T


def dlt_matrix(pixels, points):
    """3x4 projection matrix from >= 6 correspondences (Hartley-normalised DLT).

    Returns (P, condition) where ``condition`` is the ratio of the largest
    to the second-smallest singular value of the normalised system.
    """
    x = np.asarray(pixels, float)
    X = np.asarray(points, float)
    T2, T3 = _normalizer(x), _normalizer(X)
    xn = (np.column_stack([x, np.ones(len(x))]) @ T2.T)[:, :2]
    Xh = np.column_stack([X, np.ones(len(X))]) @ T3.T
    n = len(x)
    A = np.zeros((2 * n, 12))
    A[0::2, 0:4] = Xh
    A[0::2, 8:12] = -xn[:, :1] * Xh
    A[1::2, 4:8] = Xh
    A[1::2, 8:12] = -xn[:, 1:2] * Xh
    _, sv, Vt = np.linalg.svd(A)
    cond = sv[0] / sv[-2] if sv[-2] > 0 else np.inf
    Pn = Vt[-1].reshape(3, 4)
    P = np.linalg.inv(T2) @ Pn @ T3
    return P, cond


def dlt_init(problem: ResectionProblem) -> CameraPose:
    """Rotation from the DLT projection matrix, position from the GNSS approximation."""
    if len(problem.correspondences) < MIN_POINTS:
        raise PreconditionError(f"at least {MIN_POINTS} correspondences are required")
    X = problem.points
    P, cond = dlt_matrix(problem.pixels, X)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise DegenerateConfigError(f"DLT system ill-conditioned (condition {cond:.3g}); points coplanar?")
    Ki = np.linalg.inv(problem.intrinsics.K)
    M = Ki @ P[:, :3]
    depth = (np.column_stack([X, np.ones(len(X))]) @ P.T)[:, 2]
    if np.median(depth) < 0:
        M = -M
    if np.linalg.det(M) < 0:
        M = -M
    return CameraPose.from_matrix(problem.approx_position, nearest_rotation(M))


# ------------------------------------------------------------ design matrix


def _drx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[0.0, 0, 0], [0, -s, -c], [0, c, -s]])


def _dry(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[-s, 0, c], [0, 0.0, 0], [-c, 0, -s]])


def _drz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[-s, -c, 0], [c, -s, 0], [0, 0, 0.0]])


def design_matrix(pose: CameraPose, k: CameraIntrinsics, points) -> tuple:
    """Analytic Jacobian of projected (x, y) w.r.t. the six pose parameters.

    Returns (A (2n, 6), computed pixels (n, 2)).
    """
    X = np.asarray(points, float)
    om, ph, ka = pose.angles
    Rx, Ry, Rz = rot_x(om), rot_y(ph), rot_z(ka)
    M = Rz @ Ry @ Rx
    d = X - pose.position
    pc = d @ M.T
    if np.any(pc[:, 2] <= 0):
        raise BehindCameraError("a world point is not in front of the camera")
    z = k.principal_distance
    p1, p2, p3 = pc[:, 0], pc[:, 1], pc[:, 2]
    # d(x, y)/d(p_cam): (n, 2, 3)
    J = np.zeros((len(X), 2, 3))
    J[:, 0, 0] = z / p3
    J[:, 0, 2] = -z * p1 / p3**2
    J[:, 1, 1] = z / p3
    J[:, 1, 2] = -z * p2 / p3**2
    dp = np.empty((len(X), 3, 6))
    dp[:, :, 0:3] = -M[None, :, :]
    dp[:, :, 3] = d @ (Rz @ Ry @ _drx(om)).T
    dp[:, :, 4] = d @ (Rz @ _dry(ph) @ Rx).T
    dp[:, :, 5] = d @ (_drz(ka) @ Ry @ Rx).T
    A = np.einsum("nij,njk->nik", J, dp).reshape(-1, 6)
    xy = np.column_stack([k.x0 + z * p1 / p3, k.y0 + z * p2 / p3])
    return A, xy


def build_normal_system(pose: CameraPose, problem: ResectionProblem):
    """Design matrix ``A`` (2n x 6) and misclosure ``w = observed - computed``."""
    A, xy = design_matrix(pose, problem.intrinsics, problem.points)
    w = (problem.pixels - xy).reshape(-1)
    return A, w


def _solve_normal(A, w, p):
    N = A.T @ (p[:, None] * A)
    cond = np.linalg.cond(N)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularNormalMatrixError(f"normal matrix condition {cond:.3g} exceeds {COND_LIMIT:g}")
    cf = linalg.cho_factor(N)
    dx = linalg.cho_solve(cf, A.T @ (p * w))
    return dx, cf


def _finish(problem, params, A, w, dx, cf, iterations, converged):
    p = problem.weights
    v = A @ dx - w
    dof = problem.n_obs - N_UNKNOWNS
    s0 = math.sqrt(max(float(v @ (p * v)), 0.0) / dof) if dof > 0 else float("nan")
    Q = linalg.cho_solve(cf, np.eye(N_UNKNOWNS))
    sigma = s0 * np.sqrt(np.clip(np.diag(Q), 0.0, None))
    pose = CameraPose.from_params(params)
    pose = CameraPose.from_matrix(pose.position, pose.rotation_matrix)
    return ResectionSolution(pose, sigma, v, iterations, converged, s0, Q)


def gauss_newton_resect(problem: ResectionProblem, init: CameraPose, tol: float = DEFAULT_TOL,
                        max_iter: int = DEFAULT_MAX_ITER) -> ResectionSolution:
    """Iterate ``dx = (A^T P A)^-1 A^T P w`` until ``max|dx| < tol``.

    ``tol`` applies to the mixed vector (metres for position, radians for
    angles). Raises :class:`NonConvergenceError` carrying the best iterate
    (lowest weighted misclosure) when ``max_iter`` is exhausted.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    p = problem.weights
    params = init.params.astype(float)
    best = (np.inf, params.copy())
    A = w = dx = cf = None
    for it in range(1, max_iter + 1):
        A, w = build_normal_system(CameraPose.from_params(params), problem)
        rss = float(w @ (p * w))
        if rss < best[0]:
            best = (rss, params.copy())
        dx, cf = _solve_normal(A, w, p)
        params = params + dx
        if np.max(np.abs(dx)) < tol:
            return _finish(problem, params, A, w, dx, cf, it, True)
    if A is None:
        msg = "max_iter = 0: no iteration performed"
        sol = ResectionSolution(init, np.full(6, np.nan), np.full(problem.n_obs, np.nan), 0, False, float("nan"))
    else:
        A_b, w_b = build_normal_system(CameraPose.from_params(best[1]), problem)
        _, cf_b = _solve_normal(A_b, w_b, p)
        sol = _finish(problem, best[1], A_b, w_b, np.zeros(6), cf_b, max_iter, False)
        msg = f"no convergence after {max_iter} iterations (last step {np.max(np.abs(dx)):.3g})"
    raise NonConvergenceError(msg, best=sol)


# ------------------------------------------------------------ composition


@dataclass(frozen=True)
class ResectionConfig:
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    working_frame: bool = True  # rotate about Z to stay clear of the phi = +-90 deg singularity
    reweight_threshold: float = None  # in units of s0; None disables the reweighting pass


def _rotate_problem(problem, Q):
    from .lift3d import Correspondence2D3D

    corr = [
        Correspondence2D3D(c.x, c.y, *(Q @ c.point), c.weight) for c in problem.correspondences
    ]
    return ResectionProblem(corr, problem.intrinsics, Q @ problem.approx_position, problem.weights)


def _angles_jacobian(M_local, Q, eps=1e-7):
    """d(world angles)/d(local angles) for M_world = M_local @ Q, by central differences."""
    a0 = np.array(angles_from_rotation(M_local))
    J = np.zeros((3, 3))
    for j in range(3):
        da = np.zeros(3)
        da[j] = eps
        ap = np.array(angles_from_rotation(rotation_from_angles(*(a0 + da)) @ Q))
        am = np.array(angles_from_rotation(rotation_from_angles(*(a0 - da)) @ Q))
        diff = (ap - am + math.pi) % (2 * math.pi) - math.pi
        J[:, j] = diff / (2 * eps)
    return J


def _to_world(sol: ResectionSolution, Q) -> ResectionSolution:
    M = sol.pose.rotation_matrix @ Q
    pose = CameraPose.from_matrix(Q.T @ sol.pose.position, M)
    T = np.zeros((6, 6))
    T[:3, :3] = Q.T
    T[3:, 3:] = _angles_jacobian(sol.pose.rotation_matrix, Q)
    Qw = T @ sol.cofactor @ T.T
    sigma = sol.s0 * np.sqrt(np.clip(np.diag(Qw), 0.0, None))
    return ResectionSolution(pose, sigma, sol.residuals, sol.iterations, sol.converged, sol.s0, Qw)


def resect_frame(problem: ResectionProblem, config: ResectionConfig = None) -> ResectionSolution:
    """``dlt_init`` followed by ``gauss_newton_resect``.

    With ``working_frame`` on, a start rotation within 45 degrees of the
    phi singularity is solved in a frame turned 90 degrees about Z; pose and
    cofactor are mapped back, so results are reported in the world frame.
    """
    config = config or ResectionConfig()
    init = dlt_init(problem)
    Q = None
    if config.working_frame and abs(init.angles[1]) > math.pi / 4:
        Q = rot_z(math.pi / 2)
        problem_w = _rotate_problem(problem, Q)
        init = CameraPose.from_matrix(Q @ init.position, init.rotation_matrix @ Q.T)
    else:
        problem_w = problem
    sol = gauss_newton_resect(problem_w, init, config.tol, config.max_iter)
    if config.reweight_threshold is not None and sol.s0 > 0:
        r = np.abs(sol.residuals)
        cut = config.reweight_threshold * sol.s0
        p = problem_w.weights * np.minimum(1.0, cut / np.maximum(r, 1e-300))
        sol = gauss_newton_resect(problem_w.with_weights(p), sol.pose, config.tol, config.max_iter)
    if Q is not None:
        sol = _to_world(sol, Q)
    return sol


SOLUTION_FIELDS = (
    "X0", "Y0", "Z0", "omega", "phi", "kappa",
    "sigma_X", "sigma_Y", "sigma_Z", "sigma_omega", "sigma_phi", "sigma_kappa",
    "s0", "iterations", "converged",
)


def solution_row(sol: ResectionSolution) -> list:
    vals = [*sol.pose.position, *sol.pose.angles, *sol.sigma, sol.s0]
    return [repr(float(v)) for v in vals] + [str(int(sol.iterations)), str(int(bool(sol.converged)))]


def write_solution(path, sol: ResectionSolution) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SOLUTION_FIELDS)
        w.writerow(solution_row(sol))


def read_solution(path) -> dict:
    """First data row of a solution CSV as a dict of floats (``iterations`` int, ``converged`` bool)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(SOLUTION_FIELDS) - set(reader.fieldnames):
            raise ParseError(f"{path}: expected columns {', '.join(SOLUTION_FIELDS)}")
        row = next(reader, None)
    if row is None:
        raise ParseError(f"{path}: no solution row")
    out = {f: float(row[f]) for f in SOLUTION_FIELDS[:-2]}
    out["iterations"] = int(row["iterations"])
    out["converged"] = row["converged"].strip().lower() in ("1", "true")
    return out
