"""
Nominal gain design and common quadratic Lyapunov functions (CQLF).

A gain K makes both A0 = A - B K and A_tilde = A_hat - B_hat K Hurwitz with a
common Lyapunov matrix P = Q^-1 iff (Q, Y = -K Q) satisfies

    A Q + Q A^T + B Y + Y^T B^T < 0
    A_hat Q + Q A_hat^T + B_hat Y + Y^T B_hat^T < 0
    Q > 0

which is solved as a small semidefinite program with cvxpy.
"""
import logging
from dataclasses import dataclass

import cvxpy as cp
import numpy as np
import scipy.linalg
import scipy.signal

from . import config
from .filter_core import FilterData, input_direction
from .linear_model import (
    CbfLabError,
    Constraint,
    NotStabilizable,
    Plant,
    build_hocbf_chain,
    is_hurwitz,
    spectral_abscissa,
)
from .spectral_analysis import compute_xi

logger = logging.getLogger(__name__)

OBSTRUCTION_NOTE = "m=1 spectral obstruction: A_tilde does not depend on K and is not Hurwitz"


class LmiInfeasible(CbfLabError):
    """
    The solver found no feasible point within its budget. This is not a
    proof of infeasibility unless `note` names a spectral obstruction.
    """

    def __init__(self, message: str, status: str | None = None, t_star: float | None = None, note: str | None = None):
        super().__init__(message if note is None else f"{message} ({note})")
        self.status = status
        self.t_star = t_star
        self.note = note


class IllConditioned(CbfLabError):
    pass


class LmiIdentityMismatch(CbfLabError):
    """A_tilde(K) = A_hat - B_hat K failed on a random gain."""


@dataclass(frozen=True)
class LmiProblem:
    A: np.ndarray
    B: np.ndarray
    A_hat: np.ndarray
    B_hat: np.ndarray
    v1: np.ndarray

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def a_tilde(self, K) -> np.ndarray:
        return self.A_hat - self.B_hat @ np.atleast_2d(K)


@dataclass(frozen=True)
class LmiSolution:
    Q: np.ndarray
    Y: np.ndarray
    K: np.ndarray
    P: np.ndarray
    margins: tuple[float, float]
    t_star: float
    status: str
    abscissas: tuple[float, float]

    def to_dict(self) -> dict:
        return {
            "K": self.K.tolist(),
            "P": self.P.tolist(),
            "margins": list(self.margins),
            "t_star": self.t_star,
            "status": self.status,
            "spectral_abscissa_A0": self.abscissas[0],
            "spectral_abscissa_A_tilde": self.abscissas[1],
        }


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def _max_eig(M: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(_sym(M))[-1])


def build_lmi_problem(plant: Plant, constraint: Constraint, alphas, G=None) -> LmiProblem:
    """
    A_hat = A + v1 c^T phi(A) and B_hat = (I + v1 c^T A^(r-1)) B, so that
    A_tilde = A_hat - B_hat K for every K. v1 depends on G but not on K.
    """
    G = np.eye(plant.m) if G is None else np.atleast_2d(G)
    chain = build_hocbf_chain(plant, constraint, alphas)
    a, g_inv_a, theta_sq = input_direction(plant, constraint, G)
    v1 = -(plant.B @ g_inv_a) / theta_sq
    A_hat = plant.A + np.outer(v1, chain.terminal_row)
    B_hat = plant.B + np.outer(v1, a)
    prob = LmiProblem(A=plant.A, B=plant.B, A_hat=A_hat, B_hat=B_hat, v1=v1)

    rng = np.random.default_rng(0)
    scale = np.linalg.norm(A_hat, 2) + np.linalg.norm(B_hat, 2) + 1.0
    for _ in range(3):
        K = rng.standard_normal((plant.m, plant.n))
        direct = plant.A - plant.B @ K + np.outer(v1, chain.terminal_row - a @ K)
        gap = np.linalg.norm(prob.a_tilde(K) - direct) / (scale * (1.0 + np.linalg.norm(K)))
        if gap > config.LMI_IDENTITY_TOL:
            raise LmiIdentityMismatch(f"A_tilde(K) = A_hat - B_hat K holds only to {gap:.3g}")
    logger.debug(f"LMI problem: n={prob.n}, m={prob.m}, ||B_hat|| = {np.linalg.norm(B_hat):.3g}")
    return prob


def spectral_obstruction(prob: LmiProblem, tol: float | None = None) -> str | None:
    """For m = 1, B_hat = 0 and A_tilde = A_hat for every K; an unstable A_hat rules out any design."""
    if prob.m != 1 or is_hurwitz(prob.A_hat, tol):
        return None
    logger.info(f"A_hat is not Hurwitz (abscissa {spectral_abscissa(prob.A_hat):.6g}) and m = 1")
    return OBSTRUCTION_NOTE


def _solver_options(solver: str, max_iter: int) -> dict:
    if solver == "CLARABEL":
        return {"max_iter": max_iter}
    if solver == "SCS":
        return {"max_iters": max_iter}
    return {}


def _solve(problem: cp.Problem, solver: str, max_iter: int) -> str:
    try:
        problem.solve(solver=solver, **_solver_options(solver, max_iter))
    except cp.error.SolverError as e:
        logger.warning(f"{solver} failed: {e}")
        return "solver_error"
    logger.debug(f"{solver} status {problem.status}, objective {problem.value}")
    return problem.status


def solve_lmi_pair(
    prob: LmiProblem,
    eps: float | None = None,
    max_iter: int | None = None,
    solver: str | None = None,
) -> LmiSolution:
    """
    Minimizes t subject to both Lyapunov LMIs <= t I and I <= Q <= bound I.

    Raises:
        LmiInfeasible: on solver failure, t* >= -eps, or a failed post-hoc check.
        IllConditioned: if cond(Q) exceeds LMI_CONDITION_LIMIT.
    """
    n, m = prob.n, prob.m
    eps = config.LMI_EPS_FACTOR * max(np.linalg.norm(prob.A, 2), 1.0) if eps is None else eps
    max_iter = config.LMI_MAX_ITER if max_iter is None else max_iter
    solver = config.LMI_SOLVER if solver is None else solver
    note = spectral_obstruction(prob)

    Q = cp.Variable((n, n), symmetric=True)
    Y = cp.Variable((m, n))
    t = cp.Variable()
    I = np.eye(n)
    M1 = prob.A @ Q + Q @ prob.A.T + prob.B @ Y + Y.T @ prob.B.T
    M2 = prob.A_hat @ Q + Q @ prob.A_hat.T + prob.B_hat @ Y + Y.T @ prob.B_hat.T
    constraints = [
        0.5 * (M1 + M1.T) << t * I,
        0.5 * (M2 + M2.T) << t * I,
        Q >> I,
        Q << config.LMI_Q_BOUND * I,
        cp.norm(Y, "fro") <= config.LMI_Y_BOUND,
    ]
    problem = cp.Problem(cp.Minimize(t), constraints)
    logger.info(f"Solving LMI pair (n={n}, m={m}) with {solver}, eps={eps:.3g}")
    status = _solve(problem, solver, max_iter)

    if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or Q.value is None:
        raise LmiInfeasible(f"no feasible point found (status {status})", status=status, note=note)
    if status == cp.OPTIMAL_INACCURATE:
        logger.warning("Solver reported optimal_inaccurate; relying on the post-hoc checks")
    t_star = float(t.value)
    if t_star >= -eps:
        raise LmiInfeasible(f"best t* = {t_star:.3g} is not below -eps = {-eps:.3g}", status=status, t_star=t_star, note=note)

    Qv = _sym(Q.value)
    Yv = np.asarray(Y.value).reshape(m, n)
    cond = np.linalg.cond(Qv)
    if cond > config.LMI_CONDITION_LIMIT:
        raise IllConditioned(f"cond(Q) = {cond:.3g} exceeds {config.LMI_CONDITION_LIMIT:.0e}")

    K = -scipy.linalg.solve(Qv, Yv.T, assume_a="pos").T
    P = _sym(np.linalg.inv(Qv))
    margins = (
        _max_eig(prob.A @ Qv + Qv @ prob.A.T + prob.B @ Yv + Yv.T @ prob.B.T),
        _max_eig(prob.A_hat @ Qv + Qv @ prob.A_hat.T + prob.B_hat @ Yv + Yv.T @ prob.B_hat.T),
    )
    q_min = float(np.linalg.eigvalsh(Qv)[0])
    A0 = prob.A - prob.B @ K
    A_tilde = prob.a_tilde(K)
    abscissas = (spectral_abscissa(A0), spectral_abscissa(A_tilde))
    if max(margins) >= -eps or q_min <= eps or not (is_hurwitz(A0) and is_hurwitz(A_tilde)):
        raise LmiInfeasible(
            f"post-hoc check failed: margins {margins}, min eig(Q) {q_min:.3g}, abscissas {abscissas}",
            status=status,
            t_star=t_star,
            note=note,
        )

    logger.info(f"LMI pair solved: t* = {t_star:.4g}, margins = ({margins[0]:.4g}, {margins[1]:.4g})")
    return LmiSolution(Q=Qv, Y=Yv, K=K, P=P, margins=margins, t_star=t_star, status=status, abscissas=abscissas)


def verify_cqlf(P, A0, A_tilde) -> tuple[float, float]:
    """Max eigenvalues of P A0 + A0^T P and P A_tilde + A_tilde^T P."""
    P = np.asarray(P, dtype=float)
    return (_max_eig(P @ A0 + A0.T @ P), _max_eig(P @ A_tilde + A_tilde.T @ P))


def is_cqlf(P, A0, A_tilde, tol: float | None = None) -> bool:
    tol = config.HURWITZ_TOL if tol is None else tol
    margins = verify_cqlf(P, A0, A_tilde)
    return max(margins) < -tol and float(np.linalg.eigvalsh(_sym(np.asarray(P)))[0]) > tol


def search_cqlf(
    A0,
    A_tilde,
    eps: float | None = None,
    max_iter: int | None = None,
    solver: str | None = None,
) -> np.ndarray:
    """
    Common Lyapunov matrix for a fixed pair: minimizes t subject to
    P A0 + A0^T P <= t I, P A_tilde + A_tilde^T P <= t I and I <= P <= bound I.

    Raises:
        LmiInfeasible: if no P with t* < -eps is found or the result fails is_cqlf.
    """
    A0 = np.asarray(A0, dtype=float)
    A_tilde = np.asarray(A_tilde, dtype=float)
    n = A0.shape[0]
    eps = config.LMI_EPS_FACTOR * max(np.linalg.norm(A0, 2), 1.0) if eps is None else eps
    max_iter = config.LMI_MAX_ITER if max_iter is None else max_iter
    solver = config.LMI_SOLVER if solver is None else solver

    P = cp.Variable((n, n), symmetric=True)
    t = cp.Variable()
    I = np.eye(n)
    L0 = P @ A0 + A0.T @ P
    L1 = P @ A_tilde + A_tilde.T @ P
    constraints = [
        0.5 * (L0 + L0.T) << t * I,
        0.5 * (L1 + L1.T) << t * I,
        P >> I,
        P << config.LMI_Q_BOUND * I,
    ]
    problem = cp.Problem(cp.Minimize(t), constraints)
    status = _solve(problem, solver, max_iter)
    if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or P.value is None:
        raise LmiInfeasible(f"CQLF search failed (status {status})", status=status)
    t_star = float(t.value)
    Pv = _sym(P.value)
    if t_star >= -eps or not is_cqlf(Pv, A0, A_tilde):
        raise LmiInfeasible(f"no CQLF certified (t* = {t_star:.3g})", status=status, t_star=t_star)
    logger.debug(f"CQLF found: t* = {t_star:.4g}, margins {verify_cqlf(Pv, A0, A_tilde)}")
    return Pv


def cqlf_singularity_gamma(fd: FilterData) -> float | None:
    """
    The unique gamma with A0 + gamma A_tilde singular, theta_sq / (alpha xi);
    None when xi = 0 (no such gamma). A CQLF needs gamma < 0 or None.
    """
    xi, xi_scale = compute_xi(fd)
    if abs(xi) <= config.XI_TOL * xi_scale:
        return None
    return fd.theta_sq / (fd.alpha * xi)


def lqr_gain(A, B, Q, R) -> np.ndarray:
    """K = R^-1 B^T X with X the stabilizing solution of the continuous-time Riccati equation."""
    A, B = np.asarray(A, dtype=float), np.atleast_2d(np.asarray(B, dtype=float))
    Q, R = np.atleast_2d(np.asarray(Q, dtype=float)), np.atleast_2d(np.asarray(R, dtype=float))
    try:
        X = scipy.linalg.solve_continuous_are(A, B, Q, R)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise NotStabilizable(f"Riccati equation has no stabilizing solution: {e}") from e
    return scipy.linalg.solve(R, B.T @ X, assume_a="pos")


def pole_placement_gain(A, B, poles) -> np.ndarray:
    """K with eig(A - B K) = poles."""
    try:
        result = scipy.signal.place_poles(np.asarray(A, dtype=float), np.asarray(B, dtype=float), np.asarray(poles))
    except ValueError as e:
        raise NotStabilizable(f"pole placement failed: {e}") from e
    return result.gain_matrix
