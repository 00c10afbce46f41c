"""
Closed-form CBF safety filter and the piecewise-affine closed loop it induces.

With a = B^T (A^T)^(r-1) c the filter solves

    min_u 1/2 ||u + K x||_G^2   s.t.   c^T phi(A) x + a^T u + alpha d >= 0

in closed form:

    u*(x) = -K x + max(0, -eta(x)) / theta_sq * G^-1 a

where eta(x) = v2^T x + alpha d is the constraint value at the nominal input
and theta_sq = a^T G^-1 a. Substituting u* into x' = A x + B u gives

    x' = A0 x                  if eta(x) >= 0
    x' = A_tilde x + b_tilde   otherwise
"""
import enum
import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import config
from .linear_model import (
    CbfLabError,
    Constraint,
    DimensionMismatch,
    FilterConfig,
    HocbfChain,
    Plant,
    build_hocbf_chain,
    check_compatible,
)

logger = logging.getLogger(__name__)


class ZeroThetaSq(CbfLabError):
    pass


class Mode(enum.Enum):
    NOMINAL = "nominal"
    FILTERED = "filtered"


@dataclass(frozen=True)
class SwitchingSurface:
    """eta(x) = normal @ x + offset; R+ = {eta >= 0}, R- = {eta < 0}."""
    normal: np.ndarray
    offset: float

    def eta(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.normal + self.offset


@dataclass(frozen=True)
class FilterData:
    theta_sq: float
    v1: np.ndarray
    v2: np.ndarray
    A0: np.ndarray
    A_tilde: np.ndarray
    b_tilde: np.ndarray
    alpha: float
    input_row: np.ndarray     # a = B^T (A^T)^(r-1) c
    g_inv_a: np.ndarray       # G^-1 a
    b_g: np.ndarray           # B G^-1 a, the SISO input vector of (A0, b_g, c^T)
    plant: Plant
    constraint: Constraint
    config: FilterConfig
    chain: HocbfChain

    @property
    def n(self) -> int:
        return self.plant.n

    @property
    def m(self) -> int:
        return self.plant.m

    @property
    def r(self) -> int:
        return self.constraint.r

    @property
    def surface(self) -> SwitchingSurface:
        return SwitchingSurface(normal=self.v2, offset=self.alpha * self.constraint.d)

    def eta(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.v2 + self.alpha * self.constraint.d

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "r": self.r,
            "theta_sq": self.theta_sq,
            "alpha": self.alpha,
            "phi_coeffs": self.chain.phi_coeffs.tolist(),
            "v1": self.v1.tolist(),
            "v2": self.v2.tolist(),
            "A0": self.A0.tolist(),
            "A_tilde": self.A_tilde.tolist(),
            "b_tilde": self.b_tilde.tolist(),
            "switching_surface": {"normal": self.v2.tolist(), "offset": self.alpha * self.constraint.d},
            "chain_rows": self.chain.chain_rows.tolist(),
            "chain_offsets": self.chain.chain_offsets.tolist(),
        }


def input_direction(plant: Plant, constraint: Constraint, G) -> tuple[np.ndarray, np.ndarray, float]:
    """
    a = B^T (A^T)^(r-1) c, G^-1 a and theta_sq = a^T G^-1 a.

    Raises:
        ZeroThetaSq: if theta_sq is not positive relative to its scale, which
            contradicts the stated relative degree.
    """
    A, B, r = plant.A, plant.B, constraint.r
    G = np.atleast_2d(np.asarray(G, dtype=float))
    a = constraint.c @ np.linalg.matrix_power(A, r - 1) @ B
    g_inv_a = scipy.linalg.solve(G, a, assume_a="pos")
    theta_sq = float(a @ g_inv_a)
    scale = (np.linalg.norm(constraint.c) * np.linalg.norm(A, 2) ** (r - 1) * np.linalg.norm(B, 2)) ** 2
    scale *= np.linalg.norm(np.linalg.inv(G), 2)
    if not theta_sq > config.THETA_SQ_TOL * scale:
        raise ZeroThetaSq(
            f"theta_sq = {theta_sq:.3g} is not positive (scale {scale:.3g}); "
            f"c^T A^{r - 1} B vanishes, so the relative degree {r} is inconsistent"
        )
    return a, g_inv_a, theta_sq


def build_filter_data(
    plant: Plant,
    constraint: Constraint,
    cfg: FilterConfig,
    tol: float | None = None,
) -> FilterData:
    """Derives theta_sq, v1, v2, A0, A_tilde and b_tilde."""
    check_compatible(plant, constraint, cfg, tol)
    chain = build_hocbf_chain(plant, constraint, cfg.alphas)
    A, B, r = plant.A, plant.B, constraint.r
    a, g_inv_a, theta_sq = input_direction(plant, constraint, cfg.G)

    b_g = B @ g_inv_a
    v1 = -b_g / theta_sq
    v2 = chain.terminal_row - a @ cfg.K
    A0 = A - B @ cfg.K
    A_tilde = A0 + np.outer(v1, v2)
    alpha = chain.alpha
    b_tilde = alpha * constraint.d * v1
    for arr in (v1, v2, A0, A_tilde, b_tilde, a, g_inv_a, b_g):
        arr.setflags(write=False)

    logger.debug(f"Filter built: n={plant.n}, m={plant.m}, r={r}, theta_sq={theta_sq:.6g}, alpha={alpha:.6g}")
    return FilterData(
        theta_sq=theta_sq,
        v1=v1,
        v2=v2,
        A0=A0,
        A_tilde=A_tilde,
        b_tilde=b_tilde,
        alpha=alpha,
        input_row=a,
        g_inv_a=g_inv_a,
        b_g=b_g,
        plant=plant,
        constraint=constraint,
        config=cfg,
        chain=chain,
    )


def _check_state(fd: FilterData, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim not in (1, 2) or x.shape[-1] != fd.n:
        raise DimensionMismatch(f"state must have trailing dimension {fd.n}, got shape {x.shape}")
    return x


def filtered_control(fd: FilterData, cfg: FilterConfig, x) -> np.ndarray:
    """
    u*(x) for a single state (returns an m-vector) or an N x n batch (N x m).
    Equals -K x exactly wherever eta(x) >= 0.
    """
    x = _check_state(fd, x)
    if cfg.K.shape != (fd.m, fd.n):
        raise DimensionMismatch(f"K must be {fd.m} x {fd.n}, got {cfg.K.shape}")
    nominal = -(x @ cfg.K.T)
    eta = fd.eta(x)
    active = eta < 0
    correction = np.multiply.outer(np.maximum(0.0, -eta) / fd.theta_sq, fd.g_inv_a)
    return np.where(np.expand_dims(active, -1), nominal + correction, nominal)


def hocbf_condition(fd: FilterData, x, u) -> np.ndarray:
    """Left side of the HOCBF inequality: c^T phi(A) x + a^T u + alpha d."""
    x = _check_state(fd, x)
    u = np.asarray(u, dtype=float)
    return x @ fd.chain.terminal_row + u @ fd.input_row + fd.alpha * fd.constraint.d


def hocbf_condition_scale(fd: FilterData, x, u) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    return (
        np.linalg.norm(fd.chain.terminal_row) * np.linalg.norm(x, axis=-1)
        + np.linalg.norm(fd.input_row) * np.linalg.norm(u, axis=-1)
        + fd.alpha * fd.constraint.d
    )


def closed_loop_field(fd: FilterData, x) -> tuple[np.ndarray, Mode]:
    """Piecewise-affine field at one state; eta(x) = 0 belongs to the nominal branch."""
    x = _check_state(fd, x)
    if x.ndim != 1:
        raise DimensionMismatch("closed_loop_field takes a single state; use closed_loop_field_batch")
    if fd.eta(x) >= 0:
        return fd.A0 @ x, Mode.NOMINAL
    return fd.A_tilde @ x + fd.b_tilde, Mode.FILTERED


def closed_loop_field_batch(fd: FilterData, X) -> tuple[np.ndarray, np.ndarray]:
    """
    Row-wise field for an N x n batch and the mask of rows in the filtered mode.

    Uses A_tilde x + b_tilde = A0 x + v1 eta(x), so both branches share the
    A0 x term and the field is continuous across eta = 0 in floating point too.
    """
    X = _check_state(fd, X)
    eta = fd.eta(X)
    active = eta < 0
    dX = X @ fd.A0.T + np.multiply.outer(np.minimum(eta, 0.0), fd.v1)
    return dX, active
