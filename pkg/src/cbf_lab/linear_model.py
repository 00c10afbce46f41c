"""Plant, affine constraint and filter parameters, plus the HOCBF chain built from them."""
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import config

logger = logging.getLogger(__name__)


class CbfLabError(Exception):
    """Base class for every error raised by cbf_lab."""


class DimensionMismatch(CbfLabError):
    pass


class NoRelativeDegree(CbfLabError):
    pass


class NotStabilizable(CbfLabError):
    pass


class InvalidConstraint(CbfLabError):
    pass


class InvalidFilterConfig(CbfLabError):
    pass


def _frozen_array(value, name: str, ndim: int, vector_as: str = "column") -> np.ndarray:
    arr = np.array(value, dtype=float)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(-1, 1) if vector_as == "column" else arr.reshape(1, -1)
    if arr.ndim != ndim:
        raise DimensionMismatch(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DimensionMismatch(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def spectral_abscissa(M: np.ndarray) -> float:
    return float(np.max(np.linalg.eigvals(M).real))


def is_hurwitz(M: np.ndarray, tol: float | None = None) -> bool:
    """True when every eigenvalue of M has real part below -tol * ||M||."""
    tol = config.HURWITZ_TOL if tol is None else tol
    return spectral_abscissa(M) < -tol * np.linalg.norm(M, 2)


def pbh_uncontrollable_modes(A: np.ndarray, B: np.ndarray, tol: float | None = None) -> list[complex]:
    """Eigenvalues of A at which [A - lambda I, B] loses row rank."""
    tol = config.STABILIZABILITY_TOL if tol is None else tol
    n = A.shape[0]
    modes = []
    for lam in scipy.linalg.eigvals(A):
        pencil = np.hstack([A - lam * np.eye(n), B.astype(complex)])
        sv = np.linalg.svd(pencil, compute_uv=False)
        if sv[-1] <= tol * sv[0]:
            logger.debug(f"PBH rank drop at eigenvalue {lam:.6g} (smallest singular value {sv[-1]:.3g})")
            modes.append(complex(lam))
    return modes


def is_stabilizable(A: np.ndarray, B: np.ndarray, tol: float | None = None) -> bool:
    """Every uncontrollable mode of (A, B) must have negative real part."""
    return all(lam.real < 0 for lam in pbh_uncontrollable_modes(A, B, tol))


@dataclass(frozen=True)
class Plant:
    """Linear plant x' = A x + B u."""
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = _frozen_array(self.A, "A", 2)
        B = _frozen_array(self.B, "B", 2)
        if A.shape[0] < 1 or A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"A must be square n x n with n >= 1, got {A.shape}")
        if B.shape[0] != A.shape[0] or B.shape[1] < 1:
            raise DimensionMismatch(f"B must be {A.shape[0]} x m with m >= 1, got {B.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        unstable = [lam for lam in pbh_uncontrollable_modes(A, B) if lam.real >= 0]
        if unstable:
            raise NotStabilizable(f"(A, B) has uncontrollable modes with nonnegative real part: {unstable}")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class Constraint:
    """Affine safe set {x : c^T x + d >= 0} with its relative degree r."""
    c: np.ndarray
    d: float
    r: int

    def __post_init__(self):
        c = _frozen_array(self.c, "c", 1)
        if np.linalg.norm(c) == 0:
            raise InvalidConstraint("c must be nonzero")
        if not self.d > 0:
            raise InvalidConstraint(f"d must be positive (origin strictly safe), got {self.d}")
        if not 1 <= self.r <= c.shape[0]:
            raise InvalidConstraint(f"relative degree {self.r} outside [1, {c.shape[0]}]")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "d", float(self.d))
        object.__setattr__(self, "r", int(self.r))


@dataclass(frozen=True)
class FilterConfig:
    """Nominal gain k(x) = -K x, QP weight G and class-K slopes alpha_1..alpha_r."""
    K: np.ndarray
    G: np.ndarray
    alphas: tuple[float, ...]

    def __post_init__(self):
        K = _frozen_array(self.K, "K", 2, vector_as="row")
        G = _frozen_array(np.atleast_2d(self.G), "G", 2)
        alphas = tuple(float(a) for a in np.atleast_1d(self.alphas))
        if G.shape != (K.shape[0], K.shape[0]):
            raise DimensionMismatch(f"G must be {K.shape[0]} x {K.shape[0]}, got {G.shape}")
        if not np.allclose(G, G.T, rtol=1e-12, atol=1e-12 * np.abs(G).max()):
            raise InvalidFilterConfig("G must be symmetric")
        try:
            np.linalg.cholesky(G)
        except np.linalg.LinAlgError:
            raise InvalidFilterConfig("G must be positive definite")
        if not alphas or any(not a > 0 for a in alphas):
            raise InvalidFilterConfig(f"every alpha must be positive, got {alphas}")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "alphas", alphas)

    @property
    def alpha(self) -> float:
        return float(np.prod(self.alphas))


@dataclass(frozen=True)
class HocbfChain:
    """
    h_i(x) = chain_rows[i] @ x + chain_offsets[i] for i = 0..r-1, with
    chain_rows[i] = c^T phi_i(A) and phi_i(s) = prod_{j <= i} (s + alpha_j).

    phi_coeffs holds the monic coefficients of phi = phi_r, highest degree
    first (numpy.poly convention); the last entry is alpha = prod(alphas).
    terminal_row is c^T phi(A).
    """
    phi_coeffs: np.ndarray
    chain_rows: np.ndarray
    chain_offsets: np.ndarray
    terminal_row: np.ndarray
    alphas: tuple[float, ...] = field(default=())

    @property
    def r(self) -> int:
        return self.chain_rows.shape[0]

    @property
    def alpha(self) -> float:
        return float(self.phi_coeffs[-1])

    @property
    def last_row(self) -> np.ndarray:
        """c^T phi_{r-1}(A), the left eigenvector of A_tilde for -alpha_r."""
        return self.chain_rows[-1]


def compute_relative_degree(plant: Plant, c, tol: float | None = None) -> int:
    """
    Smallest r with ||c^T A^(r-1) B|| > tol * ||c|| ||A||^(r-1) ||B||.

    Raises:
        NoRelativeDegree: if no r <= n passes the test.
    """
    tol = config.RELATIVE_DEGREE_TOL if tol is None else tol
    c = np.asarray(c, dtype=float)
    if c.shape != (plant.n,):
        raise DimensionMismatch(f"c must have length {plant.n}, got shape {c.shape}")
    norm_A = np.linalg.norm(plant.A, 2)
    norm_B = np.linalg.norm(plant.B, 2)
    row = c.copy()
    for r in range(1, plant.n + 1):
        scale = np.linalg.norm(c) * norm_A ** (r - 1) * norm_B
        value = np.linalg.norm(row @ plant.B)
        if value > tol * scale:
            logger.debug(f"Relative degree {r}: |c^T A^{r - 1} B| = {value:.3g}, scale {scale:.3g}")
            return r
        row = row @ plant.A
    raise NoRelativeDegree(f"c^T A^i B vanishes (relative tol {tol:g}) for every i < n = {plant.n}")


def build_constraint(plant: Plant, c, d: float, tol: float | None = None) -> Constraint:
    c = np.asarray(c, dtype=float)
    if c.shape != (plant.n,):
        raise DimensionMismatch(f"c must have length {plant.n}, got shape {c.shape}")
    if np.linalg.norm(c) == 0:
        raise InvalidConstraint("c must be nonzero")
    return Constraint(c=c, d=d, r=compute_relative_degree(plant, c, tol))


def make_filter_config(
    plant: Plant,
    constraint: Constraint,
    K,
    G=None,
    alphas=None,
    tol: float | None = None,
) -> FilterConfig:
    """
    Applies the defaults G = I and alphas = (1, ..., 1) and validates the
    configuration against the plant and constraint.
    """
    if G is None:
        G = np.eye(plant.m)
    if alphas is None:
        alphas = [config.DEFAULT_ALPHA] * constraint.r
    cfg = FilterConfig(K=K, G=G, alphas=alphas)
    check_compatible(plant, constraint, cfg, tol)
    return cfg


def check_compatible(plant: Plant, constraint: Constraint, cfg: FilterConfig, tol: float | None = None) -> None:
    """Dimension checks plus the Hurwitz requirement on A0 = A - B K."""
    if constraint.c.shape != (plant.n,):
        raise DimensionMismatch(f"c has length {constraint.c.shape[0]}, plant has n = {plant.n}")
    if cfg.K.shape != (plant.m, plant.n):
        raise DimensionMismatch(f"K must be {plant.m} x {plant.n}, got {cfg.K.shape}")
    if len(cfg.alphas) != constraint.r:
        raise InvalidFilterConfig(f"expected {constraint.r} alphas (relative degree), got {len(cfg.alphas)}")
    A0 = plant.A - plant.B @ cfg.K
    if not is_hurwitz(A0, tol):
        raise InvalidFilterConfig(f"A0 = A - B K is not Hurwitz (spectral abscissa {spectral_abscissa(A0):.6g})")


def build_hocbf_chain(plant: Plant, constraint: Constraint, alphas) -> HocbfChain:
    """
    Expands phi_i(A) by the recursion row_i = row_{i-1} (A + alpha_i I), so
    h_i = dh_{i-1}/dt + alpha_i h_{i-1} holds exactly wherever c^T A^j B = 0.
    """
    alphas = tuple(float(a) for a in np.atleast_1d(alphas))
    if len(alphas) != constraint.r:
        raise DimensionMismatch(f"expected {constraint.r} alphas, got {len(alphas)}")
    if any(not a > 0 for a in alphas):
        raise InvalidFilterConfig(f"every alpha must be positive, got {alphas}")
    if constraint.c.shape != (plant.n,):
        raise DimensionMismatch(f"c has length {constraint.c.shape[0]}, plant has n = {plant.n}")

    n = plant.n
    rows = [constraint.c.copy()]
    offsets = [constraint.d]
    for a in alphas:
        rows.append(rows[-1] @ (plant.A + a * np.eye(n)))
        offsets.append(offsets[-1] * a)
    chain_rows = np.array(rows[:-1])
    chain_offsets = np.array(offsets[:-1])
    terminal_row = rows[-1]
    phi_coeffs = np.poly(-np.array(alphas)).real
    for arr in (chain_rows, chain_offsets, terminal_row, phi_coeffs):
        arr.setflags(write=False)
    return HocbfChain(
        phi_coeffs=phi_coeffs,
        chain_rows=chain_rows,
        chain_offsets=chain_offsets,
        terminal_row=terminal_row,
        alphas=alphas,
    )


def evaluate_chain(chain: HocbfChain, x) -> np.ndarray:
    """h_0(x)..h_{r-1}(x); accepts a single state or an N x n batch."""
    x = np.asarray(x, dtype=float)
    n = chain.chain_rows.shape[1]
    if x.shape[-1] != n or x.ndim > 2:
        raise DimensionMismatch(f"state must have trailing dimension {n}, got shape {x.shape}")
    return x @ chain.chain_rows.T + chain.chain_offsets

