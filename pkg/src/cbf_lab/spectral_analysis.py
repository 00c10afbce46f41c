"""
Eigenstructure of the filtered-mode matrix A_tilde, the equilibria it induces,
and the resulting verdict on the closed loop (GES, Unbounded, Indeterminate).

The spectrum of A_tilde splits into three multisets:
  designed   the values -alpha_i, fixed by the class-K slopes
  inherited  eigenvalues of A0 that survive the rank-one update
  residual   roots of c^T (s I - A0)^-1 b_g = 0, i.e. the invariant zeros of
             the SISO system (A0, b_g, c^T) that are not eigenvalues of A0
"""
import enum
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import scipy.linalg

from . import config
from .filter_core import FilterData
from .linear_model import CbfLabError, HocbfChain

logger = logging.getLogger(__name__)

_EPS = np.finfo(float).eps


class EigenSolverFailure(CbfLabError):
    pass


class SingularSolve(CbfLabError):
    pass


class NearSingular(CbfLabError):
    pass


class PencilSolverFailure(CbfLabError):
    pass


class NoPositiveRealEigenvalue(CbfLabError):
    pass


class RayNotCertified(CbfLabError):
    pass


class Verdict(enum.Enum):
    GES = "GES"
    UNBOUNDED = "Unbounded"
    INDETERMINATE = "Indeterminate"


class CountKind(enum.Enum):
    ORIGIN_ONLY = "OriginOnly"
    ORIGIN_PLUS_POINT = "OriginPlusPoint"
    INFINITE = "Infinite"


class Parity(enum.Enum):
    EVEN = "even"
    ODD = "odd"


def _complex_list(values) -> list[list[float]]:
    return [[float(np.real(z)), float(np.imag(z))] for z in values]


def _vector_or_none(v):
    return None if v is None else np.asarray(v).tolist()


@dataclass(frozen=True)
class EigenReport:
    eigenvalues: np.ndarray
    designed: np.ndarray
    inherited: np.ndarray
    residual: np.ndarray
    left_eigvec_check: float
    zero_residuals: np.ndarray
    a_tilde_norm: float
    match_tol: float

    @property
    def non_designed(self) -> np.ndarray:
        return np.concatenate([self.inherited, self.residual])

    def to_dict(self) -> dict:
        return {
            "eigenvalues": _complex_list(self.eigenvalues),
            "designed": _complex_list(self.designed),
            "inherited": _complex_list(self.inherited),
            "residual": _complex_list(self.residual),
            "left_eigvec_check": self.left_eigvec_check,
            "zero_residuals": [float(v) for v in self.zero_residuals],
        }


@dataclass(frozen=True)
class AffineSolutionSet:
    """
    {particular + null_basis @ z} solving A_tilde x = -b_tilde; the undesired
    equilibria are its points with eta_particular + eta_gradient @ z < 0.
    """
    particular: np.ndarray
    null_basis: np.ndarray
    eta_particular: float
    eta_gradient: np.ndarray

    def to_dict(self) -> dict:
        return {
            "particular": self.particular.tolist(),
            "null_basis": self.null_basis.T.tolist(),
            "eta_particular": self.eta_particular,
            "eta_gradient": self.eta_gradient.tolist(),
        }


@dataclass(frozen=True)
class EquilibriaReport:
    xi: float
    count_kind: CountKind
    undesired_point: np.ndarray | None = None
    eta_at_point: float | None = None
    chain_value_at_point: float | None = None
    candidate_point: np.ndarray | None = None
    candidate_eta: float | None = None
    degenerate_set: AffineSolutionSet | None = None
    degenerate: bool = False
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "xi": self.xi,
            "count_kind": self.count_kind.value,
            "undesired_point": _vector_or_none(self.undesired_point),
            "eta_at_point": self.eta_at_point,
            "chain_value_at_point": self.chain_value_at_point,
            "candidate_point": _vector_or_none(self.candidate_point),
            "candidate_eta": self.candidate_eta,
            "degenerate_set": None if self.degenerate_set is None else self.degenerate_set.to_dict(),
            "degenerate": self.degenerate,
            "note": self.note,
        }


@dataclass(frozen=True)
class ClassificationReport:
    verdict: Verdict
    eigen: EigenReport
    equilibria: EquilibriaReport
    invariant_zeros: np.ndarray
    parity_positive_real: Parity | None
    spectral_abscissa: float
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "spectral_abscissa": self.spectral_abscissa,
            "parity_positive_real": None if self.parity_positive_real is None else self.parity_positive_real.value,
            "invariant_zeros": _complex_list(self.invariant_zeros),
            "eigen": self.eigen.to_dict(),
            "equilibria": self.equilibria.to_dict(),
            "notes": list(self.notes),
        }


@dataclass(frozen=True)
class DivergenceRay:
    """
    The curves base +/- exp(eigenvalue t) eigenvector. Both lie on the boundary
    of C_{r-1}; the one with sign entering_sign ends up in R- and is a
    trajectory of the filtered mode from then on.
    """
    base: np.ndarray
    eigenvalue: float
    eigenvector: np.ndarray
    entering_sign: int
    base_eta: float
    eta_slope: float          # v2 @ (entering_sign * eigenvector), negative
    left_check: float         # |c^T phi_{r-1}(A) v| / ||c^T phi_{r-1}(A)||

    def curve(self, t, sign: int = 1, scale: float = 1.0) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return self.base + sign * scale * np.multiply.outer(np.exp(self.eigenvalue * t), self.eigenvector)

    def launch_point(self, scale: float) -> np.ndarray:
        """
        A point on the entering ray at distance >= scale from base and strictly inside R-.

        Raises:
            RayNotCertified: if base lies in R+ and the ray does not decrease eta.
        """
        needed = 0.0
        if self.base_eta >= 0:
            if not (np.isfinite(self.eta_slope) and self.eta_slope < 0):
                raise RayNotCertified(f"eta slope {self.eta_slope:.3g} along the ray is not negative; the ray never enters R-")
            needed = 2.0 * self.base_eta / -self.eta_slope
        return self.base + self.entering_sign * max(scale, needed) * self.eigenvector

    def to_dict(self) -> dict:
        return {
            "base": self.base.tolist(),
            "eigenvalue": self.eigenvalue,
            "eigenvector": self.eigenvector.tolist(),
            "entering_sign": self.entering_sign,
            "base_eta": self.base_eta,
            "eta_slope": self.eta_slope,
            "left_check": self.left_check,
        }


def _match_tolerance(base: float, norm: float, multiplicity: int) -> float:
    # a k-fold eigenvalue moves by O(eps^(1/k)) under rounding
    return max(base, 10.0 * (_EPS * (1.0 + norm)) ** (1.0 / multiplicity))


def _take_nearest(pool: list[int], values: np.ndarray, target: complex) -> tuple[int, float]:
    distances = [abs(values[i] - target) for i in pool]
    k = int(np.argmin(distances))
    return pool[k], float(distances[k])


def analyze_eigenstructure(fd: FilterData, chain: HocbfChain | None = None, tol: float | None = None) -> EigenReport:
    """
    Splits spec(A_tilde) into designed, inherited and residual parts by greedy
    nearest-neighbor matching, and checks the left eigenvector of -alpha_r.

    Raises:
        EigenSolverFailure: if LAPACK does not converge.
    """
    chain = fd.chain if chain is None else chain
    try:
        eigs = scipy.linalg.eigvals(fd.A_tilde)
        a0_eigs = scipy.linalg.eigvals(fd.A0)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise EigenSolverFailure(f"eigenvalue computation failed: {e}") from e
    if not np.all(np.isfinite(eigs)):
        raise EigenSolverFailure("eigenvalue computation returned non-finite values")

    norm = float(np.linalg.norm(fd.A_tilde, 2))
    base = (config.EIG_MATCH_TOL if tol is None else tol) * (1.0 + norm)
    alphas = np.array(chain.alphas)
    pool = list(range(len(eigs)))

    designed_idx = []
    for a in np.sort(alphas):
        multiplicity = int(np.sum(np.abs(alphas - a) <= base))
        i, dist = _take_nearest(pool, eigs, -a)
        if dist > _match_tolerance(base, norm, multiplicity):
            logger.warning(f"Designed eigenvalue {-a:.6g} matched at distance {dist:.3g} (beyond tolerance)")
        designed_idx.append(i)
        pool.remove(i)

    inherited_idx = []
    for lam in a0_eigs:
        if not pool:
            break
        i, dist = _take_nearest(pool, eigs, lam)
        if dist <= base:
            inherited_idx.append(i)
            pool.remove(i)

    residual = eigs[pool]
    row = chain.last_row
    left_check = float(
        np.linalg.norm(row @ fd.A_tilde + chain.alphas[-1] * row) / (np.linalg.norm(row) * (1.0 + norm))
    )

    c = fd.constraint.c
    zero_res = []
    for lam in residual:
        w = np.linalg.solve(lam * np.eye(fd.n) - fd.A0, fd.b_g.astype(complex))
        zero_res.append(abs(c @ w) / (np.linalg.norm(c) * np.linalg.norm(w)))
    zero_res = np.array(zero_res)
    if zero_res.size and zero_res.max() > config.ZERO_RESIDUAL_TOL:
        logger.warning(f"Residual eigenvalue fails the zero condition (normalized residual {zero_res.max():.3g})")

    logger.debug(
        f"spec(A_tilde) = {np.round(eigs, 6)}; designed {len(designed_idx)}, "
        f"inherited {len(inherited_idx)}, residual {len(residual)}"
    )
    return EigenReport(
        eigenvalues=eigs,
        designed=eigs[designed_idx],
        inherited=eigs[inherited_idx],
        residual=residual,
        left_eigvec_check=left_check,
        zero_residuals=zero_res,
        a_tilde_norm=norm,
        match_tol=base,
    )


def compute_xi(fd: FilterData) -> tuple[float, float]:
    """xi = c^T A0^-1 b_g and the scale ||c|| ||A0^-1 b_g|| it is compared against."""
    w = np.linalg.solve(fd.A0, fd.b_g)
    c = fd.constraint.c
    return float(c @ w), float(np.linalg.norm(c) * np.linalg.norm(w))


def classify_equilibria(fd: FilterData, tol: float | None = None) -> EquilibriaReport:
    """
    Counts the equilibria of the closed loop from the sign of xi.

    xi < 0: the origin is the only equilibrium. xi > 0: one more equilibrium
    p = -A_tilde^-1 b_tilde with eta(p) < 0. xi = 0: A_tilde is singular and
    the solutions of A_tilde x = -b_tilde in R-, if any, form an affine set.

    Raises:
        SingularSolve: if A_tilde is numerically singular while |xi| is not small.
    """
    tol = config.XI_TOL if tol is None else tol
    xi, xi_scale = compute_xi(fd)
    d, theta_sq = fd.constraint.d, fd.theta_sq
    sv = np.linalg.svd(fd.A_tilde, compute_uv=False)

    if abs(xi) > tol * xi_scale:
        if sv[-1] <= 1e3 * _EPS * sv[0]:
            raise SingularSolve(f"A_tilde is singular (sigma_min/sigma_max = {sv[-1] / sv[0]:.3g}) but xi = {xi:.3g}")
        p = -np.linalg.solve(fd.A_tilde, fd.b_tilde)
        eta_p = float(fd.eta(p))
        identity = abs(eta_p * xi + d * theta_sq) / (d * theta_sq)
        if identity > 1e-6:
            logger.warning(f"eta(p) * xi + d theta_sq = {eta_p * xi + d * theta_sq:.3g} (relative {identity:.3g})")
        if xi < 0:
            logger.info(f"xi = {xi:.6g} < 0: origin is the only equilibrium")
            return EquilibriaReport(xi=xi, count_kind=CountKind.ORIGIN_ONLY, candidate_point=p, candidate_eta=eta_p)
        logger.info(f"xi = {xi:.6g} > 0: undesired equilibrium at {np.round(p, 6)} (eta = {eta_p:.6g})")
        return EquilibriaReport(
            xi=xi,
            count_kind=CountKind.ORIGIN_PLUS_POINT,
            undesired_point=p,
            eta_at_point=eta_p,
            chain_value_at_point=float(fd.chain.last_row @ p + fd.chain.chain_offsets[-1]),
            candidate_point=p,
            candidate_eta=eta_p,
        )

    logger.warning(f"xi = {xi:.3g} is numerically zero; A_tilde is (nearly) singular")
    null_basis = scipy.linalg.null_space(fd.A_tilde, rcond=tol)
    if null_basis.shape[1] == 0:
        p = -np.linalg.solve(fd.A_tilde, fd.b_tilde)
        eta_p = float(fd.eta(p))
        kind = CountKind.ORIGIN_PLUS_POINT if eta_p < 0 else CountKind.ORIGIN_ONLY
        return EquilibriaReport(
            xi=xi,
            count_kind=kind,
            undesired_point=p if eta_p < 0 else None,
            eta_at_point=eta_p if eta_p < 0 else None,
            candidate_point=p,
            candidate_eta=eta_p,
            degenerate=True,
            note="xi below tolerance but A_tilde numerically invertible; verdict taken from eta(p)",
        )

    p, *_ = np.linalg.lstsq(fd.A_tilde, -fd.b_tilde, rcond=None)
    mismatch = np.linalg.norm(fd.A_tilde @ p + fd.b_tilde)
    consistent = mismatch <= 1e-8 * (sv[0] * np.linalg.norm(p) + np.linalg.norm(fd.b_tilde))
    if not consistent:
        return EquilibriaReport(
            xi=xi,
            count_kind=CountKind.ORIGIN_ONLY,
            degenerate=True,
            note="A_tilde singular and A_tilde x = -b_tilde has no solution",
        )

    solution_set = AffineSolutionSet(
        particular=p,
        null_basis=null_basis,
        eta_particular=float(fd.eta(p)),
        eta_gradient=fd.v2 @ null_basis,
    )
    reaches_r_minus = np.linalg.norm(solution_set.eta_gradient) > tol * np.linalg.norm(fd.v2)
    if not reaches_r_minus and solution_set.eta_particular >= 0:
        return EquilibriaReport(
            xi=xi,
            count_kind=CountKind.ORIGIN_ONLY,
            degenerate=True,
            degenerate_set=solution_set,
            note="solution set of A_tilde x = -b_tilde lies in R+",
        )
    return EquilibriaReport(
        xi=xi,
        count_kind=CountKind.INFINITE,
        degenerate=True,
        degenerate_set=solution_set,
        note="xi = 0: a continuum of undesired equilibria",
    )


def _positive_real_mask(eigs: np.ndarray, norm: float, tol: float) -> np.ndarray:
    return (eigs.real > tol * norm) & (np.abs(eigs.imag) <= tol * (1.0 + np.abs(eigs)))


def parity_check(report: EigenReport, tol: float | None = None) -> Parity:
    """
    Parity of the number of real positive eigenvalues of A_tilde; even means
    the origin is the only equilibrium.

    Raises:
        NearSingular: if some eigenvalue is within tolerance of zero.
    """
    tol = config.POSITIVE_REAL_TOL if tol is None else tol
    eigs, norm = report.eigenvalues, report.a_tilde_norm
    if np.any(np.abs(eigs) <= tol * norm):
        raise NearSingular("A_tilde has an eigenvalue at zero; parity is undefined")
    count = int(np.sum(_positive_real_mask(eigs, norm, tol)))
    return Parity.EVEN if count % 2 == 0 else Parity.ODD


def invariant_zeros(fd: FilterData) -> np.ndarray:
    """
    Finite invariant zeros of (A0, b_g, c^T) from the Rosenbrock pencil
    [[A0, b], [c^T, 0]] - s diag(I, 0).

    The system has relative degree r, so exactly n - r zeros are finite; the
    remaining generalized eigenvalues sit at infinity and come back from QZ
    either with beta = 0 or with very large magnitude.

    Raises:
        PencilSolverFailure: if QZ fails or returns fewer than n - r finite values.
    """
    n, r = fd.n, fd.r
    expected = n - r
    if expected == 0:
        return np.array([], dtype=complex)
    b = fd.b_g / np.linalg.norm(fd.b_g)
    c = fd.constraint.c / np.linalg.norm(fd.constraint.c)
    L = np.block([[fd.A0, b[:, None]], [c[None, :], np.zeros((1, 1))]])
    M = scipy.linalg.block_diag(np.eye(n), np.zeros((1, 1)))
    try:
        alpha, beta = scipy.linalg.eigvals(L, M, homogeneous_eigvals=True)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise PencilSolverFailure(f"QZ failed on the system pencil: {e}") from e

    finite = (beta != 0) & np.isfinite(alpha)
    values = alpha[finite] / beta[finite]
    values = values[np.isfinite(values)]
    if values.size < expected:
        raise PencilSolverFailure(f"expected {expected} finite zeros, pencil returned {values.size}")
    zeros = values[np.argsort(np.abs(values))][:expected]
    return np.sort_complex(zeros)


def spectral_abscissa_of(report: EigenReport) -> float:
    return float(np.max(report.eigenvalues.real))


def classify(fd: FilterData, chain: HocbfChain | None = None, tol: float | None = None) -> ClassificationReport:
    """
    GES if A_tilde is Hurwitz; Unbounded if it has a real positive eigenvalue
    and xi != 0; Indeterminate otherwise.
    """
    tol = config.POSITIVE_REAL_TOL if tol is None else tol
    chain = fd.chain if chain is None else chain
    notes = []

    eigen = analyze_eigenstructure(fd, chain)
    equilibria = classify_equilibria(fd)
    zeros = invariant_zeros(fd)
    if eigen.zero_residuals.size and eigen.zero_residuals.max() > config.ZERO_RESIDUAL_TOL:
        notes.append(
            f"residual eigenvalue fails the zero condition (normalized residual {eigen.zero_residuals.max():.3g})"
        )
    try:
        parity = parity_check(eigen, tol)
    except NearSingular as e:
        parity = None
        notes.append(str(e))

    if parity is not None and not equilibria.degenerate:
        if (parity is Parity.EVEN) != (equilibria.count_kind is CountKind.ORIGIN_ONLY):
            logger.warning(f"Parity {parity.value} disagrees with xi = {equilibria.xi:.3g}")
            notes.append("parity of positive real eigenvalues disagrees with the sign of xi")

    abscissa = spectral_abscissa_of(eigen)
    has_positive_real = bool(np.any(_positive_real_mask(eigen.eigenvalues, eigen.a_tilde_norm, tol)))
    if abscissa < -tol * eigen.a_tilde_norm:
        verdict = Verdict.GES
    elif has_positive_real and not equilibria.degenerate:
        verdict = Verdict.UNBOUNDED
    else:
        verdict = Verdict.INDETERMINATE
        if has_positive_real:
            notes.append("xi = 0: Indeterminate despite a positive real eigenvalue (no base point for the ray)")
        else:
            notes.append("spectrum has zero-real-part or only complex unstable eigenvalues; simulation evidence is non-certifying")

    logger.info(f"Verdict {verdict.value}: spectral abscissa {abscissa:.6g}, xi {equilibria.xi:.6g}")
    return ClassificationReport(
        verdict=verdict,
        eigen=eigen,
        equilibria=equilibria,
        invariant_zeros=zeros,
        parity_positive_real=parity,
        spectral_abscissa=abscissa,
        notes=notes,
    )


def divergence_ray(
    fd: FilterData,
    report: ClassificationReport,
    tol: float | None = None,
    cert_tol: float | None = None,
) -> DivergenceRay:
    """
    Eigenvector ray of the largest real positive eigenvalue of A_tilde through
    p = -A_tilde^-1 b_tilde.

    Raises:
        NoPositiveRealEigenvalue: if A_tilde has no real positive eigenvalue.
        SingularSolve: if xi = 0, so the base point is undefined.
        RayNotCertified: if v is not in the kernel of c^T phi_{r-1}(A) or is
            (nearly) parallel to the switching surface.
    """
    tol = config.POSITIVE_REAL_TOL if tol is None else tol
    cert_tol = config.RAY_CERTIFICATE_TOL if cert_tol is None else cert_tol
    eigs = report.eigen.eigenvalues
    mask = _positive_real_mask(eigs, report.eigen.a_tilde_norm, tol)
    if not np.any(mask):
        raise NoPositiveRealEigenvalue("A_tilde has no real positive eigenvalue")
    base = report.equilibria.candidate_point
    if base is None:
        raise SingularSolve("A_tilde is singular (xi = 0); the ray has no base point")

    lam = float(np.max(eigs[mask].real))
    w, vr = scipy.linalg.eig(fd.A_tilde)
    k = int(np.argmin(np.abs(w - lam)))
    v = np.real(vr[:, k])
    v = v / np.linalg.norm(v)

    row = fd.chain.last_row
    left_check = float(abs(row @ v) / np.linalg.norm(row))
    if left_check > cert_tol:
        raise RayNotCertified(f"|c^T phi_(r-1)(A) v| = {left_check:.3g} exceeds {cert_tol:.3g}")
    slope = float(fd.v2 @ v)
    if abs(slope) <= cert_tol * np.linalg.norm(fd.v2):
        raise RayNotCertified(f"ray direction is parallel to the switching surface (v2 . v = {slope:.3g})")
    sign = -1 if slope > 0 else 1
    logger.info(f"Divergence ray: lambda = {lam:.6g}, base eta = {report.equilibria.candidate_eta:.6g}")
    return DivergenceRay(
        base=base,
        eigenvalue=lam,
        eigenvector=v,
        entering_sign=sign,
        base_eta=float(report.equilibria.candidate_eta),
        eta_slope=-abs(slope),
        left_check=left_check,
    )


def verdict_table(report: ClassificationReport) -> pd.DataFrame:
    """One row per eigenvalue of A_tilde, labelled designed/inherited/residual."""
    rows = []
    for label, values in (
        ("designed", report.eigen.designed),
        ("inherited", report.eigen.inherited),
        ("residual", report.eigen.residual),
    ):
        for z in values:
            rows.append({"class": label, "re": float(np.real(z)), "im": float(np.imag(z))})
    return pd.DataFrame(rows, columns=["class", "re", "im"])
