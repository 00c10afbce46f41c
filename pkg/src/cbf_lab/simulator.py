"""
Fixed-step RK4 integration of the filtered closed loop, optionally driven by a
piecewise-constant command through an affine term (integrator tracking).

Batches of initial states are integrated together as an N x n array; each row
retires on its own when it crosses the convergence or divergence radius.
"""
import enum
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import config
from .filter_core import FilterData, Mode, build_filter_data
from .linear_model import (
    CbfLabError,
    Constraint,
    DimensionMismatch,
    FilterConfig,
    HocbfChain,
    InvalidConstraint,
    Plant,
    evaluate_chain,
)

logger = logging.getLogger(__name__)


class NonFiniteState(CbfLabError):
    pass


class NotInSafeSet(CbfLabError):
    pass


class NotConverging(CbfLabError):
    pass


class Outcome(enum.Enum):
    CONVERGED = "Converged"
    DIVERGED = "Diverged"
    HORIZON_REACHED = "HorizonReached"


@dataclass(frozen=True)
class SimConfig:
    """
    Radii left as None scale with the start: divergence at
    DIVERGENCE_FACTOR (1 + ||x0||), convergence at CONVERGENCE_FACTOR (1 + ||x0||).
    With early_stop off, rows only retire on divergence.
    """
    step: float = config.SIM_STEP
    horizon: float = config.SIM_HORIZON
    divergence_radius: float | None = None
    convergence_radius: float | None = None
    early_stop: bool = True

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError(f"step must be positive, got {self.step}")
        if not self.horizon >= self.step:
            raise ValueError(f"horizon {self.horizon} must be at least one step ({self.step})")

    def radii(self, x0_norms: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        conv = (
            config.CONVERGENCE_FACTOR * (1.0 + x0_norms)
            if self.convergence_radius is None
            else np.full_like(x0_norms, self.convergence_radius)
        )
        div = (
            config.DIVERGENCE_FACTOR * (1.0 + x0_norms)
            if self.divergence_radius is None
            else np.full_like(x0_norms, self.divergence_radius)
        )
        return conv, div


@dataclass(frozen=True)
class CommandSchedule:
    """Piecewise-constant signal: value y_k from t_k until the next breakpoint, 0 before the first."""
    breakpoints: tuple[tuple[float, float], ...]

    def __post_init__(self):
        points = tuple((float(t), float(y)) for t, y in self.breakpoints)
        if any(b[0] <= a[0] for a, b in zip(points, points[1:])):
            raise ValueError("breakpoint times must be strictly increasing")
        object.__setattr__(self, "breakpoints", points)

    def value(self, t) -> np.ndarray:
        times = np.array([b[0] for b in self.breakpoints])
        values = np.concatenate([[0.0], [b[1] for b in self.breakpoints]])
        return values[np.searchsorted(times, t, side="right")]

    @classmethod
    def constant(cls, y: float) -> "CommandSchedule":
        return cls(((0.0, y),))


def default_doublet() -> CommandSchedule:
    return CommandSchedule(tuple(config.DOUBLET_SCHEDULE))


@dataclass(frozen=True)
class AffineExtension:
    """Exogenous term x' += -y_cmd(t) * injection."""
    command: CommandSchedule
    injection: np.ndarray
    kappa: float = config.TRACKING_KAPPA

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError(f"kappa must be nonnegative, got {self.kappa}")
        object.__setattr__(self, "injection", np.asarray(self.injection, dtype=float))

    def offset(self, t) -> np.ndarray:
        return -float(self.command.value(t)) * self.injection


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    filtered: np.ndarray           # True where eta(x) < 0
    chain_values: np.ndarray
    outcome: Outcome
    step: float
    crossings: list[float] = field(default_factory=list)
    nonfinite: bool = False

    @property
    def modes(self) -> list[Mode]:
        return [Mode.FILTERED if f else Mode.NOMINAL for f in self.filtered]

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)

    def to_frame(self) -> pd.DataFrame:
        n, r = self.states.shape[1], self.chain_values.shape[1]
        frame = pd.DataFrame(self.states, columns=[f"x{i + 1}" for i in range(n)])
        frame.insert(0, "t", self.times)
        frame["mode"] = np.where(self.filtered, Mode.FILTERED.value, Mode.NOMINAL.value)
        for i in range(r):
            frame[f"h{i}"] = self.chain_values[:, i]
        return frame


def validate_extension(fd: FilterData, ext: AffineExtension, tol: float | None = None) -> None:
    """The affine term must not reach the HOCBF chain: c^T A^i injection = 0 for i < r."""
    tol = config.RELATIVE_DEGREE_TOL if tol is None else tol
    if ext.injection.shape != (fd.n,):
        raise DimensionMismatch(f"injection must have length {fd.n}, got shape {ext.injection.shape}")
    row = fd.constraint.c
    scale = np.linalg.norm(row) * np.linalg.norm(ext.injection)
    norm_A = np.linalg.norm(fd.plant.A, 2)
    for i in range(fd.r):
        if abs(row @ ext.injection) > tol * scale * norm_A ** i:
            raise InvalidConstraint(f"c^T A^{i} injection != 0: the affine term enters the HOCBF condition")
        row = row @ fd.plant.A


def _field(fd: FilterData, X: np.ndarray, offset, filter_enabled: bool) -> np.ndarray:
    dX = X @ fd.A0.T
    if filter_enabled:
        eta = X @ fd.v2 + fd.alpha * fd.constraint.d
        dX += np.multiply.outer(np.minimum(eta, 0.0), fd.v1)
    if offset is not None:
        dX += offset
    return dX


def _rk4_step(fd: FilterData, X: np.ndarray, h, offset, filter_enabled: bool) -> np.ndarray:
    k1 = _field(fd, X, offset, filter_enabled)
    k2 = _field(fd, X + 0.5 * h * k1, offset, filter_enabled)
    k3 = _field(fd, X + 0.5 * h * k2, offset, filter_enabled)
    k4 = _field(fd, X + h * k3, offset, filter_enabled)
    return X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _refine_crossings(fd, X, started_filtered, h, offset, filter_enabled) -> np.ndarray:
    """Bisection on the sub-step length at which eta changes sign; returns offsets within the step."""
    lo = np.zeros(len(X))
    hi = np.ones(len(X))
    for _ in range(config.CROSSING_BISECTIONS):
        mid = 0.5 * (lo + hi)
        Xm = _rk4_step(fd, X, (mid * h)[:, None], offset, filter_enabled)
        switched = (fd.eta(Xm) < 0) != started_filtered
        hi = np.where(switched, mid, hi)
        lo = np.where(switched, lo, mid)
    return hi * h


def simulate_batch(
    fd: FilterData,
    chain: HocbfChain | None,
    X0,
    cfg: SimConfig | None = None,
    ext: AffineExtension | None = None,
    filter_enabled: bool = True,
) -> list[Trajectory]:
    """
    Integrates every row of X0 with classic RK4 at fixed step.

    With filter_enabled off the nominal loop x' = A0 x (+ offset) is integrated;
    modes are still recorded from the sign of eta for comparison.
    """
    cfg = SimConfig() if cfg is None else cfg
    chain = fd.chain if chain is None else chain
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    if X0.shape[1] != fd.n:
        raise DimensionMismatch(f"initial states must have {fd.n} columns, got shape {X0.shape}")
    if ext is not None:
        validate_extension(fd, ext)

    N, n = X0.shape
    h = cfg.step
    n_steps = int(np.ceil(cfg.horizon / h - 1e-9))
    chunk = max(1, int(config.SIM_CHUNK_BYTES // ((n_steps + 1) * n * 8)))
    if N > chunk:
        logger.debug(f"Splitting {N} starts into chunks of {chunk}")
        return [
            traj
            for lo in range(0, N, chunk)
            for traj in simulate_batch(fd, chain, X0[lo : lo + chunk], cfg, ext, filter_enabled)
        ]
    conv_r, div_r = cfg.radii(np.linalg.norm(X0, axis=1))

    buf = np.full((n_steps + 1, N, n), np.nan)
    buf[0] = X0
    last = np.full(N, n_steps)
    outcomes = [Outcome.HORIZON_REACHED] * N
    nonfinite = np.zeros(N, dtype=bool)
    crossings = [[] for _ in range(N)]

    alive = np.ones(N, dtype=bool)
    if cfg.early_stop:
        done = np.linalg.norm(X0, axis=1) < conv_r
        for i in np.flatnonzero(done):
            outcomes[i] = Outcome.CONVERGED
            last[i] = 0
        alive &= ~done
    idx = np.flatnonzero(alive)
    X = X0[idx].copy()

    logger.debug(f"Simulating {N} start(s): step {h:g}, horizon {cfg.horizon:g}, filter {'on' if filter_enabled else 'off'}")
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            if idx.size == 0:
                break
            t = k * h
            offset = None if ext is None else ext.offset(t + 0.5 * h)
            X_next = _rk4_step(fd, X, h, offset, filter_enabled)

            flip = (fd.eta(X) < 0) != (fd.eta(X_next) < 0)
            if flip.any():
                started = fd.eta(X[flip]) < 0
                when = t + _refine_crossings(fd, X[flip], started, h, offset, filter_enabled)
                for i, tc in zip(idx[flip], when):
                    crossings[i].append(float(tc))

            finite = np.all(np.isfinite(X_next), axis=1)
            norms = np.where(finite, np.linalg.norm(np.where(finite[:, None], X_next, 0.0), axis=1), np.inf)
            diverged = norms > div_r[idx]
            converged = ~diverged & (norms < conv_r[idx]) if cfg.early_stop else np.zeros_like(diverged)
            buf[k + 1, idx[finite]] = X_next[finite]

            retire = diverged | converged
            if retire.any():
                for j in np.flatnonzero(retire):
                    i = idx[j]
                    outcomes[i] = Outcome.DIVERGED if diverged[j] else Outcome.CONVERGED
                    last[i] = k + 1 if finite[j] else k
                    nonfinite[i] = not finite[j]
                keep = ~retire
                idx = idx[keep]
                X = X_next[keep]
            else:
                X = X_next

    trajectories = []
    times = np.arange(n_steps + 1) * h
    for i in range(N):
        states = buf[: last[i] + 1, i].copy()
        if nonfinite[i]:
            logger.warning(f"Start {i}: state overflowed before the divergence radius; reported as Diverged")
        trajectories.append(
            Trajectory(
                times=times[: last[i] + 1],
                states=states,
                filtered=fd.eta(states) < 0,
                chain_values=evaluate_chain(chain, states),
                outcome=outcomes[i],
                step=h,
                crossings=crossings[i],
                nonfinite=bool(nonfinite[i]),
            )
        )
    counts = pd.Series([o.value for o in outcomes]).value_counts().to_dict()
    logger.info(f"Simulated {N} start(s): {counts}")
    return trajectories


def simulate(
    fd: FilterData,
    chain: HocbfChain | None,
    x0,
    cfg: SimConfig | None = None,
    ext: AffineExtension | None = None,
    filter_enabled: bool = True,
    strict: bool = False,
) -> Trajectory:
    """
    Single-start wrapper of simulate_batch.

    Raises:
        NonFiniteState: only with strict=True, if the state overflowed.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (fd.n,):
        raise DimensionMismatch(f"x0 must have length {fd.n}, got shape {x0.shape}")
    traj = simulate_batch(fd, chain, x0[None, :], cfg, ext, filter_enabled)[0]
    if strict and traj.nonfinite:
        raise NonFiniteState(f"state overflowed at t = {traj.times[-1]:g} before reaching the divergence radius")
    return traj


@dataclass(frozen=True)
class InvarianceCheck:
    passed: bool
    worst_margin: float
    threshold: float


def verify_forward_invariance(traj: Trajectory, tol: float = 1e-6) -> InvarianceCheck:
    """
    Passes iff min_{t,i} h_i(x(t)) >= -tol (1 + max_i |h_i(x0)|).

    Raises:
        NotInSafeSet: if the start violates some chain inequality by more
            than the same threshold.
    """
    h0 = traj.chain_values[0]
    threshold = tol * (1.0 + float(np.max(np.abs(h0))))
    if np.any(h0 < -threshold):
        raise NotInSafeSet(f"initial chain values {h0} are not all nonnegative")
    worst = float(np.nanmin(traj.chain_values))
    return InvarianceCheck(passed=worst >= -threshold, worst_margin=worst, threshold=threshold)


@dataclass(frozen=True)
class DecayEstimate:
    rate: float
    prefactor: float


def estimate_decay(traj: Trajectory) -> DecayEstimate:
    """
    Least-squares fit of log ||x(t)|| = log M - rate * t over the tail of the run.

    Raises:
        NotConverging: if the run did not converge or the fitted rate is not positive.
    """
    if traj.outcome is not Outcome.CONVERGED:
        raise NotConverging(f"trajectory outcome is {traj.outcome.value}")
    norms = traj.norms
    usable = norms > config.DECAY_FLOOR
    t, y = traj.times[usable], np.log(norms[usable])
    if t.size < 3:
        raise NotConverging("too few samples above the decay floor to fit a rate")
    start = int(t.size * (1.0 - config.DECAY_TAIL_FRACTION))
    slope, intercept = np.polyfit(t[start:], y[start:], 1)
    if not -slope > 0:
        raise NotConverging(f"fitted decay rate {-slope:.3g} is not positive")
    return DecayEstimate(rate=float(-slope), prefactor=float(np.exp(intercept)))


def lyapunov_profile(traj: Trajectory, P) -> np.ndarray:
    """x(t)^T P x(t) along the trajectory."""
    P = np.asarray(P, dtype=float)
    return np.einsum("ti,ij,tj->t", traj.states, P, traj.states)


def shifted_equilibrium(fd: FilterData, offset) -> np.ndarray:
    """Equilibrium of the nominal loop under a constant offset: A0 x = -offset."""
    return -np.linalg.solve(fd.A0, np.asarray(offset, dtype=float))


# --- Integrator tracking ---

@dataclass(frozen=True)
class TrackingSpec:
    """Output row y = output_row @ x and the state receiving -y_cmd (the integrator)."""
    output_row: np.ndarray
    injection: np.ndarray
    kappa: float = config.TRACKING_KAPPA


def build_tracking_system(A_p, B_p, C_p, kappa: float = config.TRACKING_KAPPA) -> tuple[Plant, TrackingSpec]:
    """
    Extends (A_p, B_p) with the leaky integrator e' = -kappa e + C_p x_p - y_cmd;
    the state is [e, x_p].
    """
    A_p = np.atleast_2d(np.asarray(A_p, dtype=float))
    B_p = np.atleast_2d(np.asarray(B_p, dtype=float))
    C_p = np.asarray(C_p, dtype=float).ravel()
    n_p, m = B_p.shape
    A = np.block([[np.array([[-kappa]]), C_p[None, :]], [np.zeros((n_p, 1)), A_p]])
    B = np.vstack([np.zeros((1, m)), B_p])
    spec = TrackingSpec(
        output_row=np.concatenate([[0.0], C_p]),
        injection=tracking_injection(n_p + 1),
        kappa=kappa,
    )
    return Plant(A=A, B=B), spec


def tracking_injection(n: int) -> np.ndarray:
    e = np.zeros(n)
    e[0] = 1.0
    return e


@dataclass(frozen=True)
class TrackingResult:
    nominal: Trajectory
    filtered: Trajectory
    nominal_output: pd.Series
    filtered_output: pd.Series
    command: pd.Series
    limit: float
    equilibria: dict

    def summary(self) -> dict:
        return {
            "limit": self.limit,
            "nominal_peak": float(self.nominal_output.max()),
            "filtered_peak": float(self.filtered_output.max()),
            "nominal_exceeds_limit": bool(self.nominal_output.max() > self.limit),
            "filter_active_fraction": float(np.mean(self.filtered.filtered)),
        }


def run_tracking_scenario(
    plant: Plant,
    constraint: Constraint,
    filter_cfg: FilterConfig,
    tracking: TrackingSpec,
    command: CommandSchedule | None = None,
    cfg: SimConfig | None = None,
    fd: FilterData | None = None,
) -> TrackingResult:
    """
    Runs the nominal and the filtered loop from rest under the same command and
    returns both output series. The safe set is c^T x + d >= 0; for an output
    bound y <= limit, c = -output_row and d = limit.
    """
    fd = build_filter_data(plant, constraint, filter_cfg) if fd is None else fd
    command = default_doublet() if command is None else command
    cfg = SimConfig(step=config.TRACKING_STEP, horizon=config.TRACKING_HORIZON, early_stop=False) if cfg is None else cfg
    ext = AffineExtension(command=command, injection=tracking.injection, kappa=tracking.kappa)
    x0 = np.zeros(fd.n)

    nominal = simulate(fd, fd.chain, x0, cfg, ext, filter_enabled=False)
    filtered = simulate(fd, fd.chain, x0, cfg, ext, filter_enabled=True)
    equilibria = {
        float(y): shifted_equilibrium(fd, -y * tracking.injection).tolist()
        for _, y in command.breakpoints
    }
    limit = constraint.d if np.allclose(constraint.c, -tracking.output_row) else float("nan")

    def series(traj: Trajectory, name: str) -> pd.Series:
        return pd.Series(traj.states @ tracking.output_row, index=pd.Index(traj.times, name="t"), name=name)

    result = TrackingResult(
        nominal=nominal,
        filtered=filtered,
        nominal_output=series(nominal, "nominal"),
        filtered_output=series(filtered, "filtered"),
        command=pd.Series(command.value(filtered.times), index=pd.Index(filtered.times, name="t"), name="command"),
        limit=limit,
        equilibria=equilibria,
    )
    s = result.summary()
    logger.info(f"Tracking: nominal peak {s['nominal_peak']:.4f}, filtered peak {s['filtered_peak']:.4f}, limit {limit}")
    return result
