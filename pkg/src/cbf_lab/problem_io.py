"""
Problem files: JSON documents describing a plant, an affine safe set and the
filter parameters.

    {
      "name": "fig1-bottom-right",
      "provenance": "free text",
      "A": [[...]], "B": [[...]],          # or a "tracking" block instead
      "c": [...], "d": 0.49,
      "K": [[...]],                        # optional, LQR when absent
      "G": [[...]], "alphas": [...],        # optional, default I and 1
      "lqr": {"Q": [[...]], "R": [[...]]},  # optional LQR weights
      "tracking": {"A_p": [[...]], "B_p": [[...]], "C_p": [...], "kappa": 0.01}
    }

With a tracking block, A and B are the integrator extension of (A_p, B_p)
and c lives in the extended coordinates [e, x_p].
"""
import json
import logging
import pathlib
from dataclasses import dataclass

import numpy as np

from . import config
from .linear_model import (
    CbfLabError,
    Constraint,
    FilterConfig,
    Plant,
    build_constraint,
    make_filter_config,
)
from .lmi_design import lqr_gain
from .simulator import TrackingSpec, build_tracking_system

logger = logging.getLogger(__name__)

FIXTURE_NAMES = ("fig1-bottom-right", "fig1-bottom-left", "fig2-top", "fig2-bottom", "aircraft")

_KNOWN_KEYS = {"name", "provenance", "A", "B", "c", "d", "K", "G", "alphas", "lqr", "tracking"}


class ParseError(CbfLabError):
    pass


@dataclass(frozen=True)
class TrackingBlock:
    A_p: np.ndarray
    B_p: np.ndarray
    C_p: np.ndarray
    kappa: float
    spec: TrackingSpec


@dataclass(frozen=True)
class ProblemFile:
    path: pathlib.Path | None
    name: str
    plant: Plant
    constraint: Constraint
    filter_config: FilterConfig
    provenance: str                  # "user" or "fixture"
    provenance_note: str = ""
    tracking: TrackingBlock | None = None
    lqr_weights: tuple[np.ndarray, np.ndarray] | None = None
    gain_source: str = "file"        # "file" or "lqr"


def _matrix(data: dict, key: str, ndim: int = 2) -> np.ndarray:
    try:
        arr = np.array(data[key], dtype=float)
    except KeyError:
        raise ParseError(f"missing required field '{key}'")
    except (TypeError, ValueError) as e:
        raise ParseError(f"field '{key}' is not numeric: {e}")
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != ndim:
        raise ParseError(f"field '{key}' must be {ndim}-dimensional, got shape {arr.shape}")
    return arr


def _parse_tracking(block) -> TrackingBlock:
    if not isinstance(block, dict):
        raise ParseError("'tracking' must be an object")
    A_p = _matrix(block, "A_p")
    B_p = _matrix(block, "B_p")
    C_p = _matrix(block, "C_p", ndim=1)
    kappa = float(block.get("kappa", config.TRACKING_KAPPA))
    _, spec = build_tracking_system(A_p, B_p, C_p, kappa)
    return TrackingBlock(A_p=A_p, B_p=B_p, C_p=C_p, kappa=kappa, spec=spec)


def parse_problem(data, path: pathlib.Path | None = None, provenance: str = "user") -> ProblemFile:
    """
    Builds and validates a problem from an already-decoded JSON object. Every
    model invariant is re-checked by the constructors it goes through.

    Raises:
        ParseError: on schema violations.
        CbfLabError: any model error (not stabilizable, no relative degree, ...).
    """
    if not isinstance(data, dict):
        raise ParseError("problem file must contain a JSON object")
    unknown = set(data) - _KNOWN_KEYS
    if unknown:
        raise ParseError(f"unknown field(s): {sorted(unknown)}")

    tracking = None
    if "tracking" in data:
        if "A" in data or "B" in data:
            raise ParseError("give either A and B or a 'tracking' block, not both")
        tracking = _parse_tracking(data["tracking"])
        plant, _ = build_tracking_system(tracking.A_p, tracking.B_p, tracking.C_p, tracking.kappa)
    else:
        plant = Plant(A=_matrix(data, "A"), B=_matrix(data, "B"))

    if "d" not in data:
        raise ParseError("missing required field 'd'")
    try:
        d = float(data["d"])
    except (TypeError, ValueError):
        raise ParseError(f"field 'd' is not a number: {data['d']!r}")
    constraint = build_constraint(plant, _matrix(data, "c", ndim=1), d)

    G = _matrix(data, "G") if "G" in data else np.eye(plant.m)
    alphas = data.get("alphas")
    if alphas is not None and not isinstance(alphas, list):
        raise ParseError("'alphas' must be a list")

    lqr_weights = None
    if "lqr" in data:
        if not isinstance(data["lqr"], dict):
            raise ParseError("'lqr' must be an object with Q and R")
        lqr_weights = (_matrix(data["lqr"], "Q"), _matrix(data["lqr"], "R"))

    if "K" in data:
        K = _matrix(data, "K")
        gain_source = "file"
    else:
        Q, R = lqr_weights if lqr_weights is not None else (np.eye(plant.n), G)
        K = lqr_gain(plant.A, plant.B, Q, R)
        gain_source = "lqr"
        logger.info(f"No K given; using the LQR gain {np.round(K, 4).tolist()}")

    filter_config = make_filter_config(plant, constraint, K, G=G, alphas=alphas)
    name = str(data.get("name") or (path.stem if path is not None else "problem"))
    return ProblemFile(
        path=path,
        name=name,
        plant=plant,
        constraint=constraint,
        filter_config=filter_config,
        provenance=provenance,
        provenance_note=str(data.get("provenance", "")),
        tracking=tracking,
        lqr_weights=lqr_weights,
        gain_source=gain_source,
    )


def load_problem(path, provenance: str = "user") -> ProblemFile:
    path = pathlib.Path(path)
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ParseError(f"problem file not found: {path}")
    except json.JSONDecodeError as e:
        raise ParseError(f"{path} is not valid JSON: {e}")
    problem = parse_problem(data, path=path, provenance=provenance)
    logger.info(
        f"Loaded {problem.name} from {path}: n={problem.plant.n}, m={problem.plant.m}, r={problem.constraint.r}"
    )
    return problem


def problem_to_dict(problem: ProblemFile) -> dict:
    data = {"name": problem.name}
    if problem.provenance_note:
        data["provenance"] = problem.provenance_note
    if problem.tracking is not None:
        data["tracking"] = {
            "A_p": problem.tracking.A_p.tolist(),
            "B_p": problem.tracking.B_p.tolist(),
            "C_p": problem.tracking.C_p.tolist(),
            "kappa": problem.tracking.kappa,
        }
    else:
        data["A"] = problem.plant.A.tolist()
        data["B"] = problem.plant.B.tolist()
    data["c"] = problem.constraint.c.tolist()
    data["d"] = problem.constraint.d
    cfg = problem.filter_config
    if problem.gain_source == "file":
        data["K"] = cfg.K.tolist()
    data["G"] = cfg.G.tolist()
    data["alphas"] = list(cfg.alphas)
    if problem.lqr_weights is not None:
        data["lqr"] = {"Q": problem.lqr_weights[0].tolist(), "R": problem.lqr_weights[1].tolist()}
    return data


def dump_problem(problem: ProblemFile, path) -> pathlib.Path:
    """Writes the problem back as JSON; floats keep their shortest round-trip repr."""
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(problem_to_dict(problem), f, indent=2)
    logger.info(f"Wrote problem {problem.name} to {path}")
    return path


def fixture_path(name: str) -> pathlib.Path:
    if name not in FIXTURE_NAMES:
        raise ParseError(f"unknown fixture '{name}'; expected one of {', '.join(FIXTURE_NAMES)}")
    return config.fixtures_dir() / f"{name}.json"


def load_fixture(name: str) -> ProblemFile:
    return load_problem(fixture_path(name), provenance="fixture")


def resolve_problem(arg: str) -> ProblemFile:
    """A fixture name or a path to a problem file."""
    if arg in FIXTURE_NAMES and not pathlib.Path(arg).exists():
        return load_fixture(arg)
    return load_problem(arg)
