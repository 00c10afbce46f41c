"""
Command-line front end.

    cbf-lab analyze PROBLEM [--dump-filter]
    cbf-lab design PROBLEM [--eps E] [--max-iter N] [--output FILE]
    cbf-lab simulate PROBLEM (--x0 X | --grid N) [--step H] [--horizon T] [--no-filter]
    cbf-lab reproduce {fig1,fig2,fig3,all}

PROBLEM is a path to a problem file or the name of a bundled fixture.
Exit codes: 0 GES or success, 1 error, 2 Unbounded, 3 Indeterminate,
4 design infeasible, 5 acceptance check failed.
"""
import argparse
import itertools
import json
import logging
import pathlib
import sys

import numpy as np
import pandas as pd

from . import config
from .filter_core import build_filter_data
from .linear_model import CbfLabError
from .lmi_design import LmiInfeasible, build_lmi_problem, cqlf_singularity_gamma, solve_lmi_pair
from .plotting import plot_phase_portrait, plot_trajectories_3d
from .problem_io import ParseError, resolve_problem
from .reproduce import FIGURES, AcceptanceFailure
from .simulator import SimConfig, simulate_batch
from .spectral_analysis import Verdict, classify, verdict_table

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 4
EXIT_ACCEPTANCE = 5
VERDICT_EXIT_CODES = {
    Verdict.GES: 0,
    Verdict.UNBOUNDED: 2,
    Verdict.INDETERMINATE: 3,
}


def _fmt(value) -> str:
    # %-formatting ignores the locale, so the decimal mark is always "."
    if isinstance(value, complex):
        return "%.6g%+.6gj" % (value.real, value.imag)
    if isinstance(value, (float, np.floating)):
        return "%.6g" % value
    return str(value)


def _print_table(rows: list[tuple[str, object]]) -> None:
    width = max(len(k) for k, _ in rows)
    for key, value in rows:
        print(f"{key:<{width}}  {_fmt(value)}")


def _print_frame(frame: pd.DataFrame) -> None:
    if frame.empty:
        print("(none)")
        return
    print(frame.to_string(index=False, float_format=lambda v: "%.6g" % v))


def _out_dir(args) -> pathlib.Path:
    path = pathlib.Path(args.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


TOLERANCE_NAMES = ("RELATIVE_DEGREE_TOL", "HURWITZ_TOL", "POSITIVE_REAL_TOL")


def _apply_tolerance(tol: float | None) -> dict[str, float]:
    """
    --tol replaces the base relative tolerance of the rank, Hurwitz and positive-real tests.
    Returns the previous values for _restore_tolerance.
    """
    if tol is None:
        return {}
    if not tol > 0:
        raise ParseError(f"--tol must be positive, got {tol}")
    previous = {name: getattr(config, name) for name in TOLERANCE_NAMES}
    for name in TOLERANCE_NAMES:
        setattr(config, name, tol)
    logger.info(f"Base tolerance set to {tol:g}")
    return previous


def _restore_tolerance(previous: dict[str, float]) -> None:
    for name, value in previous.items():
        setattr(config, name, value)


def cmd_analyze(args) -> int:
    problem = resolve_problem(args.problem)
    fd = build_filter_data(problem.plant, problem.constraint, problem.filter_config)
    report = classify(fd)
    gamma = cqlf_singularity_gamma(fd)

    if args.format == "json":
        payload = {"problem": problem.name, **report.to_dict(), "cqlf_singularity_gamma": gamma}
        if args.dump_filter:
            payload["filter"] = fd.to_dict()
        print(json.dumps(payload, indent=2))
    else:
        eq = report.equilibria
        rows = [
            ("problem", problem.name),
            ("n m r", f"{fd.n} {fd.m} {fd.r}"),
            ("verdict", report.verdict.value),
            ("spectral_abscissa", report.spectral_abscissa),
            ("theta_sq", fd.theta_sq),
            ("xi", eq.xi),
            ("equilibria", eq.count_kind.value),
        ]
        if eq.undesired_point is not None:
            rows.append(("undesired_point", " ".join(_fmt(float(v)) for v in eq.undesired_point)))
        if report.parity_positive_real is not None:
            rows.append(("parity", report.parity_positive_real.value))
        rows.append(("cqlf_gamma", "none" if gamma is None else gamma))
        _print_table(rows)
        print()
        _print_frame(verdict_table(report))
        print()
        zeros = pd.DataFrame({"re": np.real(report.invariant_zeros), "im": np.imag(report.invariant_zeros)})
        print("invariant zeros")
        _print_frame(zeros)
        for note in report.notes:
            print(f"note: {note}")
        if args.dump_filter:
            print()
            print(json.dumps(fd.to_dict(), indent=2))

    return VERDICT_EXIT_CODES[report.verdict]


def cmd_design(args) -> int:
    problem = resolve_problem(args.problem)
    cfg = problem.filter_config
    prob = build_lmi_problem(problem.plant, problem.constraint, cfg.alphas, cfg.G)
    try:
        solution = solve_lmi_pair(prob, eps=args.eps, max_iter=args.max_iter)
    except LmiInfeasible as e:
        print(f"Infeasible: {e}")
        if e.note:
            print(f"note: {e.note}")
        return EXIT_INFEASIBLE

    output = pathlib.Path(args.output) if args.output else _out_dir(args) / f"{problem.name}_design.json"
    output.parent.mkdir(parents=True, exist_ok=True)
    with open(output, "w") as f:
        json.dump({"problem": problem.name, **solution.to_dict()}, f, indent=2)
    logger.info(f"Wrote gain and Lyapunov matrix to {output}")

    if args.format == "json":
        print(json.dumps({"problem": problem.name, **solution.to_dict()}, indent=2))
    else:
        _print_table(
            [
                ("problem", problem.name),
                ("status", solution.status),
                ("t_star", solution.t_star),
                ("margin_A0", solution.margins[0]),
                ("margin_A_tilde", solution.margins[1]),
                ("abscissa_A0", solution.abscissas[0]),
                ("abscissa_A_tilde", solution.abscissas[1]),
                ("output", str(output)),
            ]
        )
        print()
        print("K")
        _print_frame(pd.DataFrame(solution.K))
    return EXIT_OK


def _starts(args, n: int) -> np.ndarray:
    if args.x0 is not None:
        try:
            x0 = np.array([float(v) for v in args.x0.split(",")])
        except ValueError:
            raise ParseError(f"--x0 must be a comma-separated list of numbers, got {args.x0!r}")
        if x0.shape != (n,):
            raise ParseError(f"--x0 must have {n} entries, got {x0.size}")
        return x0[None, :]
    if args.grid < 1:
        raise ParseError(f"--grid must be at least 1, got {args.grid}")
    count = args.grid**n
    if count > config.SIM_MAX_STARTS:
        raise ParseError(f"--grid {args.grid} gives {count} starts in {n} dimensions; the limit is {config.SIM_MAX_STARTS}")
    axis = np.linspace(-args.half_width, args.half_width, args.grid)
    return np.array(list(itertools.product(axis, repeat=n)))


def cmd_simulate(args) -> int:
    problem = resolve_problem(args.problem)
    fd = build_filter_data(problem.plant, problem.constraint, problem.filter_config)
    X0 = _starts(args, fd.n)
    sim_cfg = SimConfig(step=args.step, horizon=args.horizon)
    runs = simulate_batch(fd, fd.chain, X0, sim_cfg, filter_enabled=not args.no_filter)

    out_dir = _out_dir(args) / problem.name
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, traj in enumerate(runs):
        traj.to_frame().to_csv(out_dir / f"trajectory_{i:03d}.csv", index=False)
    logger.info(f"Wrote {len(runs)} trajectory CSV file(s) to {out_dir}")

    if args.format == "svg":
        if fd.n == 2:
            plot_phase_portrait(runs, fd, out_dir / "trajectories.svg", title=problem.name)
        elif fd.n == 3:
            plot_trajectories_3d(runs, out_dir / "trajectories.svg", title=problem.name)
        else:
            logger.warning(f"No plot for n = {fd.n}; only planar and 3-D systems are drawn")

    summary = pd.DataFrame(
        {
            "start": range(len(runs)),
            "outcome": [t.outcome.value for t in runs],
            "t_end": [float(t.times[-1]) for t in runs],
            "final_norm": [float(t.norms[-1]) for t in runs],
            "crossings": [len(t.crossings) for t in runs],
        }
    )
    if args.format == "json":
        print(summary.to_json(orient="records", indent=2))
    else:
        _print_frame(summary)
    return EXIT_OK


def cmd_reproduce(args) -> int:
    names = list(FIGURES) if args.figure == "all" else [args.figure]
    results = {}
    for name in names:
        logger.info(f"Reproducing {name}...")
        results[name] = FIGURES[name](_out_dir(args))
    print(json.dumps(results, indent=2, default=str))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--tol", type=float, default=None, help="Base relative tolerance for rank, Hurwitz and positive-real tests.")
    common.add_argument("--out-dir", default=config.OUTPUT_DIR, help="Directory for written files.")
    common.add_argument("--format", choices=["json", "csv", "svg"], default=None, help="Output format.")
    common.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG level.")

    parser = argparse.ArgumentParser(prog="cbf-lab", description="CBF safety filter analysis for linear systems")
    subparsers = parser.add_subparsers(dest="command", required=True, help="The command to run.")

    analyze_parser = subparsers.add_parser("analyze", parents=[common], help="Classify the filtered closed loop.")
    analyze_parser.add_argument("problem", help="Problem file or fixture name.")
    analyze_parser.add_argument("--dump-filter", action="store_true", help="Also print the derived filter quantities.")
    analyze_parser.set_defaults(handler=cmd_analyze)

    design_parser = subparsers.add_parser("design", parents=[common], help="Design K so that A0 and A_tilde share a Lyapunov function.")
    design_parser.add_argument("problem", help="Problem file or fixture name.")
    design_parser.add_argument("--eps", type=float, default=None, help="Required strict margin.")
    design_parser.add_argument("--max-iter", type=int, default=None, help="Solver iteration limit.")
    design_parser.add_argument("--output", default=None, help="Gain file path.")
    design_parser.set_defaults(handler=cmd_design)

    simulate_parser = subparsers.add_parser("simulate", parents=[common], help="Integrate the closed loop.")
    simulate_parser.add_argument("problem", help="Problem file or fixture name.")
    starts = simulate_parser.add_mutually_exclusive_group(required=True)
    starts.add_argument("--x0", default=None, help="Initial state, comma-separated.")
    starts.add_argument("--grid", type=int, default=None, help="Points per axis of a grid of initial states.")
    simulate_parser.add_argument("--half-width", type=float, default=config.FIG1_GRID_HALF_WIDTH, help="Grid half width.")
    simulate_parser.add_argument("--step", type=float, default=config.SIM_STEP, help="RK4 step.")
    simulate_parser.add_argument("--horizon", type=float, default=config.SIM_HORIZON, help="Final time.")
    simulate_parser.add_argument("--no-filter", action="store_true", help="Integrate the nominal loop instead.")
    simulate_parser.set_defaults(handler=cmd_simulate)

    reproduce_parser = subparsers.add_parser("reproduce", parents=[common], help="Regenerate a figure bundle from the fixtures.")
    reproduce_parser.add_argument("figure", choices=[*FIGURES, "all"], help="Figure to reproduce.")
    reproduce_parser.set_defaults(handler=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else config.LOG_LEVEL,
        format=config.LOG_FORMAT,
        handlers=[logging.StreamHandler()],
    )
    # Suppress the font finding logs from matplotlib
    logging.getLogger("matplotlib.font_manager").setLevel(logging.WARNING)

    previous = {}
    try:
        previous = _apply_tolerance(args.tol)
        return args.handler(args)
    except AcceptanceFailure as e:
        print(f"error: AcceptanceFailure: {e}", file=sys.stderr)
        return EXIT_ACCEPTANCE
    except LmiInfeasible as e:
        print(f"error: LmiInfeasible: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (CbfLabError, ValueError) as e:
        logger.debug("Command failed", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR
    finally:
        _restore_tolerance(previous)


if __name__ == "__main__":
    sys.exit(main())
