import json

import pandas as pd
import pytest

from cbf_lab import config
from cbf_lab.main import EXIT_ERROR, EXIT_INFEASIBLE, EXIT_OK, main


@pytest.mark.parametrize(
    "name, code",
    [("fig1-bottom-right", 0), ("fig1-bottom-left", 2), ("fig2-top", 3), ("fig2-bottom", 3)],
)
def test_analyze_exit_code_is_the_verdict(name, code, capsys):
    assert main(["analyze", name]) == code
    out = capsys.readouterr().out
    assert "verdict" in out
    assert "invariant zeros" in out


def test_analyze_json_output(capsys):
    assert main(["analyze", "fig1-bottom-left", "--format", "json", "--dump-filter"]) == 2
    payload = json.loads(capsys.readouterr().out)
    assert payload["problem"] == "fig1-bottom-left"
    assert payload["verdict"] == "Unbounded"
    assert payload["cqlf_singularity_gamma"] > 0
    assert payload["filter"]["r"] == 1


def test_analyze_malformed_problem(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text('{"A": [[1.0]]')
    assert main(["analyze", str(path)]) == EXIT_ERROR
    assert "ParseError" in capsys.readouterr().err


def test_tolerance_must_be_positive(capsys, monkeypatch):
    for name in ("RELATIVE_DEGREE_TOL", "HURWITZ_TOL", "POSITIVE_REAL_TOL"):
        monkeypatch.setattr(config, name, getattr(config, name))
    assert main(["analyze", "fig1-bottom-right", "--tol", "-1"]) == EXIT_ERROR
    assert "--tol" in capsys.readouterr().err


def test_design_reports_obstruction(tmp_path, capsys):
    assert main(["design", "fig1-bottom-left", "--out-dir", str(tmp_path)]) == EXIT_INFEASIBLE
    out = capsys.readouterr().out
    assert out.startswith("Infeasible:")
    assert "note: m=1 spectral obstruction" in out
    assert not list(tmp_path.glob("*_design.json"))


def test_design_writes_gain_file(tmp_path, capsys):
    assert main(["design", "aircraft", "--out-dir", str(tmp_path)]) == EXIT_OK
    data = json.loads((tmp_path / "aircraft_design.json").read_text())
    assert len(data["K"]) == 2 and len(data["K"][0]) == 4
    assert data["spectral_abscissa_A0"] < 0 and data["spectral_abscissa_A_tilde"] < 0
    assert "K" in capsys.readouterr().out


def test_simulate_single_start(tmp_path, capsys):
    code = main(["simulate", "fig1-bottom-right", "--x0", "1,-1", "--horizon", "2", "--step", "0.01", "--out-dir", str(tmp_path)])
    assert code == EXIT_OK
    frame = pd.read_csv(tmp_path / "fig1-bottom-right" / "trajectory_000.csv")
    assert list(frame.columns[:3]) == ["t", "x1", "x2"]
    assert frame["t"].iloc[-1] == pytest.approx(2.0)
    assert "HorizonReached" in capsys.readouterr().out


def test_simulate_grid_with_plot(tmp_path, capsys):
    code = main(
        ["simulate", "fig1-bottom-left", "--grid", "3", "--horizon", "1", "--step", "0.01",
         "--format", "svg", "--out-dir", str(tmp_path)]
    )
    assert code == EXIT_OK
    out_dir = tmp_path / "fig1-bottom-left"
    assert len(list(out_dir.glob("trajectory_*.csv"))) == 9
    assert (out_dir / "trajectories.svg").exists()


def test_simulate_rejects_wrong_start_length(tmp_path, capsys):
    assert main(["simulate", "fig2-top", "--x0", "1,2", "--out-dir", str(tmp_path)]) == EXIT_ERROR
    assert "--x0 must have 3 entries" in capsys.readouterr().err


def test_unknown_subcommand_exits():
    with pytest.raises(SystemExit):
        main(["plot"])


@pytest.mark.slow
def test_reproduce_fig1(tmp_path, capsys):
    assert main(["reproduce", "fig1", "--out-dir", str(tmp_path)]) == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert "fig1" in payload


def test_grid_start_count_is_capped(tmp_path, capsys):
    # 10^3 starts in three dimensions
    assert main(["simulate", "fig2-top", "--grid", "10", "--out-dir", str(tmp_path)]) == EXIT_ERROR
    assert "the limit is" in capsys.readouterr().err
    assert not (tmp_path / "fig2-top").exists()


def test_tolerance_is_restored_after_the_command(capsys):
    before = {name: getattr(config, name) for name in ("RELATIVE_DEGREE_TOL", "HURWITZ_TOL", "POSITIVE_REAL_TOL")}
    assert main(["analyze", "fig1-bottom-right", "--tol", "1e-7"]) == EXIT_OK
    assert {name: getattr(config, name) for name in before} == before
