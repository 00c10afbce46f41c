import json

import numpy as np
import pytest

from cbf_lab import config
from cbf_lab.linear_model import NotStabilizable
from cbf_lab.problem_io import (
    FIXTURE_NAMES,
    ParseError,
    dump_problem,
    fixture_path,
    load_fixture,
    load_problem,
    parse_problem,
    resolve_problem,
)

PLANAR = {
    "name": "planar",
    "A": [[-0.79, 1.6], [-0.43, -0.01]],
    "B": [[0.61], [0.55]],
    "c": [-0.26, -0.86],
    "d": 0.49,
    "K": [[0.33, 0.88]],
    "G": [[1.0]],
    "alphas": [5.0],
}


@pytest.mark.parametrize("name", FIXTURE_NAMES)
def test_every_fixture_loads(name):
    problem = load_fixture(name)
    assert problem.name == name
    assert problem.provenance == "fixture"
    assert problem.provenance_note
    assert len(problem.filter_config.alphas) == problem.constraint.r


def test_dump_and_reload(tmp_path):
    problem = parse_problem(PLANAR)
    path = dump_problem(problem, tmp_path / "out" / "planar.json")
    again = load_problem(path)
    np.testing.assert_array_equal(again.plant.A, problem.plant.A)
    np.testing.assert_array_equal(again.filter_config.K, problem.filter_config.K)
    assert again.constraint.d == problem.constraint.d
    assert again.filter_config.alphas == problem.filter_config.alphas


def test_tracking_fixture_keeps_lqr_gain_implicit(tmp_path):
    problem = load_fixture("aircraft")
    assert problem.gain_source == "lqr"
    assert problem.tracking is not None
    assert problem.plant.n == 4 and problem.plant.m == 2
    path = dump_problem(problem, tmp_path / "aircraft.json")
    data = json.loads(path.read_text())
    assert "K" not in data and "A" not in data
    np.testing.assert_allclose(load_problem(path).filter_config.K, problem.filter_config.K)


def test_defaults_for_optional_fields():
    data = {k: v for k, v in PLANAR.items() if k not in ("K", "G", "alphas")}
    problem = parse_problem(data)
    assert problem.gain_source == "lqr"
    np.testing.assert_array_equal(problem.filter_config.G, np.eye(1))
    assert problem.filter_config.alphas == (config.DEFAULT_ALPHA,)


def test_malformed_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{ not json")
    with pytest.raises(ParseError, match="not valid JSON"):
        load_problem(path)


def test_missing_file(tmp_path):
    with pytest.raises(ParseError, match="not found"):
        load_problem(tmp_path / "absent.json")


@pytest.mark.parametrize(
    "change, message",
    [
        ({"d": None}, "'d'"),
        ({"extra": 1}, "unknown field"),
        ({"tracking": {"A_p": [[-1.0]], "B_p": [[1.0]], "C_p": [1.0]}}, "not both"),
        ({"alphas": 5.0}, "must be a list"),
        ({"A": "oops"}, "not numeric"),
    ],
)
def test_schema_violations(change, message):
    data = dict(PLANAR)
    for key, value in change.items():
        if value is None:
            data.pop(key)
        else:
            data[key] = value
    with pytest.raises(ParseError, match=message):
        parse_problem(data)


def test_model_errors_pass_through():
    data = dict(PLANAR, A=[[1.0, 0.0], [0.0, -1.0]], B=[[0.0], [1.0]], c=[0.0, 1.0])
    with pytest.raises(NotStabilizable):
        parse_problem(data)


def test_unknown_fixture_name():
    with pytest.raises(ParseError, match="unknown fixture"):
        fixture_path("fig9")


def test_fixtures_dir_override(tmp_path, monkeypatch):
    (tmp_path / "fig2-top.json").write_text(json.dumps(dict(PLANAR, name="fig2-top")))
    monkeypatch.setenv(config.FIXTURES_ENV_VAR, str(tmp_path))
    problem = load_fixture("fig2-top")
    assert problem.plant.n == 2


def test_resolve_problem_accepts_name_or_path(tmp_path):
    assert resolve_problem("fig1-bottom-left").provenance == "fixture"
    path = tmp_path / "mine.json"
    path.write_text(json.dumps(PLANAR))
    problem = resolve_problem(str(path))
    assert problem.provenance == "user"
    assert problem.name == "planar"
