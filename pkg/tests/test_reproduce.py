import json

import numpy as np
import pandas as pd
import pytest

from cbf_lab.reproduce import (
    cube_starts,
    grid_starts,
    reproduce_fig1,
    reproduce_fig2,
    reproduce_fig3,
    trajectories_frame,
)
from cbf_lab.simulator import SimConfig, simulate_batch

FIG2_DIVERGING_STARTS = [
    [-1.0, -1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-3.0, -3.0, -3.0],
    [-3.0, -3.0, 3.0],
    [-3.0, 3.0, -3.0],
    [-3.0, 3.0, 3.0],
]


def test_start_sets():
    grid = grid_starts(3.0, 10)
    assert grid.shape == (100, 2)
    assert grid.min() == -3.0 and grid.max() == 3.0
    cube = cube_starts()
    assert cube.shape == (16, 3)
    np.testing.assert_array_equal(np.unique(np.abs(cube)), [1.0, 3.0])


def test_trajectories_frame_decimates(fixture_filter):
    _, fd = fixture_filter("fig1-bottom-right")
    runs = simulate_batch(fd, None, grid_starts(1.0, 2), SimConfig(step=0.01, horizon=0.25, early_stop=False))
    frame = trajectories_frame(runs, every=10)
    # samples 0, 10, 20 and the last (25) of each of the 4 runs
    assert len(frame) == 16
    assert list(frame["start"].unique()) == [0, 1, 2, 3]


@pytest.mark.slow
def test_fig1_bundle(tmp_path):
    summary = reproduce_fig1(tmp_path)
    assert summary["bottom_right"]["verdict"] == "GES"
    assert summary["bottom_right"]["outcomes"] == {"Converged": 100}
    assert summary["bottom_right"]["min_decay_rate"] > 0
    assert summary["bottom_right"]["horizon"] == 30.0
    assert "30 s" in summary["bottom_right"]["note"]
    assert 0.0 < summary["bottom_right"]["slowest_convergence_time"] <= 30.0
    assert summary["bottom_left"]["verdict"] == "Unbounded"
    assert summary["bottom_left"]["ray_final_norm"] > 1e4
    assert summary["bottom_left"]["ray_max_chain_drift"] < 1e-4
    for name in ("bottom_right.csv", "bottom_right.svg", "bottom_left.csv", "bottom_left.svg", "bottom_left_ray.csv"):
        assert (tmp_path / "fig1" / name).exists()
    json.dumps(summary)


@pytest.mark.slow
def test_fig2_bundle(tmp_path):
    summary = reproduce_fig2(tmp_path)
    assert summary["top"]["verdict"] == "Indeterminate"
    assert summary["bottom"]["verdict"] == "Indeterminate"
    assert "Diverged" not in summary["top"]["outcomes"]
    assert sorted(summary["bottom"]["diverged_starts"]) == sorted(FIG2_DIVERGING_STARTS)
    frame = pd.read_csv(tmp_path / "fig2" / "bottom.csv")
    assert {"start", "t", "x1", "x2", "x3", "mode", "h0"} <= set(frame.columns)
    assert (tmp_path / "fig2" / "top.svg").exists()


@pytest.mark.slow
def test_fig3_bundle(tmp_path):
    summary = reproduce_fig3(tmp_path)
    assert summary["nominal_peak"] == pytest.approx(0.516, abs=5e-3)
    assert summary["filtered_peak"] == pytest.approx(0.39987, abs=1e-3)
    assert summary["filtered_peak"] <= 0.4 + 1e-4
    frame = pd.read_csv(tmp_path / "fig3" / "roll_rate.csv")
    assert list(frame.columns) == ["t", "command", "nominal", "filtered"]
    assert (tmp_path / "fig3" / "roll_rate.svg").exists()
