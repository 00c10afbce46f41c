import numpy as np
import pytest

from cbf_lab import config
from cbf_lab.filter_core import (
    Mode,
    ZeroThetaSq,
    build_filter_data,
    closed_loop_field,
    closed_loop_field_batch,
    filtered_control,
    hocbf_condition,
    hocbf_condition_scale,
    input_direction,
)
from cbf_lab.linear_model import Constraint, DimensionMismatch, FilterConfig, Plant

from conftest import random_problem


def _kkt_minimizer(fd, cfg, x):
    """Active-constraint KKT solution of min 1/2 ||u + K x||_G^2 s.t. a^T u >= -(c^T phi(A) x + alpha d)."""
    m = fd.m
    a = fd.input_row
    rhs_bound = -(fd.chain.terminal_row @ x + fd.alpha * fd.constraint.d)
    kkt = np.block([[cfg.G, -a[:, None]], [a[None, :], np.zeros((1, 1))]])
    rhs = np.concatenate([-cfg.G @ cfg.K @ x, [rhs_bound]])
    sol = np.linalg.solve(kkt, rhs)
    return sol[:m], sol[m]


@pytest.mark.slow
def test_closed_form_matches_kkt_oracle(rng):
    checked = 0
    while checked < 200:
        n = int(rng.integers(2, 7))
        m = int(rng.integers(1, 3))
        r = int(rng.integers(1, (n - 1) // m + 2))
        plant, constraint, cfg = random_problem(rng, n, m, r)
        fd = build_filter_data(plant, constraint, cfg)
        x = 3.0 * rng.standard_normal(n)
        u_star = filtered_control(fd, cfg, x)
        if fd.eta(x) >= 0:
            np.testing.assert_allclose(u_star, -cfg.K @ x, rtol=1e-14, atol=1e-14)
            continue
        u_kkt, multiplier = _kkt_minimizer(fd, cfg, x)
        assert multiplier > 0
        np.testing.assert_allclose(u_star, u_kkt, rtol=1e-9, atol=1e-9 * (1.0 + np.linalg.norm(u_kkt)))
        slack = hocbf_condition(fd, x, u_star)
        assert slack >= -config.QP_FEASIBILITY_TOL * hocbf_condition_scale(fd, x, u_star)
        checked += 1


def test_nominal_input_is_returned_exactly_when_inactive(make_problem):
    plant, constraint, cfg = make_problem(n=3, m=2, r=1)
    fd = build_filter_data(plant, constraint, cfg)
    x = np.zeros(3)  # eta(0) = alpha d > 0
    np.testing.assert_array_equal(filtered_control(fd, cfg, x), np.zeros(2))


def test_filtered_control_batch_matches_single(make_problem):
    plant, constraint, cfg = make_problem(n=4, m=2, r=2)
    fd = build_filter_data(plant, constraint, cfg)
    X = np.random.default_rng(3).standard_normal((20, 4)) * 4.0
    batch = filtered_control(fd, cfg, X)
    for x, u in zip(X, batch):
        np.testing.assert_allclose(u, filtered_control(fd, cfg, x), rtol=1e-14, atol=1e-14)


def test_filtered_branch_is_affine(make_problem):
    plant, constraint, cfg = make_problem(n=3, m=1, r=1)
    fd = build_filter_data(plant, constraint, cfg)
    np.testing.assert_allclose(fd.A_tilde, fd.A0 + np.outer(fd.v1, fd.v2))
    np.testing.assert_allclose(fd.b_tilde, fd.alpha * constraint.d * fd.v1)
    rng = np.random.default_rng(11)
    for _ in range(50):
        x = 5.0 * rng.standard_normal(3)
        u = filtered_control(fd, cfg, x)
        dx, mode = closed_loop_field(fd, x)
        np.testing.assert_allclose(dx, plant.A @ x + plant.B @ u, rtol=1e-10, atol=1e-10)
        assert mode is (Mode.FILTERED if fd.eta(x) < 0 else Mode.NOMINAL)


def test_boundary_belongs_to_nominal_branch():
    plant = Plant(A=-np.eye(2), B=np.array([[1.0], [0.0]]))
    constraint = Constraint(c=[1.0, 0.0], d=1.0, r=1)
    cfg = FilterConfig(K=[[1.0, 0.0]], G=[[1.0]], alphas=[1.0])
    fd = build_filter_data(plant, constraint, cfg)
    # v2 = c^T (A + I) - a^T K = [-1, 0]; eta = -x1 + 1 vanishes at x1 = 1
    x = np.array([1.0, 0.5])
    assert fd.eta(x) == 0.0
    dx, mode = closed_loop_field(fd, x)
    assert mode is Mode.NOMINAL
    np.testing.assert_array_equal(dx, fd.A0 @ x)


def test_batch_field_matches_single(make_problem):
    plant, constraint, cfg = make_problem(n=4, m=1, r=2)
    fd = build_filter_data(plant, constraint, cfg)
    X = np.random.default_rng(5).standard_normal((30, 4)) * 3.0
    dX, active = closed_loop_field_batch(fd, X)
    for x, dx, act in zip(X, dX, active):
        single, mode = closed_loop_field(fd, x)
        np.testing.assert_allclose(dx, single, rtol=1e-12, atol=1e-12)
        assert act == (mode is Mode.FILTERED)


def test_zero_theta_sq_is_reported():
    plant = Plant(A=np.array([[0.0, 1.0], [0.0, 0.0]]), B=np.array([[0.0], [1.0]]))
    # c^T B = 0, so relative degree 1 is wrong for this constraint
    with pytest.raises(ZeroThetaSq):
        input_direction(plant, Constraint(c=[1.0, 0.0], d=1.0, r=1), np.eye(1))


def test_state_dimension_is_checked(make_problem):
    plant, constraint, cfg = make_problem(n=3, m=1, r=1)
    fd = build_filter_data(plant, constraint, cfg)
    with pytest.raises(DimensionMismatch):
        filtered_control(fd, cfg, np.ones(4))
    with pytest.raises(DimensionMismatch):
        closed_loop_field(fd, np.ones((2, 3)))


def test_fixture_filter_quantities(fixture_filter):
    _, fd = fixture_filter("fig1-bottom-left")
    # a = B^T c for r = 1
    assert fd.theta_sq == pytest.approx((0.23 * -0.64 + -1.04 * 0.9) ** 2, rel=1e-12)
    assert fd.alpha == 5.0
    d = fd.to_dict()
    assert d["n"] == 2 and d["r"] == 1
    assert d["switching_surface"]["offset"] == pytest.approx(5.0 * 0.36)


@pytest.mark.slow
def test_field_is_continuous_on_the_switching_surface(rng):
    checked = 0
    while checked < 1000:
        n = int(rng.integers(2, 7))
        m = int(rng.integers(1, 3))
        r = int(rng.integers(1, (n - 1) // m + 2))
        plant, constraint, cfg = random_problem(rng, n, m, r)
        fd = build_filter_data(plant, constraint, cfg)
        X = 3.0 * rng.standard_normal((50, n))
        X = X - np.outer(fd.eta(X) / (fd.v2 @ fd.v2), fd.v2)
        for x in X:
            nominal = fd.A0 @ x
            filtered = fd.A_tilde @ x + fd.b_tilde
            scale = 1.0 + np.linalg.norm(fd.A_tilde, 2) * np.linalg.norm(x) + np.linalg.norm(fd.b_tilde)
            assert np.linalg.norm(nominal - filtered) <= 1e-9 * scale
            dx, mode = closed_loop_field(fd, x)
            assert np.linalg.norm(dx - nominal) <= 1e-9 * scale
            if fd.eta(x) >= 0:
                assert mode is Mode.NOMINAL
        checked += len(X)


@pytest.mark.slow
def test_filtered_control_beats_sampled_feasible_inputs(rng):
    def cost(cfg, x, u):
        e = u + cfg.K @ x
        return 0.5 * e @ cfg.G @ e

    compared = 0
    for _ in range(40):
        n = int(rng.integers(2, 6))
        m = int(rng.integers(1, 3))
        plant, constraint, cfg = random_problem(rng, n, m, 1)
        fd = build_filter_data(plant, constraint, cfg)
        x = 3.0 * rng.standard_normal(n)
        if fd.eta(x) >= 0:
            continue
        u_star = filtered_control(fd, cfg, x)
        best = cost(cfg, x, u_star)
        spread = 1.0 + np.linalg.norm(u_star)
        for u in u_star + spread * rng.standard_normal((200, m)):
            if hocbf_condition(fd, x, u) < 0:
                continue
            assert cost(cfg, x, u) >= best - 1e-9 * (1.0 + best)
            compared += 1
    assert compared > 500
