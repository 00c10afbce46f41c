import numpy as np
import pytest

from cbf_lab.linear_model import (
    Constraint,
    DimensionMismatch,
    FilterConfig,
    InvalidConstraint,
    InvalidFilterConfig,
    NoRelativeDegree,
    NotStabilizable,
    Plant,
    build_constraint,
    build_hocbf_chain,
    check_compatible,
    compute_relative_degree,
    evaluate_chain,
    is_hurwitz,
    is_stabilizable,
    make_filter_config,
    pbh_uncontrollable_modes,
)


def test_plant_rejects_unstable_uncontrollable_mode():
    A = np.diag([1.0, -1.0])
    B = np.array([[0.0], [1.0]])
    assert not is_stabilizable(A, B)
    with pytest.raises(NotStabilizable):
        Plant(A=A, B=B)


def test_plant_accepts_stable_uncontrollable_mode():
    A = np.diag([-1.0, 2.0])
    B = np.array([[0.0], [1.0]])
    plant = Plant(A=A, B=B)
    modes = pbh_uncontrollable_modes(plant.A, plant.B)
    assert len(modes) == 1
    assert modes[0] == pytest.approx(-1.0)


def test_plant_arrays_are_read_only(double_integrator):
    with pytest.raises(ValueError):
        double_integrator.A[0, 0] = 5.0


def test_plant_dimension_checks():
    with pytest.raises(DimensionMismatch):
        Plant(A=np.ones((2, 3)), B=np.ones((2, 1)))
    with pytest.raises(DimensionMismatch):
        Plant(A=-np.eye(2), B=np.ones((3, 1)))


def test_relative_degree_of_double_integrator(double_integrator):
    assert compute_relative_degree(double_integrator, [1.0, 0.0]) == 2
    assert compute_relative_degree(double_integrator, [0.0, 1.0]) == 1


def test_no_relative_degree_when_output_is_decoupled():
    plant = Plant(A=np.diag([-1.0, -2.0]), B=np.array([[1.0], [0.0]]))
    with pytest.raises(NoRelativeDegree):
        compute_relative_degree(plant, [0.0, 1.0])


def test_constraint_validation(double_integrator):
    with pytest.raises(InvalidConstraint):
        build_constraint(double_integrator, [1.0, 0.0], d=0.0)
    with pytest.raises(InvalidConstraint):
        build_constraint(double_integrator, [0.0, 0.0], d=1.0)
    with pytest.raises(InvalidConstraint):
        Constraint(c=[1.0, 0.0], d=1.0, r=3)
    with pytest.raises(DimensionMismatch):
        build_constraint(double_integrator, [1.0, 0.0, 0.0], d=1.0)


def test_filter_config_validation():
    with pytest.raises(InvalidFilterConfig):
        FilterConfig(K=[[1.0, 1.0]], G=[[-1.0]], alphas=[1.0])
    with pytest.raises(InvalidFilterConfig):
        FilterConfig(K=[[1.0, 1.0]], G=[[1.0]], alphas=[0.0])
    with pytest.raises(InvalidFilterConfig):
        FilterConfig(K=np.ones((2, 2)), G=[[1.0, 0.5], [0.0, 1.0]], alphas=[1.0])
    with pytest.raises(DimensionMismatch):
        FilterConfig(K=np.ones((2, 2)), G=np.eye(3), alphas=[1.0])


def test_filter_config_accepts_row_vector_gain():
    cfg = FilterConfig(K=[0.33, 0.88], G=1.0, alphas=5.0)
    assert cfg.K.shape == (1, 2)
    assert cfg.G.shape == (1, 1)
    assert cfg.alphas == (5.0,)


def test_make_filter_config_defaults(double_integrator):
    constraint = build_constraint(double_integrator, [1.0, 0.0], d=1.0)
    cfg = make_filter_config(double_integrator, constraint, K=[[1.0, 2.0]])
    np.testing.assert_array_equal(cfg.G, np.eye(1))
    assert cfg.alphas == (1.0, 1.0)


def test_check_compatible_requires_hurwitz_a0(double_integrator):
    constraint = build_constraint(double_integrator, [1.0, 0.0], d=1.0)
    with pytest.raises(InvalidFilterConfig, match="Hurwitz"):
        make_filter_config(double_integrator, constraint, K=[[-1.0, 2.0]])
    cfg = FilterConfig(K=[[1.0, 2.0]], G=[[1.0]], alphas=[1.0])
    with pytest.raises(InvalidFilterConfig, match="alphas"):
        check_compatible(double_integrator, constraint, cfg)


def test_is_hurwitz_uses_relative_margin():
    assert is_hurwitz(np.diag([-1.0, -2.0]))
    assert not is_hurwitz(np.diag([-1.0, 0.0]))
    assert not is_hurwitz(np.array([[0.0, 1.0], [-1.0, 0.0]]))


def test_hocbf_chain_of_double_integrator(double_integrator):
    constraint = build_constraint(double_integrator, [1.0, 0.0], d=1.0)
    chain = build_hocbf_chain(double_integrator, constraint, (2.0, 3.0))
    # phi(s) = (s + 2)(s + 3) = s^2 + 5 s + 6
    np.testing.assert_allclose(chain.phi_coeffs, [1.0, 5.0, 6.0])
    np.testing.assert_allclose(chain.chain_rows, [[1.0, 0.0], [2.0, 1.0]])
    np.testing.assert_allclose(chain.chain_offsets, [1.0, 2.0])
    np.testing.assert_allclose(chain.terminal_row, [6.0, 5.0])
    assert chain.alpha == pytest.approx(6.0)
    assert chain.r == 2


def test_chain_recursion_holds_along_the_flow(make_problem):
    plant, constraint, cfg = make_problem(n=4, m=1, r=3)
    chain = build_hocbf_chain(plant, constraint, cfg.alphas)
    x = np.array([0.3, -1.2, 0.7, 2.0])
    u = np.array([0.4])
    xdot = plant.A @ x + plant.B @ u
    h = evaluate_chain(chain, x)
    for i in range(1, chain.r):
        dh_prev = chain.chain_rows[i - 1] @ xdot
        assert h[i] == pytest.approx(dh_prev + cfg.alphas[i - 1] * h[i - 1], rel=1e-10, abs=1e-10)


def test_evaluate_chain_batch_shape(make_problem):
    plant, constraint, cfg = make_problem(n=3, m=1, r=2)
    chain = build_hocbf_chain(plant, constraint, cfg.alphas)
    X = np.ones((5, 3))
    assert evaluate_chain(chain, X).shape == (5, 2)
    with pytest.raises(DimensionMismatch):
        evaluate_chain(chain, np.ones(4))
