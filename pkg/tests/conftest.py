import numpy as np
import pytest
import scipy.linalg
import scipy.signal

from cbf_lab.filter_core import build_filter_data
from cbf_lab.linear_model import Constraint, FilterConfig, NotStabilizable, Plant, compute_relative_degree
from cbf_lab.problem_io import load_fixture


def _random_constraint_row(rng: np.random.Generator, A: np.ndarray, B: np.ndarray, r: int) -> np.ndarray:
    """c orthogonal to B, AB, ..., A^(r-2) B, so c^T A^i B = 0 for i < r - 1."""
    n = A.shape[0]
    if r == 1:
        return rng.standard_normal(n)
    blocks = [np.linalg.matrix_power(A, i) @ B for i in range(r - 1)]
    basis = scipy.linalg.null_space(np.hstack(blocks).T)
    return basis @ rng.standard_normal(basis.shape[1])


def random_problem(rng: np.random.Generator, n: int, m: int, r: int, K=None, G=None, alphas=None):
    """
    Random plant, constraint of relative degree r and filter parameters with
    A0 Hurwitz (poles placed in [-3, -0.5]). Draws are repeated until the
    relative degree is well posed.
    """
    if m * (r - 1) >= n:
        raise ValueError(f"relative degree {r} is not reachable with n={n}, m={m}")
    while True:
        A = rng.standard_normal((n, n))
        B = rng.standard_normal((n, m))
        c = _random_constraint_row(rng, A, B, r)
        c /= np.linalg.norm(c)
        lead = np.linalg.norm(c @ np.linalg.matrix_power(A, r - 1) @ B)
        if lead < 1e-3 * np.linalg.norm(A, 2) ** (r - 1) * np.linalg.norm(B, 2):
            continue
        try:
            plant = Plant(A=A, B=B)
        except NotStabilizable:
            continue
        if compute_relative_degree(plant, c) != r:
            continue
        break

    if K is None:
        poles = -np.sort(rng.uniform(0.5, 3.0, n))
        K = scipy.signal.place_poles(A, B, poles).gain_matrix
    if G is None:
        L = rng.standard_normal((m, m))
        G = L @ L.T + 0.5 * np.eye(m)
    if alphas is None:
        alphas = rng.uniform(0.5, 5.0, r)
    constraint = Constraint(c=c, d=float(rng.uniform(0.2, 2.0)), r=r)
    cfg = FilterConfig(K=K, G=G, alphas=alphas)
    return plant, constraint, cfg


def random_gain(rng: np.random.Generator, plant: Plant) -> np.ndarray:
    poles = -np.sort(rng.uniform(0.5, 3.0, plant.n))
    return scipy.signal.place_poles(plant.A, plant.B, poles).gain_matrix


def valid_shapes(n_values=range(2, 7), m_values=(1, 2)):
    """Every (n, m, r) with m (r - 1) < n."""
    return [(n, m, r) for n in n_values for m in m_values for r in range(1, n + 1) if m * (r - 1) < n]


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


@pytest.fixture
def make_problem(rng):
    def _make(n=3, m=1, r=1, **kwargs):
        return random_problem(rng, n, m, r, **kwargs)

    return _make


@pytest.fixture
def fixture_filter():
    """Loads a bundled fixture and returns (problem, filter data)."""
    def _load(name):
        problem = load_fixture(name)
        return problem, build_filter_data(problem.plant, problem.constraint, problem.filter_config)

    return _load


@pytest.fixture
def double_integrator():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([[0.0], [1.0]])
    return Plant(A=A, B=B)
