"""Shared fixtures: benchmark models, Hamiltonians and the expensive
session-scoped solver runs reused by several test modules."""

import numpy as np
import pytest

from ebsde_lab import core_model, grid_oracle, hamiltonian
from ebsde_lab.bsde_discount import BasisSpec
from ebsde_lab.core_model import ModelSpec, RunConfig


def make_ou(g=1.0, dim=1, rate=1.0):
    return ModelSpec(dim=dim, noise_dim=dim, linear_drift=-rate * np.eye(dim),
                     nonlinear_drift=core_model.make_nonlinearity("zero"),
                     noise_map=g * np.eye(dim), eta=rate, poly_growth_k=0,
                     name="ou")


def make_cubic(g=1.0):
    return ModelSpec(dim=1, noise_dim=1, linear_drift=[[-1.0]],
                     nonlinear_drift=core_model.make_nonlinearity("cubic"),
                     noise_map=[[g]], eta=1.0, poly_growth_k=3, name="cubic-1d")


def cos_cost(X, u):
    return np.cos(np.atleast_2d(X)[..., 0])


def make_cos_ham():
    """Uncontrolled driver psi(x, z) = cos(x): single zero-action control."""
    return hamiltonian.make_grid_hamiltonian(
        cost=cos_cost, control_points=[0.0],
        control_map=lambda u: np.zeros(1),
        noise_dim=1, bound_c=1.0, lip_Lx=1.0, name="cos-uncontrolled")


def make_const_ham(c):
    return hamiltonian.make_grid_hamiltonian(
        cost=lambda X, u: np.full(np.atleast_2d(X).shape[0], float(c)),
        control_points=[0.0], control_map=lambda u: np.zeros(1),
        noise_dim=1, bound_c=abs(c) + 1e-12, lip_Lx=0.0, name=f"const{c}")


def make_ball_ham(delta=0.5):
    """Controlled driver psi(x, z) = cos(x) - delta |z|."""
    return hamiltonian.make_ball_hamiltonian(
        lambda X: np.cos(np.atleast_2d(X)[..., 0]), delta,
        noise_dim=1, bound_l=1.0, lip_l=1.0, name="cos-ball")


@pytest.fixture(scope="session")
def ou_model():
    return make_ou()


@pytest.fixture(scope="session")
def cubic_model():
    return make_cubic()


@pytest.fixture(scope="session")
def cos_ham():
    return make_cos_ham()


@pytest.fixture(scope="session")
def ball_ham():
    return make_ball_ham()


@pytest.fixture(scope="session")
def bench_grid():
    return grid_oracle.Grid1D.symmetric(5.0, 1001)


@pytest.fixture(scope="session")
def grid_uncontrolled(bench_grid, cos_ham):
    """Oracle long-run solution for the OU + cos benchmark."""
    return grid_oracle.solve_ergodic_hjb_1d(bench_grid, lambda x: -x, 1.0, cos_ham)


@pytest.fixture(scope="session")
def grid_controlled(bench_grid, ball_ham):
    """Oracle long-run solution for psi = cos(x) - 0.5 |z|."""
    return grid_oracle.solve_ergodic_hjb_1d(bench_grid, lambda x: -x, 1.0, ball_ham)


BENCH_POINTS = tuple(np.array([v]) for v in (-1.5, -1.0, -0.5, 0.5, 1.0, 1.5))


@pytest.fixture(scope="session")
def ou_solution(ou_model, cos_ham):
    """Benchmark-quality vanishing-discount run for OU + cos (criteria 2-4, 8)."""
    from ebsde_lab import vanishing_discount

    cfg = RunConfig(dt=0.04, n_paths=50000, seed=424,
                    basis=BasisSpec(kind="poly", degree=8),
                    alpha_schedule=(0.2, 0.1, 0.05, 0.025),
                    tail_eps=5e-3, init_radius=2.0)
    return vanishing_discount.run_schedule(ou_model, cos_ham, cfg, BENCH_POINTS)


@pytest.fixture(scope="session")
def controlled_solution(ou_model, ball_ham):
    """Vanishing-discount run for the controlled 1-D benchmark (criterion 7)."""
    from ebsde_lab import vanishing_discount

    cfg = RunConfig(dt=0.03, n_paths=30000, seed=77,
                    basis=BasisSpec(kind="poly", degree=8),
                    alpha_schedule=(0.2, 0.1, 0.05),
                    tail_eps=5e-3, init_radius=2.0)
    return vanishing_discount.run_schedule(ou_model, ball_ham, cfg, BENCH_POINTS[1:-1])


def criterion(name, ok, detail=""):
    line = f"[acceptance] {name}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  ({detail})"
    print(line, flush=True)
    assert ok, line
