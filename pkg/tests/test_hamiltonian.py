import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ebsde_lab import hamiltonian as H
from ebsde_lab.errors import ContractViolationError, EvaluationError
from conftest import make_ball_ham, make_const_ham


def grid_ball_1d(delta=0.5, n=101):
    """Explicit grid discretization of the 1-D delta-ball control set."""
    return H.make_grid_hamiltonian(
        cost=lambda X, u: np.cos(np.atleast_2d(X)[..., 0]),
        control_points=list(np.linspace(-delta, delta, n)),
        control_map=lambda u: np.array([float(u)]),
        noise_dim=1, bound_c=1.0, lip_Lx=1.0)


def test_psi_eval_interval_minimum():
    ham = grid_ball_1d()
    val = H.psi_eval(ham, [0.0], [1.0])
    assert val.psi == pytest.approx(0.5, abs=1e-12)
    assert float(np.ravel(val.argmin_u)[0]) == pytest.approx(-0.5)


def test_psi_eval_zero_z_tie_rule():
    # u-independent cost at z = 0: every candidate ties, first grid point wins
    ham = grid_ball_1d(n=11)
    val = H.psi_eval(ham, [0.3], [0.0])
    assert float(np.ravel(val.argmin_u)[0]) == ham.control_grid[0]
    assert val.gap == pytest.approx(0.0, abs=1e-15)


def test_psi_eval_three_point_enumeration():
    ham = H.make_grid_hamiltonian(
        cost=lambda X, u: np.full(np.atleast_2d(X).shape[0], float(u) ** 2),
        control_points=[-1.0, 0.0, 1.0],
        control_map=lambda u: np.array([float(u)]),
        noise_dim=1, bound_c=2.0, lip_Lx=0.0)
    val = H.psi_eval(ham, [7.3], [0.5])
    assert val.psi == pytest.approx(0.0)
    assert float(val.argmin_u) == 0.0
    assert val.gap == pytest.approx(0.5)  # second best is 1 - 0.5


def test_non_finite_cost_names_control():
    ham = H.make_grid_hamiltonian(
        cost=lambda X, u: np.full(np.atleast_2d(X).shape[0],
                                  np.inf if u > 0 else 0.0),
        control_points=[0.0, 1.0], control_map=lambda u: np.array([float(u)]),
        noise_dim=1, bound_c=1.0, lip_Lx=0.0)
    with pytest.raises(EvaluationError, match="1.0"):
        H.psi_eval(ham, [0.0], [0.0])


def test_ball_closed_form_values():
    val = H.psi_ball_closed_form(0.0, [3.0, 4.0], 1.0)
    assert val.psi == pytest.approx(-5.0)
    assert np.allclose(val.argmin_u, [-0.6, -0.8])
    z0 = H.psi_ball_closed_form(2.0, [0.0, 0.0], 1.0)
    assert z0.psi == pytest.approx(2.0)
    assert np.allclose(z0.argmin_u, 0.0)


def test_ball_closed_form_matches_grid_to_resolution():
    delta = 0.5
    ham_grid = grid_ball_1d(delta, n=101)
    gap = 2 * delta / 100
    rng = np.random.default_rng(1)
    for _ in range(25):
        x, z = rng.normal(size=1), 2.0 * rng.normal(size=1)
        exact = H.psi_ball_closed_form(float(np.cos(x[0])), z, delta)
        approx = H.psi_eval(ham_grid, x, z)
        assert abs(exact.psi - approx.psi) <= delta * gap * abs(z[0]) + 1e-12


def test_ball_dispatch_rejects_u_dependent_cost():
    bad = H.make_grid_hamiltonian(
        cost=lambda X, u: np.full(np.atleast_2d(X).shape[0], float(u)),
        control_points=[0.0, 1.0], control_map=lambda u: np.array([float(u)]),
        noise_dim=1, bound_c=1.0, lip_Lx=0.0)
    import dataclasses
    tagged = dataclasses.replace(bad, closed_form="ball-linear", delta=0.5)
    with pytest.raises(ContractViolationError):
        H.psi_values(tagged, np.zeros((1, 1)), np.ones((1, 1)))


def test_lipschitz_constants_ball():
    consts = H.lipschitz_constants(make_ball_ham(0.5), n_probe=64, radius=2.0, seed=0)
    assert consts.M == pytest.approx(1.0, abs=1e-9)
    assert consts.K_z == pytest.approx(0.5, abs=1e-9)
    assert consts.K_x == pytest.approx(1.0, rel=0.02)


def test_lipschitz_constants_constant():
    consts = H.lipschitz_constants(make_const_ham(2.0), n_probe=32, radius=2.0, seed=0)
    assert consts.K_x == 0.0
    assert consts.K_z == 0.0


def test_kz_never_exceeds_control_bound():
    # |R(u)| <= c forces z-Lipschitz constant at most c
    for n in (5, 21, 101):
        ham = grid_ball_1d(0.7, n)
        consts = H.lipschitz_constants(ham, n_probe=32, radius=3.0, seed=2)
        assert consts.K_z <= 0.7 + 1e-9


@settings(max_examples=40, deadline=None)
@given(x=st.floats(-3, 3), z1=st.floats(-4, 4), z2=st.floats(-4, 4))
def test_concavity_in_z_midpoint(x, z1, z2):
    ham = grid_ball_1d(0.5, n=21)
    mid = H.psi_eval(ham, [x], [(z1 + z2) / 2]).psi
    ends = 0.5 * (H.psi_eval(ham, [x], [z1]).psi + H.psi_eval(ham, [x], [z2]).psi)
    assert mid >= ends - 1e-12


@settings(max_examples=25, deadline=None)
@given(x=st.floats(-3, 3), z=st.floats(-4, 4), data=st.data())
def test_psi_is_a_lower_bound_over_the_grid(x, z, data):
    ham = grid_ball_1d(0.5, n=21)
    val = H.psi_eval(ham, [x], [z])
    idx = data.draw(st.integers(0, len(ham.control_grid) - 1))
    u = ham.control_grid[idx]
    candidate = float(np.cos(x)) + z * float(np.ravel(u)[0])
    assert val.psi <= candidate + 1e-12


def test_tie_break_repeatable():
    ham = grid_ball_1d(0.5, n=21)
    vals = [H.psi_eval(ham, [0.2], [0.0]) for _ in range(5)]
    assert all(float(np.ravel(v.argmin_u)[0]) ==
               float(np.ravel(vals[0].argmin_u)[0]) for v in vals)


def test_batch_matches_pointwise():
    ham = grid_ball_1d(0.5, n=21)
    rng = np.random.default_rng(3)
    X = rng.normal(size=(50, 1))
    Z = rng.normal(size=(50, 1))
    batch = H.psi_values(ham, X, Z)
    for i in range(50):
        assert batch[i] == pytest.approx(H.psi_eval(ham, X[i], Z[i]).psi, abs=1e-12)


def test_shift_cost_shifts_psi_exactly():
    ham = make_ball_ham(0.5)
    shifted = H.shift_cost(ham, 2.5)
    X = np.array([[0.4]])
    Z = np.array([[1.3]])
    assert H.psi_values(shifted, X, Z)[0] == pytest.approx(
        H.psi_values(ham, X, Z)[0] + 2.5, abs=1e-12)
