import math

import numpy as np
import pytest

from ebsde_lab import forward_sim, grid_oracle
from ebsde_lab.core_model import ModelSpec, make_nonlinearity
from ebsde_lab.errors import ConfigurationError, DivergenceError
from conftest import make_cos_ham, make_cubic, make_ou


def make_noiseless():
    return ModelSpec(dim=1, noise_dim=1, linear_drift=[[-1.0]],
                     nonlinear_drift=make_nonlinearity("zero"),
                     noise_map=[[0.0]], eta=1.0, name="decay")


def brute_euler_ou_variance(t=1.0, dt=1e-4, n_paths=20000, seed=123):
    """Independent oracle: plain explicit Euler-Maruyama for dX = -X dt + dW."""
    rng = np.random.default_rng(seed)
    x = np.zeros(n_paths)
    for _ in range(int(round(t / dt))):
        x = x - dt * x + math.sqrt(dt) * rng.standard_normal(n_paths)
    return x.var()


def test_linear_ode_decay():
    traj = forward_sim.simulate_path(make_noiseless(), [2.0], 1e-3, 1000, seed=7)
    assert traj.states[-1, 0] == pytest.approx(2 * math.exp(-1.0), abs=2e-3)
    assert traj.times[-1] == pytest.approx(1.0)


def test_equilibrium_stays_put():
    traj = forward_sim.simulate_path(make_noiseless(), [0.0], 1e-2, 300, seed=1)
    assert np.all(traj.states == 0.0)


def test_ou_variance_matches_formula_and_brute_force():
    ou = make_ou()
    X = forward_sim.run_ensemble(ou, np.zeros((10000, 1)), 1e-3, 1000, seed=11)
    var = X.var()
    exact = (1 - math.exp(-2.0)) / 2
    stderr = exact * math.sqrt(2.0 / 10000)
    assert abs(var - exact) <= 3 * stderr
    brute = brute_euler_ou_variance()
    assert abs(var - brute) <= 3 * stderr + 3 * exact * math.sqrt(2.0 / 20000)


def test_trajectory_bit_reproducible():
    cubic = make_cubic()
    a = forward_sim.simulate_path(cubic, [1.0], 0.01, 500, seed=99)
    b = forward_sim.simulate_path(cubic, [1.0], 0.01, 500, seed=99)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.noise_increments, b.noise_increments)


def test_noise_increment_statistics():
    traj_block = forward_sim.noise_block(5, 0, 10, 10000, 1, dt=0.01)
    mean = traj_block.mean()
    var = traj_block.var()
    n = traj_block.size
    assert abs(mean) <= 4 * math.sqrt(0.01 / n)
    assert abs(var - 0.01) <= 0.05 * 0.01


def test_coupled_pair_linear_exact_ratio():
    ou = make_ou()
    t0, t1 = forward_sim.coupled_pair(ou, [1.5], [-0.5], 1e-3, 2000, seed=21)
    assert np.array_equal(t0.noise_increments, t1.noise_increments)
    gaps = np.abs(t0.states[:, 0] - t1.states[:, 0]) / 2.0
    for t in (0.5, 1.0, 2.0):
        k = int(round(t / 1e-3))
        assert gaps[k] == pytest.approx(math.exp(-t), rel=1e-3)


def test_coupled_pair_cubic_contracts_pathwise():
    cubic = make_cubic()
    t0, t1 = forward_sim.coupled_pair(cubic, [1.5], [-0.5], 1e-3, 1000, seed=4)
    gap = np.abs(t0.states[:, 0] - t1.states[:, 0]) / 2.0
    times = t0.times
    assert np.all(gap <= np.exp(-times) * (1 + 1e-2))


def test_coupled_pair_identical_states():
    cubic = make_cubic()
    t0, t1 = forward_sim.coupled_pair(cubic, [0.7], [0.7], 1e-2, 200, seed=3)
    assert np.array_equal(t0.states, t1.states)


def test_estimate_invariant_ou_moments():
    ou = make_ou()
    meas = forward_sim.estimate_invariant(ou, dt=0.02, burn_in_steps=500,
                                          n_samples=4000, thinning=50, seed=8)
    x = meas.samples[:, 0]
    assert meas.burn_in_time == pytest.approx(10.0)
    var_err = 0.5 * math.sqrt(2.0 / len(x))
    assert abs(x.var() - 0.5) <= 3 * var_err + 0.01
    assert abs(x.mean()) <= 3 * math.sqrt(0.5 / len(x)) + 0.01


def test_estimate_invariant_requires_burn_in():
    with pytest.raises(ConfigurationError):
        forward_sim.estimate_invariant(make_ou(), dt=0.01, burn_in_steps=10,
                                       n_samples=10, thinning=1, seed=0)


def test_invariant_cubic_matches_grid_density(bench_grid):
    cubic = make_cubic()
    meas = forward_sim.estimate_invariant(cubic, dt=0.02, burn_in_steps=500,
                                          n_samples=6000, thinning=50, seed=12)
    emp = np.cos(meas.samples[:, 0]).mean()
    rho = grid_oracle.invariant_density_1d(lambda x: -x - x ** 3, 1.0, bench_grid)
    ref = grid_oracle.stationary_average(np.cos(bench_grid.nodes), rho, bench_grid)
    assert abs(emp - ref) <= 0.02 * abs(ref) + 0.01


def test_semigroup_t0_is_identity():
    mean, stderr = forward_sim.semigroup_estimate(
        make_ou(), lambda X: np.cos(X[:, 0]), [0.7], 0.0, 100, 0.01, seed=5)
    assert mean == pytest.approx(math.cos(0.7), abs=1e-15)
    assert stderr == 0.0


def test_semigroup_constant_phi():
    mean, stderr = forward_sim.semigroup_estimate(
        make_ou(), lambda X: np.ones(X.shape[0]), [0.3], 1.0, 500, 0.02, seed=5)
    assert mean == pytest.approx(1.0)
    assert stderr == 0.0


def test_semigroup_long_time_gaussian_limit():
    mean, stderr = forward_sim.semigroup_estimate(
        make_ou(), lambda X: np.cos(X[:, 0]), [0.0], 8.0, 20000, 0.01, seed=6)
    assert abs(mean - math.exp(-0.25)) <= 3 * stderr + 2e-3


def test_mixing_curve_ou():
    curve = forward_sim.mixing_curve(make_ou(), lambda X: np.cos(X[:, 0]), [2.0],
                                     times=[0.0, 0.5, 1.0, 1.5, 2.0, 2.5],
                                     n_paths=20000, dt=0.02, seed=13)
    t0, gap0, _ = curve.points[0]
    assert t0 == 0.0
    assert gap0 == pytest.approx(abs(math.cos(2.0) - curve.mu_phi), abs=1e-12)
    assert curve.slope <= -0.5 + 0.1


def test_mixing_curve_constant_phi_flat():
    curve = forward_sim.mixing_curve(make_ou(), lambda X: np.full(X.shape[0], 2.0),
                                     [1.0], times=[0.0, 1.0, 2.0],
                                     n_paths=2000, dt=0.02, seed=14)
    assert all(g <= 5 * s + 1e-12 for _, g, s in curve.points)
    assert math.isnan(curve.slope)


def test_moment_check_ou_from_origin():
    rep = forward_sim.moment_check(make_ou(), [0.0], dt=0.02, horizon=8.0,
                                   n_paths=20000, seed=15)
    half_normal = math.sqrt(2 * 0.5 / math.pi)
    worst_sem = max(r[2] for r in rep.checkpoints)
    assert rep.sup_mean_norm <= half_normal + 3 * worst_sem + 0.01


def test_moment_check_noiseless_contraction():
    rep = forward_sim.moment_check(make_noiseless(), [3.0], dt=0.01, horizon=5.0,
                                   n_paths=4, seed=16)
    assert rep.sup_mean_norm <= 3.0 + 1e-12
    assert rep.fitted_C <= 3.0 / 4.0 + 1e-12


def test_moment_check_cubic_decay_curve():
    rep = forward_sim.moment_check(make_cubic(), [10.0], dt=5e-4, horizon=6.0,
                                   n_paths=256, seed=17)
    stationary = 1.0
    for t, mean_norm, sem in rep.checkpoints:
        assert mean_norm <= 10.0 * math.exp(-t) + stationary + 3 * sem


def test_moment_check_bounded_drift_shift():
    # bounded shift keeps sup E|X_t| finite with a C depending on the bound
    rep = forward_sim.moment_check(make_ou(), [0.0], dt=0.02, horizon=10.0,
                                   n_paths=4000, seed=18,
                                   drift_shift=lambda X: np.full((X.shape[0], 1), 0.5))
    assert rep.sup_mean_norm <= 0.5 + math.sqrt(2 * 0.5 / math.pi) + 0.05


def test_blowup_guard_names_step():
    expl = ModelSpec(dim=1, noise_dim=1, linear_drift=[[-1.0]],
                     nonlinear_drift=make_nonlinearity(
                         "custom-polynomial", coefficients=[0.0, 0.0, 0.0, 5.0]),
                     noise_map=[[0.0]], eta=1.0, poly_growth_k=3, name="explosive")
    with pytest.raises(DivergenceError) as err:
        forward_sim.simulate_path(expl, [3.0], 0.5, 50, seed=0)
    assert err.value.step is not None


def test_trajectory_invariants():
    traj = forward_sim.simulate_path(make_ou(), [0.5], 0.01, 256, seed=20)
    dts = np.diff(traj.times)
    assert np.allclose(dts, 0.01)
    assert len(traj.states) == len(traj.times)
    assert len(traj.noise_increments) == len(traj.times) - 1
