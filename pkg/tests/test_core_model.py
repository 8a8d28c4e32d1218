import numpy as np
import pytest

from ebsde_lab import core_model
from ebsde_lab.core_model import ModelSpec, RunConfig, validate_hamiltonian, validate_model
from ebsde_lab.errors import ConfigurationError, InvalidModelError
from conftest import make_ball_ham, make_const_ham, make_cos_ham, make_cubic, make_ou


def make_anti():
    # F(x) = +2x: anti-dissipative, slack should be exactly 2 |dx|^2
    return ModelSpec(dim=1, noise_dim=1, linear_drift=[[-1.0]],
                     nonlinear_drift=core_model.make_nonlinearity(
                         "custom-polynomial", coefficients=[0.0, 2.0]),
                     noise_map=[[1.0]], eta=1.0, poly_growth_k=1, name="anti")


def test_linear_model_passes_with_zero_slack():
    rep = validate_model(make_ou(), n_probe=16, radius=2.0, seed=3)
    assert rep.passed
    assert rep.max_slack == pytest.approx(0.0, abs=1e-12)


def test_cubic_model_passes():
    rep = validate_model(make_cubic(), n_probe=24, radius=2.0, seed=3)
    assert rep.passed
    assert rep.max_slack <= 0.0


def test_anti_dissipative_fails_with_positive_slack():
    rep = validate_model(make_anti(), n_probe=16, radius=2.0, seed=3)
    assert not rep.passed
    assert rep.max_slack > 0.0
    # deterministic pair {0, radius e1} alone gives slack 2 |dx|^2 = 8
    assert rep.max_slack >= 8.0 - 1e-9


def test_validate_model_deterministic():
    a = validate_model(make_cubic(), n_probe=32, radius=3.0, seed=11)
    b = validate_model(make_cubic(), n_probe=32, radius=3.0, seed=11)
    assert a.max_slack == b.max_slack
    assert a.growth_c == b.growth_c


@pytest.mark.parametrize("radius", [0.25, 1.0, 4.0, 16.0])
def test_radius_scaling_never_flips_verdict(radius):
    assert validate_model(make_ou(), 16, radius, seed=5).passed
    assert validate_model(make_cubic(), 16, radius, seed=5).passed
    assert not validate_model(make_anti(), 16, radius, seed=5).passed


def test_non_finite_drift_names_the_point():
    def bad(x):
        out = np.array(x, dtype=float, copy=True)
        out[..., 0] = np.nan
        return out

    model = ModelSpec(dim=2, noise_dim=2, linear_drift=-np.eye(2), nonlinear_drift=bad,
                      noise_map=np.eye(2), eta=1.0, name="bad")
    with pytest.raises(InvalidModelError, match="probe point"):
        validate_model(model, 8, 1.0, seed=0)


def test_growth_constant_fitted():
    rep = validate_model(make_cubic(), n_probe=64, radius=3.0, seed=9)
    # |x^3| <= c (1 + |x|^3) needs c close to 1 on a wide probe set
    assert 0.5 <= rep.growth_c <= 1.0 + 1e-9


def test_validate_hamiltonian_ball_constants():
    rep = validate_hamiltonian(make_ball_ham(0.5), n_probe=64, seed=0, radius=2.0)
    assert rep.passed
    assert rep.details["M"] == pytest.approx(1.0, abs=1e-9)
    assert rep.details["K_z"] == pytest.approx(0.5, abs=1e-9)


def test_validate_hamiltonian_constant_cost():
    rep = validate_hamiltonian(make_const_ham(3.0), n_probe=32, seed=0)
    assert rep.details["M"] == pytest.approx(3.0, abs=1e-12)
    assert rep.details["K_x"] == pytest.approx(0.0, abs=1e-12)
    assert rep.details["K_z"] == pytest.approx(0.0, abs=1e-12)


def test_validate_hamiltonian_brute_force_samples():
    # L(x, u) = cos(x) + u^2, R(u) = u over {-1, 0, 1}: enumerate by hand
    from ebsde_lab import hamiltonian as H

    ham = H.make_grid_hamiltonian(
        cost=lambda X, u: np.cos(np.atleast_2d(X)[..., 0]) + float(u) ** 2,
        control_points=[-1.0, 0.0, 1.0],
        control_map=lambda u: np.array([float(u)]),
        noise_dim=1, bound_c=2.0, lip_Lx=1.0)
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.normal(size=1)
        z = rng.normal(size=1)
        val = H.psi_eval(ham, x, z)
        brute = min(np.cos(x[0]) + u * u + z[0] * u for u in (-1.0, 0.0, 1.0))
        assert val.psi == pytest.approx(brute, abs=1e-12)


def test_empty_control_grid_rejected():
    from ebsde_lab import hamiltonian as H

    ham = H.make_grid_hamiltonian(
        cost=lambda X, u: np.zeros(np.atleast_2d(X).shape[0]),
        control_points=[0.0], control_map=lambda u: np.zeros(1),
        noise_dim=1, bound_c=1.0, lip_Lx=0.0)
    object.__setattr__(ham, "control_grid", ())
    with pytest.raises(ConfigurationError):
        validate_hamiltonian(ham, n_probe=8, seed=0)


def test_run_config_validates_schedule():
    with pytest.raises(ConfigurationError):
        RunConfig(alpha_schedule=(0.1, 0.2))
    with pytest.raises(ConfigurationError):
        RunConfig(alpha_schedule=(0.1, -0.05, 0.025))
    cfg = RunConfig(tolerances={"lip": 0.2})
    assert cfg.tol("lip") == 0.2
    assert cfg.tol("bound") == 0.05  # defaults merged in


def test_nonlinearity_registry():
    cubic = core_model.make_nonlinearity("cubic")
    assert cubic(np.array([2.0]))[0] == -8.0
    poly = core_model.make_nonlinearity("custom-polynomial", coefficients=[1.0, 0.0, 1.0])
    assert poly(np.array([2.0]))[0] == pytest.approx(5.0)
    with pytest.raises(ConfigurationError):
        core_model.make_nonlinearity("not-a-thing")
