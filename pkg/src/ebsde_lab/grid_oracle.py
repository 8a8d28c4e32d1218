"""Independent 1-D finite-difference solver for discounted and long-run HJB.

This is the desk-scale oracle used to cross-check every Monte Carlo result:
a monotone upwind discretization with policy iteration, so the discrete
comparison principle holds and the solver can certify benchmark constants.

Discounted equation on a bounded grid:

    alpha v = (g^2/2) v'' + b(x) v' + psi(x, v'(x) g),

with psi evaluated through its control representation (freeze the policy,
solve a tridiagonal linear system, re-optimize the policy from the upwinded
derivative).  The artificial boundary uses one-sided differences with the
second difference extrapolated to zero; the drift must point inward at both
ends even under the largest control shift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from . import hamiltonian as ham_mod
from .core_model import HamiltonianSpec
from .errors import ConfigurationError, OracleError

ERGODIC_ALPHAS = (1e-2, 5e-3, 2.5e-3)


@dataclass(frozen=True)
class Grid1D:
    x_min: float
    x_max: float
    n_nodes: int

    def __post_init__(self):
        if not (self.x_min < 0.0 < self.x_max):
            raise ConfigurationError("grid must satisfy x_min < 0 < x_max")
        if self.n_nodes < 101:
            raise ConfigurationError("grid needs at least 101 nodes")
        if self.zero_index is None:
            raise ConfigurationError("grid must contain the node x = 0 exactly")

    @property
    def h(self) -> float:
        return (self.x_max - self.x_min) / (self.n_nodes - 1)

    @property
    def nodes(self) -> np.ndarray:
        x = np.linspace(self.x_min, self.x_max, self.n_nodes)
        i = np.argmin(np.abs(x))
        if abs(x[i]) < 1e-12 * max(abs(self.x_min), self.x_max):
            x[i] = 0.0
        return x

    @property
    def zero_index(self) -> Optional[int]:
        x = np.linspace(self.x_min, self.x_max, self.n_nodes)
        i = int(np.argmin(np.abs(x)))
        if abs(x[i]) < 1e-12 * max(abs(self.x_min), self.x_max):
            return i
        return None

    @classmethod
    def symmetric(cls, halfwidth: float, n_nodes: int = 1001) -> "Grid1D":
        if n_nodes % 2 == 0:
            n_nodes += 1
        return cls(-halfwidth, halfwidth, n_nodes)


@dataclass(frozen=True)
class GridSolution:
    grid: Grid1D
    values: np.ndarray
    derivative: np.ndarray  # upwinded v'
    policy: np.ndarray      # noise-space control value g-advection is built from
    lambda_: Optional[float] = None
    residual: float = 0.0
    sweeps: int = 0

    def value_at_zero(self) -> float:
        return float(self.values[self.grid.zero_index])


def _drift_values(drift, x):
    b = np.asarray(drift(x), dtype=float)
    if b.shape != x.shape:
        b = np.array([float(drift(xi)) for xi in x])
    return b


def _upwind_derivative(v, btot, h):
    """One-sided derivative in the direction the total drift transports from."""
    dplus = np.empty_like(v)
    dminus = np.empty_like(v)
    dplus[:-1] = (v[1:] - v[:-1]) / h
    dplus[-1] = (v[-1] - v[-2]) / h
    dminus[1:] = (v[1:] - v[:-1]) / h
    dminus[0] = (v[1] - v[0]) / h
    return np.where(btot >= 0, dplus, dminus)


def _policy_on_grid(ham: HamiltonianSpec, x: np.ndarray, z: np.ndarray):
    """(psi, R values, running cost) for the minimizing control at each node."""
    psi, _, R_rows, L_vals = ham_mod.psi_argmin(ham, x[:, None], z[:, None])
    return np.asarray(psi, dtype=float), R_rows[:, 0], np.asarray(L_vals, dtype=float)


def solve_discounted_hjb_1d(grid: Grid1D, drift: Callable, g: float,
                            ham: HamiltonianSpec, alpha: float,
                            max_sweeps: int = 200,
                            tol: float = 1e-10) -> GridSolution:
    """Solve alpha v = (g^2/2) v'' + b v' + psi(x, v' g) by policy iteration."""
    if alpha <= 0:
        raise ConfigurationError("alpha must be positive")
    x = grid.nodes
    h = grid.h
    b = _drift_values(drift, x)
    r_max = float(np.max(np.abs(ham.control_matrix()))) if ham.control_grid else 0.0
    r_max = max(r_max, ham.delta)
    if not (b[0] - abs(g) * r_max > 0.0 > b[-1] + abs(g) * r_max):
        raise ConfigurationError(
            "drift must point inward at the artificial boundary even under the "
            f"largest control shift (b(x_min)={b[0]:g}, b(x_max)={b[-1]:g}, "
            f"g*max|R|={abs(g) * r_max:g})")

    n = grid.n_nodes
    D = 0.5 * g * g / (h * h)
    z = np.zeros(n)
    psi, r, L = _policy_on_grid(ham, x, z)
    v = np.zeros(n)
    residual_trace = []

    for sweep in range(1, max_sweeps + 1):
        btot = b + g * r
        lower = np.zeros(n)
        diag = np.full(n, alpha)
        upper = np.zeros(n)
        bp = np.maximum(btot, 0.0)
        bm = np.maximum(-btot, 0.0)
        # interior rows: monotone upwind advection + centered diffusion
        diag[1:-1] += 2.0 * D + (bp[1:-1] + bm[1:-1]) / h
        upper[1:-1] = -(D + bp[1:-1] / h)
        lower[1:-1] = -(D + bm[1:-1] / h)
        # boundary rows: zero second difference, advection one-sided inward
        diag[0] += btot[0] / h
        upper[0] = -btot[0] / h
        diag[-1] += -btot[-1] / h
        lower[-1] = btot[-1] / h

        banded = np.zeros((3, n))
        banded[0, 1:] = upper[:-1]
        banded[1, :] = diag
        banded[2, :-1] = lower[1:]
        try:
            v = scipy.linalg.solve_banded((1, 1), banded, L)
        except scipy.linalg.LinAlgError as exc:  # pragma: no cover
            raise OracleError(f"tridiagonal solve failed: {exc}") from exc

        dv = _upwind_derivative(v, btot, h)
        z = dv * g
        psi_new, r_new, L_new = _policy_on_grid(ham, x, z)

        d2v = np.zeros(n)
        d2v[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / (h * h)
        residual = alpha * v - 0.5 * g * g * d2v - b * dv - psi_new
        res_norm = float(np.max(np.abs(residual)))
        residual_trace.append(res_norm)

        r, L, psi = r_new, L_new, psi_new
        scale = 1.0 + float(np.max(np.abs(v)))
        # the residual uses the freshly re-optimized policy, so a small value
        # certifies both the linear solve and policy optimality at once
        if res_norm <= tol * scale:
            return GridSolution(grid=grid, values=v, derivative=dv, policy=r,
                                residual=res_norm, sweeps=sweep)
    raise OracleError(
        f"policy iteration did not converge in {max_sweeps} sweeps; "
        f"residual trace tail: {residual_trace[-5:]}")


def solve_ergodic_hjb_1d(grid: Grid1D, drift: Callable, g: float,
                         ham: HamiltonianSpec,
                         alphas=ERGODIC_ALPHAS) -> GridSolution:
    """Vanishing discount on the grid: extrapolate alpha v_alpha(0) to alpha = 0."""
    alphas = tuple(sorted(alphas, reverse=True))
    if len(alphas) < 2:
        raise ConfigurationError("need at least two discount rates to extrapolate")
    sols = [solve_discounted_hjb_1d(grid, drift, g, ham, a) for a in alphas]
    lam_alpha = np.array([a * s.value_at_zero() for a, s in zip(alphas, sols)])
    slope, intercept = np.polyfit(np.asarray(alphas), lam_alpha, 1)
    base = sols[-1]
    v = base.values - base.value_at_zero()
    return GridSolution(grid=grid, values=v, derivative=base.derivative,
                        policy=base.policy, lambda_=float(intercept),
                        residual=base.residual, sweeps=base.sweeps)


def invariant_density_1d(drift: Callable, g: float, grid: Grid1D) -> np.ndarray:
    """Stationary density rho(x) ~ exp((2/g^2) int_0^x b) on the grid nodes."""
    x = grid.nodes
    b = _drift_values(drift, x)
    h = grid.h
    between = 0.5 * (b[1:] + b[:-1]) * h
    integral = np.concatenate([[0.0], np.cumsum(between)])
    integral -= integral[grid.zero_index]
    expo = (2.0 / (g * g)) * integral
    expo -= np.max(expo)
    rho = np.exp(expo)
    mass = np.trapezoid(rho, x)
    if not np.isfinite(mass) or mass <= 0:
        raise OracleError("stationary density is not normalizable on this grid")
    rho = rho / mass
    # mass escaping at the boundary signals a non-integrable density
    edge = max(rho[0], rho[-1])
    if edge > 1e-4 * float(np.max(rho)):
        raise OracleError("stationary density has non-negligible boundary mass; "
                          "enlarge the grid or check integrability")
    return rho


def stationary_average(values: np.ndarray, rho: np.ndarray, grid: Grid1D) -> float:
    """Trapezoid integral of values against a density on the grid."""
    return float(np.trapezoid(values * rho, grid.nodes))


def controlled_drift(grid: Grid1D, sol: GridSolution, drift: Callable, g: float):
    """Total drift b + g R(policy) with the policy interpolated off the grid."""
    x_nodes = grid.nodes
    policy = sol.policy

    def total(x):
        x = np.asarray(x, dtype=float)
        return _drift_values(drift, np.atleast_1d(x)) + g * np.interp(
            np.atleast_1d(x), x_nodes, policy)

    return lambda x: total(x) if np.ndim(x) else float(total(x)[0])


def richardson_lambdas(drift, g, ham, halfwidth: float, n_nodes: int,
                       levels: int = 3):
    """Long-run constants on successively halved grids (h, h/2, h/4, ...)."""
    lams = []
    n = n_nodes
    for _ in range(levels):
        grid = Grid1D.symmetric(halfwidth, n)
        lams.append(solve_ergodic_hjb_1d(grid, drift, g, ham).lambda_)
        n = 2 * n - 1
    return lams
