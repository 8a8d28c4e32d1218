"""Vanishing-discount limit: assemble (vbar, zetabar, lambda) from a schedule.

For each alpha in a strictly decreasing schedule the discounted solver yields
v_alpha; the centered values v_alpha(x) - v_alpha(0) stabilize to vbar while
alpha * v_alpha(0) converges to the long-run constant.  lambda is taken as
the linear-in-alpha extrapolation of the last three schedule points (the
convergence has no proven rate; empirically the curve is near-affine), and
the function handles come from the smallest alpha, whose uniform Lipschitz
bound certifies stability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import bsde_discount, forward_sim
from . import hamiltonian as ham_mod
from .core_model import HamiltonianSpec, ModelSpec, RunConfig
from .errors import ConfigurationError, ConvergenceFailureError


@dataclass(frozen=True)
class ScheduleEntry:
    alpha: float
    lambda_alpha: float
    v_change: float  # sup change of centered values on the test points
    horizon_T: float
    n_paths: int


@dataclass(frozen=True, eq=False)
class EbsdeSolution:
    """Long-run solution (vbar, zetabar, lambda) with its convergence record."""

    vbar: Callable
    zetabar: Callable
    lam: float
    lam_stderr: float
    schedule_record: tuple
    base: bsde_discount.DiscountSolution  # smallest-alpha fit backing the handles
    cfg: RunConfig
    test_points: tuple
    M: float
    K_x: float
    K_z: float
    eta: float
    discount_solutions: tuple = ()  # every per-alpha fit, largest alpha first

    def in_training_hull(self, x, margin: float = 0.0) -> bool:
        return self.base.in_training_hull(x, margin)


def extrapolate_lambda(alphas: Sequence[float], lams: Sequence[float]):
    """Least-squares line through (alpha, lambda_alpha), reported at alpha = 0.

    Returns (intercept, stderr) with the usual OLS intercept error from the
    fit residuals (zero when the points are exactly affine).
    """
    a = np.asarray(alphas, dtype=float)
    y = np.asarray(lams, dtype=float)
    if len(a) < 2:
        raise ConfigurationError("need at least two points to extrapolate")
    slope, intercept = np.polyfit(a, y, 1)
    fitted = intercept + slope * a
    dof = len(a) - 2
    if dof <= 0:
        return float(intercept), 0.0
    sigma2 = float(np.sum((y - fitted) ** 2)) / dof
    abar = float(np.mean(a))
    sxx = float(np.sum((a - abar) ** 2))
    stderr = math.sqrt(sigma2 * (1.0 / len(a) + abar * abar / sxx))
    return float(intercept), stderr


def check_schedule_monotone(alphas, lams, lam, lam_stderr):
    """|lambda_alpha - lambda| must not increase as alpha decreases.

    A small slack absorbs Monte Carlo jitter once the gaps are tiny; a genuine
    increase signals a diverging schedule.
    """
    gaps = [abs(l - lam) for l in lams]
    slack = max(1e-10, 2.0 * lam_stderr, 1e-4 * abs(lam))
    for earlier, later in zip(gaps, gaps[1:]):
        if later > earlier + slack:
            return False
    return True


def run_schedule(model: ModelSpec, ham: HamiltonianSpec, cfg: RunConfig,
                 test_points: Sequence) -> EbsdeSolution:
    """Drive the discounted solver over cfg.alpha_schedule and take the limit."""
    schedule = cfg.alpha_schedule
    if len(schedule) < 3:
        raise ConfigurationError("alpha schedule needs at least three entries")
    test_points = tuple(np.atleast_1d(np.asarray(q, dtype=float)) for q in test_points)

    n_inv = cfg.n_paths // 2
    invariant_pool = None
    if n_inv > 0:
        burn = int(math.ceil(10.0 / model.eta / cfg.dt))
        thin = max(1, int(round(1.0 / model.eta / cfg.dt)))
        invariant_pool = forward_sim.estimate_invariant(
            model, cfg.dt, burn, n_inv, thin, cfg.seed).samples

    entries = []
    sols = []
    lam_alphas = []
    prev_centered = None
    for i, alpha in enumerate(schedule):
        cfg_i = replace(cfg, seed=cfg.seed + 7919 * (i + 1))
        sol = bsde_discount.solve_discounted(
            model, ham, alpha, cfg_i,
            invariant_pool=invariant_pool, query_points=test_points)
        v0 = sol.value(np.zeros(model.dim))
        # the zero-terminal truncation scales the constant component of v_alpha
        # by exactly 1 - (1 + alpha dt)^-N; divide it back out so lambda_alpha
        # is unbiased for drivers dominated by their mean level
        n_steps = sol.diagnostics["n_steps"]
        trunc = 1.0 - (1.0 + alpha * cfg.dt) ** (-n_steps)
        lam_alpha = alpha * v0 / trunc
        centered = (np.array([sol.value(q) for q in test_points]) - v0
                    if test_points else np.zeros(0))
        v_change = (float(np.max(np.abs(centered - prev_centered)))
                    if prev_centered is not None and centered.size else math.nan)
        prev_centered = centered
        entries.append(ScheduleEntry(alpha=alpha, lambda_alpha=lam_alpha,
                                     v_change=v_change, horizon_T=sol.horizon_T,
                                     n_paths=cfg.n_paths))
        sols.append(sol)
        lam_alphas.append(lam_alpha)

    lam, lam_stderr = extrapolate_lambda(schedule[-3:], lam_alphas[-3:])
    if not check_schedule_monotone(schedule[-3:], lam_alphas[-3:], lam, lam_stderr):
        raise ConvergenceFailureError(
            "alpha-schedule gaps |lambda_alpha - lambda| are not decreasing; "
            f"record: {[(e.alpha, e.lambda_alpha) for e in entries]}",
            record=tuple(entries))

    base = sols[-1]
    v0 = base.value(np.zeros(model.dim))

    def vbar(x):
        return base.value(x) - v0

    return EbsdeSolution(
        vbar=vbar, zetabar=base.zeta, lam=lam, lam_stderr=lam_stderr,
        schedule_record=tuple(entries), base=base, cfg=cfg,
        test_points=test_points, M=base.M, K_x=base.K_x, K_z=base.K_z,
        eta=base.eta, discount_solutions=tuple(sols),
    )


# ---------------------------------------------------------------------------
# Identification and mild-solution checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ZIdentReport:
    rows: tuple  # (point, |z_fd - zeta|, scale, in_hull)
    rel_sup_error: float

    def __str__(self):
        return f"zeta vs grad(vbar) G: relative sup error {self.rel_sup_error:.4f}"


def check_z_identification(sol: EbsdeSolution, model: ModelSpec, test_points,
                           fd_step: float = 1e-3) -> ZIdentReport:
    """Compare zetabar with the central finite-difference gradient of vbar
    multiplied by G (report only; meaningful for smooth drivers)."""
    G = model.noise_map
    rows = []
    errs, scales = [], []
    for q in test_points:
        q = np.atleast_1d(np.asarray(q, dtype=float))
        grad = np.empty(model.dim)
        for j in range(model.dim):
            e = np.zeros(model.dim)
            e[j] = fd_step
            grad[j] = (sol.vbar(q + e) - sol.vbar(q - e)) / (2.0 * fd_step)
        z_fd = grad @ G
        z = np.atleast_1d(sol.zetabar(q))
        err = float(np.max(np.abs(z_fd - z)))
        scale = float(np.max(np.abs(z_fd)))
        in_hull = sol.in_training_hull(q)
        rows.append((tuple(q), err, scale, in_hull))
        if in_hull:
            errs.append(err)
            scales.append(scale)
    denom = max(scales) if scales else 0.0
    rel = (max(errs) / denom) if errs and denom > 0 else math.nan
    return ZIdentReport(rows=tuple(rows), rel_sup_error=rel)


def expectation_residual(model: ModelSpec, ham: HamiltonianSpec, vbar, zetabar,
                         lam: float, x, T: float, n_paths: int, dt: float,
                         seed: int):
    """Monte Carlo residual of E[vbar(X_T)] + E int_0^T (psi - lambda) - vbar(x).

    Returns (residual, stderr); the integrand uses the fitted zetabar along
    uncontrolled paths and a left-point rule on the simulation grid.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if T == 0:
        return 0.0, 0.0  # P_0 is the identity, so the fixed point is exact
    n_steps = max(1, int(round(T / dt)))
    integral = np.zeros(n_paths)

    def observer(k, X):
        if k < n_steps:
            Z = np.atleast_2d(zetabar(X))
            integral[:] += dt * ham_mod.psi_values(ham, X, Z)

    X_T = forward_sim.run_ensemble(model, np.tile(x, (n_paths, 1)), dt, n_steps,
                                   seed, observer=observer)
    per_path = vbar(X_T) + integral - lam * (n_steps * dt) - vbar(x)
    mean = float(np.mean(per_path))
    stderr = float(np.std(per_path, ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return mean, stderr


@dataclass(frozen=True)
class MildResidualReport:
    horizon_T: float
    rows: tuple  # (point, residual, stderr, normalized residual)

    def max_normalized(self) -> float:
        return max((abs(r[3]) for r in self.rows), default=math.nan)


def mild_hjb_residual(sol: EbsdeSolution, model: ModelSpec, ham: HamiltonianSpec,
                      t_check: float, n_paths: int, seed: int) -> MildResidualReport:
    """Mild-solution fixed-point residual at the solution's test points.

    For each x the identity v(x) = P_T[v](x) + int_0^T (P_s[psi(., zeta(.))](x)
    - lambda) ds must hold; the report carries the Monte Carlo residual scaled
    by 1 + |vbar(x)|.
    """
    rows = []
    for i, q in enumerate(sol.test_points):
        res, stderr = expectation_residual(
            model, ham, sol.vbar, sol.zetabar, sol.lam, q, t_check,
            n_paths, sol.cfg.dt, seed + i)
        rows.append((tuple(np.atleast_1d(q)), res, stderr,
                     res / (1.0 + abs(sol.vbar(np.atleast_1d(q))))))
    return MildResidualReport(horizon_T=t_check, rows=tuple(rows))
