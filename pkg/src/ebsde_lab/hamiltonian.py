"""Driver evaluation: psi(x, z) = inf_u {L(x, u) + z . R(u)} and its argmin.

The control set is a finite grid, so the infimum is an exact minimum and the
minimizing selection is deterministic (ties broken by smallest grid index).
Two closed forms bypass enumeration: "ball-linear" for u-independent cost
with R the identity embedding of a delta-ball, and "heat-bins" installed by
the heat model for per-bin separable costs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import rng
from .core_model import HamiltonianSpec
from .errors import ContractViolationError, EvaluationError

__all__ = [
    "HamiltonianValue",
    "psi_eval",
    "psi_values",
    "psi_argmin",
    "psi_ball_closed_form",
    "lipschitz_constants",
    "make_grid_hamiltonian",
    "make_ball_hamiltonian",
    "shift_cost",
]


@dataclass(frozen=True)
class HamiltonianValue:
    psi: float
    argmin_u: object
    gap: float  # second-best candidate minus best; inf for singleton grids


class HamiltonianConstants(NamedTuple):
    M: float
    K_x: float
    K_z: float


def _candidate_matrix(ham: HamiltonianSpec, X: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """L(x,u) + z.R(u) for every grid point; shape (n_states, n_grid)."""
    R = ham.control_matrix()
    cols = []
    for j, u in enumerate(ham.control_grid):
        Lj = np.asarray(ham.cost(X, u), dtype=float)
        if not np.all(np.isfinite(Lj)):
            raise EvaluationError(f"cost returned non-finite value at control {u!r}")
        cols.append(Lj)
    if not np.all(np.isfinite(R)):
        bad = int(np.argmax(~np.all(np.isfinite(R), axis=1)))
        raise EvaluationError(f"control map returned non-finite value at control "
                              f"{ham.control_grid[bad]!r}")
    L = np.stack(cols, axis=-1)
    return L + Z @ R.T


def psi_eval(ham: HamiltonianSpec, x, z) -> HamiltonianValue:
    """Exact minimum of L(x,u) + z.R(u) over the control grid at one point."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    Z = np.atleast_2d(np.asarray(z, dtype=float))
    cand = _candidate_matrix(ham, X, Z)[0]
    idx = int(np.argmin(cand))
    if cand.size > 1:
        two = np.partition(cand, 1)[:2]
        gap = float(two[1] - two[0])
    else:
        gap = math.inf
    return HamiltonianValue(psi=float(cand[idx]), argmin_u=ham.control_grid[idx], gap=gap)


def psi_values(ham: HamiltonianSpec, X: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Vectorized psi over rows of X (n, dim) and Z (n, noise_dim)."""
    if ham.batch_psi is not None:
        return ham.batch_psi(X, Z, want_argmin=False)
    if ham.closed_form == "ball-linear":
        return _ball_dispatch(ham, X, Z, want_argmin=False)
    return _candidate_matrix(ham, X, Z).min(axis=-1)


def psi_argmin(ham: HamiltonianSpec, X: np.ndarray, Z: np.ndarray):
    """Vectorized psi plus minimizing controls.

    Returns (psi, controls, R_rows, L_vals) where ``controls`` is a list of
    grid points, ``R_rows`` the matching noise-space vectors (n, noise_dim)
    and ``L_vals`` the running cost at the minimizer.
    """
    if ham.batch_psi is not None:
        return ham.batch_psi(X, Z, want_argmin=True)
    if ham.closed_form == "ball-linear":
        return _ball_dispatch(ham, X, Z, want_argmin=True)
    cand = _candidate_matrix(ham, X, Z)
    idx = np.argmin(cand, axis=-1)
    psi = np.take_along_axis(cand, idx[:, None], axis=-1)[:, 0]
    R = ham.control_matrix()
    R_rows = R[idx]
    ZR = np.einsum("ij,ij->i", Z, R_rows)
    L_vals = psi - ZR
    controls = [ham.control_grid[j] for j in idx]
    return psi, controls, R_rows, L_vals


def _ball_dispatch(ham: HamiltonianSpec, X, Z, want_argmin):
    """Closed-form path for hand-built specs tagged "ball-linear"."""
    if len(ham.control_grid) >= 2:
        probe = np.atleast_2d(np.asarray(X, dtype=float))[:1]
        a = float(np.asarray(ham.cost(probe, ham.control_grid[0]))[0])
        b = float(np.asarray(ham.cost(probe, ham.control_grid[-1]))[0])
        if abs(a - b) > 1e-12 * (1.0 + abs(a)):
            raise ContractViolationError(
                "ball closed form requires a u-independent cost; "
                f"cost differs across controls ({a} vs {b})")
    if ham.delta <= 0:
        raise ContractViolationError("ball closed form requires delta > 0")
    l_vals = np.asarray(ham.cost(X, ham.control_grid[0]), dtype=float)
    norms = np.linalg.norm(Z, axis=-1)
    psi = l_vals - ham.delta * norms
    if not want_argmin:
        return psi
    safe = np.where(norms > 0.0, norms, 1.0)
    gammas = -ham.delta * Z / safe[:, None]
    gammas[norms == 0.0] = 0.0
    return psi, list(gammas), gammas, l_vals


def psi_ball_closed_form(l_of_x: float, z, delta: float) -> HamiltonianValue:
    """Analytic driver for u-independent cost and a delta-ball control set.

    psi = l(x) - delta |z| with minimizer gamma = -delta z / |z| (0 at z = 0).
    """
    if delta <= 0:
        raise ContractViolationError("ball closed form requires delta > 0")
    zv = np.atleast_1d(np.asarray(z, dtype=float))
    norm = float(np.linalg.norm(zv))
    gamma = np.zeros_like(zv) if norm == 0.0 else -delta * zv / norm
    return HamiltonianValue(psi=float(l_of_x) - delta * norm, argmin_u=gamma, gap=math.inf)


def lipschitz_constants(ham: HamiltonianSpec, n_probe: int = 64, radius: float = 2.0,
                        seed: int = 0, dim: int | None = None) -> HamiltonianConstants:
    """Empirical (M, K_x, K_z) from sampled probe pairs.

    M = sup |psi(x, 0)| over probe states.  K_x and K_z are sup difference
    ratios; the z probe set contains collinear families so the z-ratio attains
    the true constant for norm-type drivers.
    """
    dim = _probe_dim(ham) if dim is None else dim
    m = ham.noise_dim
    xs = np.vstack([np.zeros((1, dim)),
                    _unit_row(dim, radius),
                    rng.uniform_ball(rng.generator(seed, rng.STREAM_PROBE),
                                     max(n_probe - 2, 1), dim, radius)])
    gen_z = rng.generator(seed, rng.STREAM_PAIRS)
    dirs = np.vstack([_unit_row(m, 1.0), gen_z.normal(size=(3, m))])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    scales = np.array([0.0, 0.25, 0.5, 1.0, 2.0]) * max(radius, 1.0)
    zs = (scales[:, None, None] * dirs[None, :, :]).reshape(-1, m)

    M = float(np.max(np.abs(psi_values(ham, xs, np.zeros((len(xs), m))))))

    K_x = 0.0
    xi, xj = np.triu_indices(len(xs), k=1)
    dx = np.linalg.norm(xs[xi] - xs[xj], axis=1)
    keep = dx > 1e-12
    for z in zs[:: max(len(zs) // 6, 1)]:
        vals = psi_values(ham, xs, np.broadcast_to(z, (len(xs), m)))
        ratios = np.abs(vals[xi][keep] - vals[xj][keep]) / dx[keep]
        if ratios.size:
            K_x = max(K_x, float(np.max(ratios)))

    K_z = 0.0
    zi, zj = np.triu_indices(len(zs), k=1)
    dz = np.linalg.norm(zs[zi] - zs[zj], axis=1)
    keepz = dz > 1e-12
    for x in xs[:: max(len(xs) // 6, 1)]:
        vals = psi_values(ham, np.broadcast_to(x, (len(zs), dim)), zs)
        ratios = np.abs(vals[zi][keepz] - vals[zj][keepz]) / dz[keepz]
        if ratios.size:
            K_z = max(K_z, float(np.max(ratios)))

    return HamiltonianConstants(M=M, K_x=K_x, K_z=K_z)


def _unit_row(dim, scale):
    row = np.zeros((1, dim))
    row[0, 0] = scale
    return row


def _probe_dim(ham: HamiltonianSpec) -> int:
    dim = getattr(ham, "state_dim", None)
    if dim is None:
        # costs built by this package broadcast over any state dim; default to
        # one probe coordinate per noise dimension
        return ham.noise_dim
    return dim


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def make_grid_hamiltonian(cost, control_points, control_map, *, noise_dim,
                          bound_c, lip_Lx, name="grid") -> HamiltonianSpec:
    """Plain finite-grid Hamiltonian; psi by exact enumeration."""
    return HamiltonianSpec(
        control_grid=tuple(control_points),
        cost=cost,
        control_map=control_map,
        bound_c=bound_c,
        lip_Lx=lip_Lx,
        noise_dim=noise_dim,
        closed_form=None,
        name=name,
    )


def make_ball_hamiltonian(l_of_state, delta, *, noise_dim, bound_l, lip_l,
                          grid_points_per_axis=21, name="ball") -> HamiltonianSpec:
    """u-independent cost with R the identity embedding of the delta-ball.

    ``l_of_state`` maps (..., dim) -> (...,).  The control grid discretizes
    the ball for the generic enumeration path (axis grids for noise_dim = 1,
    sign pattern corners otherwise); psi itself uses the closed form
    l(x) - delta |z|.
    """
    if delta <= 0:
        raise ContractViolationError("ball Hamiltonian requires delta > 0")

    if noise_dim == 1:
        grid = [np.array([v]) for v in np.linspace(-delta, delta, grid_points_per_axis)]
    else:
        corners = [np.zeros(noise_dim)]
        for axis in range(noise_dim):
            for sign in (-1.0, 1.0):
                v = np.zeros(noise_dim)
                v[axis] = sign * delta
                corners.append(v)
        grid = corners

    def cost(X, u):
        return np.asarray(l_of_state(X), dtype=float)

    def batch(X, Z, want_argmin=False):
        L_vals = np.asarray(l_of_state(X), dtype=float)
        norms = np.linalg.norm(Z, axis=-1)
        psi = L_vals - delta * norms
        if not want_argmin:
            return psi
        safe = np.where(norms > 0.0, norms, 1.0)
        gammas = -delta * Z / safe[:, None]
        gammas[norms == 0.0] = 0.0
        return psi, list(gammas), gammas, L_vals

    return HamiltonianSpec(
        control_grid=tuple(grid),
        cost=cost,
        control_map=lambda u: np.atleast_1d(np.asarray(u, dtype=float)),
        bound_c=max(bound_l, delta),
        lip_Lx=lip_l,
        noise_dim=noise_dim,
        closed_form="ball-linear",
        delta=delta,
        batch_psi=batch,
        name=name,
    )


def shift_cost(ham: HamiltonianSpec, c: float) -> HamiltonianSpec:
    """Hamiltonian with L replaced by L + c (psi shifts by exactly c)."""
    base_cost = ham.cost

    def cost(X, u):
        return np.asarray(base_cost(X, u), dtype=float) + c

    batch = None
    if ham.batch_psi is not None:
        base_batch = ham.batch_psi

        def batch(X, Z, want_argmin=False):
            out = base_batch(X, Z, want_argmin=want_argmin)
            if not want_argmin:
                return out + c
            psi, controls, R_rows, L_vals = out
            return psi + c, controls, R_rows, L_vals + c

    return HamiltonianSpec(
        control_grid=ham.control_grid,
        cost=cost,
        control_map=ham.control_map,
        bound_c=ham.bound_c + abs(c),
        lip_Lx=ham.lip_Lx,
        noise_dim=ham.noise_dim,
        closed_form=ham.closed_form,
        delta=ham.delta,
        batch_psi=batch,
        name=f"{ham.name}+{c:g}",
    )
