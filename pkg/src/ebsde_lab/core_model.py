"""Model and control-problem data: the types every other module consumes.

The state space is the discretized Hilbert setting R^n with the Euclidean
inner product.  A model is the tuple (A, F, G, eta): linear drift matrix,
nonlinear drift handle, constant noise map and the dissipativity rate of
A + F.  Dissipativity is *validated statistically* on sampled pairs, never
proven: ``validate_model`` reports the worst observed slack

    <dx, A dx + F(x) - F(x')> + eta |dx|^2,   dx = x - x',

which must be non-positive up to roundoff for the model to pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import rng
from .errors import ConfigurationError, InvalidModelError

StateVec = np.ndarray


def as_state(x, dim: int) -> np.ndarray:
    """Coerce to a finite float vector of length ``dim``."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.shape != (dim,):
        raise InvalidModelError(f"state has shape {arr.shape}, expected ({dim},)")
    if not np.all(np.isfinite(arr)):
        raise InvalidModelError(f"state contains non-finite entries: {arr}")
    return arr


# ---------------------------------------------------------------------------
# Nonlinearity registry (no code injection: drifts are selected by name)
# ---------------------------------------------------------------------------

def _zero(x):
    return np.zeros_like(x)


def _cubic(x):
    return -x ** 3


def make_polynomial(coefficients: Sequence[float]) -> Callable[[np.ndarray], np.ndarray]:
    """Coordinatewise polynomial sum_j c_j x^j (coefficients low order first)."""
    coeffs = np.asarray(coefficients, dtype=float)

    def poly(x):
        return np.polynomial.polynomial.polyval(x, coeffs)

    return poly


NONLINEARITY_REGISTRY = {
    "zero": lambda **kw: _zero,
    "cubic": lambda **kw: _cubic,
    "custom-polynomial": lambda coefficients=(), **kw: make_polynomial(coefficients),
}


def make_nonlinearity(name: str, **params) -> Callable[[np.ndarray], np.ndarray]:
    try:
        factory = NONLINEARITY_REGISTRY[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown nonlinearity {name!r}; available: {sorted(NONLINEARITY_REGISTRY)}"
        ) from None
    return factory(**params)


# ---------------------------------------------------------------------------
# Core dataclasses
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Forward-equation data dX = (A X + F(X)) dt + G dW in R^dim.

    ``nonlinear_drift`` must broadcast over leading axes: it receives arrays
    of shape (..., dim) and returns the same shape.  ``eta`` is the rate at
    which trajectory pairs driven by shared noise contract.
    """

    dim: int
    noise_dim: int
    linear_drift: np.ndarray
    nonlinear_drift: Callable[[np.ndarray], np.ndarray]
    noise_map: np.ndarray
    eta: float
    poly_growth_k: int = 1
    name: str = "model"

    def __post_init__(self):
        A = np.asarray(self.linear_drift, dtype=float)
        G = np.asarray(self.noise_map, dtype=float)
        object.__setattr__(self, "linear_drift", A)
        object.__setattr__(self, "noise_map", G)
        if self.dim < 1 or self.noise_dim < 1:
            raise ConfigurationError("dim and noise_dim must be positive")
        if A.shape != (self.dim, self.dim):
            raise ConfigurationError(f"linear_drift must be {self.dim}x{self.dim}, got {A.shape}")
        if G.shape != (self.dim, self.noise_dim):
            raise ConfigurationError(
                f"noise_map must be {self.dim}x{self.noise_dim}, got {G.shape}"
            )
        if not self.eta > 0:
            raise ConfigurationError("eta must be positive")

    def drift(self, X: np.ndarray) -> np.ndarray:
        """Full drift A x + F(x), broadcasting over leading axes."""
        return X @ self.linear_drift.T + self.nonlinear_drift(X)


@dataclass(frozen=True, eq=False, repr=False)
class HamiltonianSpec:
    """Control data (U, L, R) and the induced driver psi(x, z) = inf_u {L + z.R(u)}.

    ``control_grid`` is the finite discretization of U; each entry is either a
    scalar or a 1-D coefficient array.  ``cost`` receives states of shape
    (..., dim) plus one control point and returns (...,).  ``control_map``
    maps one control point to its noise-space vector of length noise_dim.

    ``closed_form`` optionally names an analytic evaluator ("ball-linear",
    "heat-bins") that bypasses grid enumeration; ``batch_psi`` is the
    corresponding vectorized hook with signature (X, Z, want_argmin) and is an
    implementation detail of the named closed forms.
    """

    control_grid: tuple
    cost: Callable
    control_map: Callable
    bound_c: float
    lip_Lx: float
    noise_dim: int
    closed_form: Optional[str] = None
    delta: float = 0.0
    batch_psi: Optional[Callable] = None
    name: str = "hamiltonian"

    def __post_init__(self):
        object.__setattr__(self, "control_grid", tuple(self.control_grid))
        if self.bound_c <= 0:
            raise ConfigurationError("bound_c must be positive")

    def control_matrix(self) -> np.ndarray:
        """R evaluated on the whole grid, shape (n_grid, noise_dim)."""
        rows = [np.atleast_1d(np.asarray(self.control_map(u), dtype=float))
                for u in self.control_grid]
        return np.stack(rows) if rows else np.zeros((0, self.noise_dim))


DEFAULT_TOLERANCES: Mapping[str, float] = {
    "bound": 0.05,        # slack on the M/alpha bound for discounted values
    "lip": 0.15,          # slack on the K_x/eta Lipschitz bound
    "contraction": 1e-2,  # discretization slack on coupled-pair decay
    "resid_dt_const": 2.0,  # C in |residual| <= 4 stderr + C dt
    "lambda_rel": 0.01,   # relative spread allowed between lambda reruns
}


@dataclass(frozen=True)
class RunConfig:
    """Numerical policy shared by the Monte Carlo solvers."""

    dt: float = 0.05
    n_steps: int = 1000
    n_paths: int = 20000
    seed: int = 0
    basis: "object" = None  # BasisSpec; resolved in bsde_discount
    alpha_schedule: tuple = (0.2, 0.1, 0.05, 0.025)
    tail_eps: float = 5e-3
    tolerances: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    init_radius: float = 2.0
    init_center: Optional[tuple] = None
    blowup_guard: float = 1e6

    def __post_init__(self):
        if self.dt <= 0 or self.n_steps < 1 or self.n_paths < 1:
            raise ConfigurationError("dt, n_steps and n_paths must be positive")
        sched = tuple(float(a) for a in self.alpha_schedule)
        if any(a <= 0 for a in sched) or any(
            b >= a for a, b in zip(sched, sched[1:])
        ):
            raise ConfigurationError("alpha_schedule must be strictly decreasing and positive")
        object.__setattr__(self, "alpha_schedule", sched)
        if not 0 < self.tail_eps < 1:
            raise ConfigurationError("tail_eps must lie in (0, 1)")
        tols = dict(DEFAULT_TOLERANCES)
        tols.update(self.tolerances or {})
        object.__setattr__(self, "tolerances", tols)

    def tol(self, key: str) -> float:
        return float(self.tolerances[key])


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ValidationReport:
    passed: bool
    max_slack: float
    growth_c: float
    n_pairs: int
    details: Mapping[str, float]

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        extras = " ".join(f"{k}={v:.6g}" for k, v in sorted(self.details.items()))
        return (f"{status} max_slack={self.max_slack:.3e} "
                f"growth_c={self.growth_c:.4g} pairs={self.n_pairs} {extras}")


def _probe_points(dim, n_probe, radius, seed, stream=rng.STREAM_PROBE):
    """Ball samples plus the deterministic pair {0, radius e1}."""
    gen = rng.generator(seed, stream)
    pts = rng.uniform_ball(gen, max(n_probe - 2, 0), dim, radius)
    fixed = np.zeros((2, dim))
    fixed[1, 0] = radius
    return np.vstack([fixed, pts])


def validate_model(model: ModelSpec, n_probe: int = 32, radius: float = 2.0,
                   seed: int = 0) -> ValidationReport:
    """Statistical dissipativity and growth check on sampled probe pairs.

    Passes iff, for every sampled pair, the slack
    ``<dx, A dx + dF> + eta |dx|^2`` stays below ``1e-9 (1 + |dx|^2)``.
    Also fits the polynomial-growth constant c with |F(x)| <= c (1 + |x|^k).
    """
    if n_probe < 2:
        raise ConfigurationError("n_probe must be at least 2")
    if radius <= 0:
        raise ConfigurationError("radius must be positive")
    pts = _probe_points(model.dim, n_probe, radius, seed)
    F = model.nonlinear_drift(pts)
    bad = ~np.all(np.isfinite(F), axis=1)
    if np.any(bad):
        raise InvalidModelError(
            f"nonlinear drift returned non-finite output at probe point {pts[np.argmax(bad)]}"
        )

    idx_i, idx_j = np.triu_indices(len(pts), k=1)
    # Cap the pair count so huge probe sets stay cheap; the deterministic pair
    # (rows 0 and 1) is always the first entry of triu_indices.
    if len(idx_i) > 4096:
        keep = rng.generator(seed, rng.STREAM_PAIRS).choice(
            len(idx_i) - 1, size=4095, replace=False) + 1
        keep = np.concatenate([[0], keep])
        idx_i, idx_j = idx_i[keep], idx_j[keep]
    dx = pts[idx_i] - pts[idx_j]
    dF = F[idx_i] - F[idx_j]
    Adx = dx @ model.linear_drift.T
    dx_sq = np.einsum("ij,ij->i", dx, dx)
    slack = np.einsum("ij,ij->i", dx, Adx + dF) + model.eta * dx_sq
    allowance = 1e-9 * (1.0 + dx_sq)
    passed = bool(np.all(slack <= allowance))

    norms = np.linalg.norm(pts, axis=1)
    growth_c = float(np.max(np.linalg.norm(F, axis=1) / (1.0 + norms ** model.poly_growth_k)))

    return ValidationReport(
        passed=passed,
        max_slack=float(np.max(slack)),
        growth_c=growth_c,
        n_pairs=len(dx),
        details={
            "worst_normalized_slack": float(np.max(slack - allowance)),
            "eta": model.eta,
            "radius": radius,
        },
    )


def validate_hamiltonian(ham: HamiltonianSpec, n_probe: int = 64,
                         seed: int = 0, radius: float = 2.0) -> ValidationReport:
    """Measure the driver constants M, K_x, K_z on sampled probe pairs.

    The measured values become the reference constants for the downstream
    discount-bound (M/alpha) and uniform-Lipschitz (K_x/eta) checks.
    """
    if len(ham.control_grid) == 0:
        raise ConfigurationError("control grid must not be empty")
    from . import hamiltonian as _ham  # local import: hamiltonian imports this module

    consts = _ham.lipschitz_constants(ham, n_probe=n_probe, radius=radius, seed=seed)
    bound_ok = consts.K_z <= ham.bound_c * (1 + 1e-9) + 1e-12
    return ValidationReport(
        passed=bool(bound_ok),
        max_slack=float(consts.K_z - ham.bound_c),
        growth_c=consts.M,
        n_pairs=n_probe,
        details={"M": consts.M, "K_x": consts.K_x, "K_z": consts.K_z},
    )
