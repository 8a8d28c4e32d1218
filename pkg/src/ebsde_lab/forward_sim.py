"""Forward SDE simulation and long-run statistics.

Scheme: drift-implicit Euler, implicit in the (stiff) linear part and
explicit in the nonlinearity and noise,

    (I - dt A) X_{k+1} = X_k + dt F(X_k) + G (dW_k + dt gamma(X_k)),

so each step is one linear solve with a factorization computed once.  The
optional ``gamma`` (drift shift) realizes controlled dynamics by moving the
control into the drift; no likelihood reweighting is ever used.

Noise is drawn in fixed-size chunks keyed by (seed, stream, chunk index), so
any block of increments can be regenerated exactly -- trajectories are
bit-reproducible and backward passes can rebuild states from checkpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from . import rng
from .core_model import ModelSpec, as_state
from .errors import ConfigurationError, DivergenceError, NumericalError

CHUNK = 128
DEFAULT_BLOWUP = 1e6


@dataclass(frozen=True)
class Trajectory:
    """One discretized sample path with the increments that produced it."""

    times: np.ndarray            # (n_steps + 1,)
    states: np.ndarray           # (n_steps + 1, dim)
    noise_increments: np.ndarray  # (n_steps, noise_dim)
    seed: int

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Thinned samples from a single long path, standing in for the invariant law."""

    samples: np.ndarray
    burn_in_time: float
    thinning_step: float


class Stepper:
    """One semi-implicit Euler step for a fixed (model, dt)."""

    def __init__(self, model: ModelSpec, dt: float):
        if dt <= 0:
            raise ConfigurationError("dt must be positive")
        self.model = model
        self.dt = dt
        A = model.linear_drift
        n = model.dim
        M = np.eye(n) - dt * A
        offdiag = M - np.diag(np.diag(M))
        if not offdiag.any():
            diag = np.diag(M)
            if np.any(diag == 0.0):
                raise NumericalError("singular implicit step matrix I - dt A")
            self._diag_inv = 1.0 / diag
            self._lu = None
        else:
            self._diag_inv = None
            try:
                self._lu = scipy.linalg.lu_factor(M)
            except scipy.linalg.LinAlgError as exc:  # pragma: no cover - dissipative A
                raise NumericalError(f"implicit step factorization failed: {exc}") from exc
        self._G = model.noise_map

    def step(self, X: np.ndarray, dW: np.ndarray, shift: Optional[np.ndarray] = None):
        """Advance states (p, dim) by one step given increments (p, noise_dim)."""
        drive = dW if shift is None else dW + self.dt * shift
        rhs = X + self.dt * self.model.nonlinear_drift(X) + drive @ self._G.T
        if self._diag_inv is not None:
            return rhs * self._diag_inv
        return scipy.linalg.lu_solve(self._lu, rhs.T).T


def noise_block(seed, chunk_idx, n_steps, n_paths, noise_dim, dt,
                stream=rng.STREAM_PATH):
    """Increment block (n_steps, n_paths, noise_dim) with N(0, dt) entries."""
    return rng.normal_chunk(seed, stream, chunk_idx,
                            (n_steps, n_paths, noise_dim), math.sqrt(dt))


def chunk_ranges(n_steps, chunk=CHUNK):
    return [(c, k0, min(k0 + chunk, n_steps))
            for c, k0 in enumerate(range(0, n_steps, chunk))]


def run_ensemble(model: ModelSpec, X0: np.ndarray, dt: float, n_steps: int, seed: int,
                 *, stream=rng.STREAM_PATH, drift_shift=None,
                 blowup=DEFAULT_BLOWUP, observer=None, checkpoints_out=None):
    """Drive an ensemble (p, dim) for n_steps; return the final states.

    ``observer(k, X)`` is called with the state at every step index 0..n_steps
    (k = 0 fires before the first step).  ``checkpoints_out``, when given a
    list, receives a copy of the state at every chunk boundary (including
    step 0), which together with the regenerable noise blocks suffices to
    replay any chunk later.
    """
    stepper = Stepper(model, dt)
    X = np.array(X0, dtype=float, copy=True)
    if X.ndim != 2 or X.shape[1] != model.dim:
        raise ConfigurationError(f"X0 must have shape (n_paths, {model.dim})")
    if observer is not None:
        observer(0, X)
    if checkpoints_out is not None:
        checkpoints_out.append(X.copy())
    for c, k0, k1 in chunk_ranges(n_steps):
        dW = noise_block(seed, c, k1 - k0, X.shape[0], model.noise_dim, dt, stream=stream)
        for j in range(k1 - k0):
            shift = None if drift_shift is None else drift_shift(X)
            X = stepper.step(X, dW[j], shift)
            k = k0 + j + 1
            if not np.all(np.isfinite(X)) or np.max(np.abs(X)) > blowup:
                raise DivergenceError(
                    f"state norm exceeded the blow-up guard {blowup:g} at step {k}",
                    step=k)
            if observer is not None:
                observer(k, X)
        if checkpoints_out is not None:
            checkpoints_out.append(X.copy())
    return X


def replay_chunk(model: ModelSpec, X_start: np.ndarray, dt: float, seed: int,
                 chunk_idx: int, n_steps: int, *, stream=rng.STREAM_PATH,
                 drift_shift=None):
    """Recompute the states of one chunk from its starting checkpoint.

    Returns (states, dW) with states of shape (n_steps + 1, p, dim) and the
    increment block that produced them.
    """
    stepper = Stepper(model, dt)
    dW = noise_block(seed, chunk_idx, n_steps, X_start.shape[0], model.noise_dim, dt,
                     stream=stream)
    states = np.empty((n_steps + 1,) + X_start.shape)
    states[0] = X_start
    X = X_start
    for j in range(n_steps):
        shift = None if drift_shift is None else drift_shift(X)
        X = stepper.step(X, dW[j], shift)
        states[j + 1] = X
    return states, dW


def _batch_map(fn: Callable, out_dim: Optional[int]):
    """Adapt a per-state handle so it accepts (p, dim) batches."""

    def wrapped(X):
        try:
            out = np.asarray(fn(X), dtype=float)
        except Exception:
            out = None
        want = (X.shape[0],) if out_dim is None else (X.shape[0], out_dim)
        if out is not None and out.shape == want:
            return out
        rows = [np.asarray(fn(x), dtype=float) for x in X]
        return np.stack(rows).reshape(want)

    return wrapped


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def simulate_path(model: ModelSpec, x0, dt: float, n_steps: int, seed: int,
                  drift_shift=None, blowup=DEFAULT_BLOWUP) -> Trajectory:
    """One sample path of the (optionally drift-shifted) forward equation."""
    x0 = as_state(x0, model.dim)
    shift = None if drift_shift is None else _batch_map(drift_shift, model.noise_dim)
    states = np.empty((n_steps + 1, model.dim))
    increments = []

    def observer(k, X):
        states[k] = X[0]

    for c, k0, k1 in chunk_ranges(n_steps):
        increments.append(noise_block(seed, c, k1 - k0, 1, model.noise_dim, dt)[:, 0, :])
    run_ensemble(model, x0[None, :], dt, n_steps, seed,
                 drift_shift=shift, blowup=blowup, observer=observer)
    return Trajectory(
        times=dt * np.arange(n_steps + 1),
        states=states,
        noise_increments=np.vstack(increments) if increments else np.zeros((0, model.noise_dim)),
        seed=seed,
    )


def coupled_pair(model: ModelSpec, x0, x1, dt: float, n_steps: int, seed: int):
    """Two trajectories driven by the identical noise increments."""
    return (simulate_path(model, x0, dt, n_steps, seed),
            simulate_path(model, x1, dt, n_steps, seed))


def estimate_invariant(model: ModelSpec, dt: float, burn_in_steps: int,
                       n_samples: int, thinning: int, seed: int,
                       blowup=DEFAULT_BLOWUP) -> EmpiricalMeasure:
    """Thinned single-path samples approximating the invariant measure."""
    if burn_in_steps * dt < 5.0 / model.eta:
        raise ConfigurationError(
            f"burn-in time {burn_in_steps * dt:g} is below 5/eta = {5.0 / model.eta:g}")
    if n_samples < 1 or thinning < 1:
        raise ConfigurationError("n_samples and thinning must be positive")
    total = burn_in_steps + (n_samples - 1) * thinning
    samples = np.empty((n_samples, model.dim))

    def observer(k, X):
        if k >= burn_in_steps and (k - burn_in_steps) % thinning == 0:
            j = (k - burn_in_steps) // thinning
            if j < n_samples:
                samples[j] = X[0]

    run_ensemble(model, np.zeros((1, model.dim)), dt, total, seed,
                 stream=rng.STREAM_INVARIANT, blowup=blowup, observer=observer)
    return EmpiricalMeasure(samples=samples, burn_in_time=burn_in_steps * dt,
                            thinning_step=thinning * dt)


def semigroup_estimate(model: ModelSpec, phi, x, t: float, n_paths: int,
                       dt: float, seed: int):
    """Monte Carlo mean and standard error of phi(X^x_t)."""
    if t < 0:
        raise ConfigurationError("t must be non-negative")
    x = as_state(x, model.dim)
    phi_b = _batch_map(phi, None)
    if t == 0:
        return float(phi_b(x[None, :])[0]), 0.0
    n_steps = max(1, int(round(t / dt)))
    X0 = np.tile(x, (n_paths, 1))
    X = run_ensemble(model, X0, dt, n_steps, seed)
    vals = phi_b(X)
    return float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(n_paths))


@dataclass(frozen=True)
class MixingCurve:
    points: tuple  # rows (t, gap, stderr)
    slope: float
    mu_phi: float
    mu_stderr: float


def mixing_curve(model: ModelSpec, phi, x, times, n_paths: int, dt: float,
                 seed: int, n_invariant_samples: int = 4000) -> MixingCurve:
    """Decay of |P_t phi(x) - mu(phi)| with a fitted log-linear slope.

    mu(phi) is estimated first from ``estimate_invariant``; the slope is fit
    only over points whose gap exceeds 5x its Monte Carlo error.
    """
    x = as_state(x, model.dim)
    phi_b = _batch_map(phi, None)
    burn = int(math.ceil(10.0 / model.eta / dt))
    thin = max(1, int(round(1.0 / model.eta / dt)))
    inv = estimate_invariant(model, dt, burn, n_invariant_samples, thin, seed)
    mu_vals = phi_b(inv.samples)
    mu_phi = float(np.mean(mu_vals))
    mu_sem = float(np.std(mu_vals, ddof=1) / math.sqrt(len(mu_vals)))

    times = sorted(float(t) for t in times)
    steps = {max(0, int(round(t / dt))): t for t in times}
    n_steps = max(steps) if steps else 0
    acc = {}

    def observer(k, X):
        if k in steps:
            vals = phi_b(X)
            acc[k] = (float(np.mean(vals)),
                      float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0)

    run_ensemble(model, np.tile(x, (n_paths, 1)), dt, n_steps, seed, observer=observer)

    points = []
    for k, t in sorted(steps.items()):
        mean_k, sem_k = acc[k]
        gap = abs(mean_k - mu_phi)
        stderr = math.hypot(sem_k, mu_sem)
        points.append((t, gap, stderr))

    usable = [(t, g) for t, g, s in points if t > 0 and g > 5.0 * s and g > 0]
    if len(usable) >= 2:
        ts = np.array([t for t, _ in usable])
        lg = np.log([g for _, g in usable])
        slope = float(np.polyfit(ts, lg, 1)[0])
    else:
        slope = math.nan
    return MixingCurve(points=tuple(points), slope=slope, mu_phi=mu_phi, mu_stderr=mu_sem)


@dataclass(frozen=True)
class MomentReport:
    sup_mean_norm: float
    fitted_C: float
    checkpoints: tuple  # rows (t, mean |X_t|, stderr)


def moment_check(model: ModelSpec, x0, dt: float, horizon: float, n_paths: int,
                 seed: int, drift_shift=None) -> MomentReport:
    """sup_t E|X_t| over geometric checkpoints and the fitted C(1 + |x0|)."""
    x0 = as_state(x0, model.dim)
    n_steps = max(1, int(round(horizon / dt)))
    ks = {n_steps}
    k = n_steps
    while k > 1:
        k //= 2
        ks.add(k)
    ks.add(0)
    shift = None if drift_shift is None else _batch_map(drift_shift, model.noise_dim)
    acc = {}

    def observer(k, X):
        if k in ks:
            norms = np.linalg.norm(X, axis=1)
            acc[k] = (float(np.mean(norms)),
                      float(np.std(norms, ddof=1) / math.sqrt(len(norms))) if len(norms) > 1 else 0.0)

    run_ensemble(model, np.tile(x0, (n_paths, 1)), dt, n_steps, seed,
                 drift_shift=shift, observer=observer)
    rows = tuple((k * dt,) + acc[k] for k in sorted(ks))
    sup_mean = max(r[1] for r in rows)
    return MomentReport(
        sup_mean_norm=sup_mean,
        fitted_C=sup_mean / (1.0 + float(np.linalg.norm(x0))),
        checkpoints=rows,
    )
