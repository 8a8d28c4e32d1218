"""Experiment configuration: one YAML file drives every CLI command.

The file is a plain key-value tree (see README for the schema).  Models and
costs are selected by name from registries -- no code is ever loaded from a
config.  Parse errors surface with line/column positions; semantic errors
with the offending key.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
import yaml

from . import heat_model
from .bsde_discount import BasisSpec
from .core_model import HamiltonianSpec, ModelSpec, RunConfig, make_nonlinearity
from .errors import ConfigurationError
from .hamiltonian import make_ball_hamiltonian, make_grid_hamiltonian


@dataclass(frozen=True, eq=False)
class Experiment:
    model: ModelSpec
    ham: HamiltonianSpec
    run: RunConfig
    query_points: tuple
    out_dir: str
    oracle: Mapping
    verify: Mapping
    heat: Optional[heat_model.HeatConfig]
    raw: Mapping = field(repr=False, default_factory=dict)


def load_config(path, seed_override=None, out_override=None) -> Experiment:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigurationError(f"config parse error{where}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigurationError("config root must be a mapping")
    return build_experiment(raw, seed_override=seed_override, out_override=out_override)


def build_experiment(raw: Mapping, seed_override=None, out_override=None) -> Experiment:
    model_sec = raw.get("model") or {}
    name = str(model_sec.get("name", "ou"))
    heat_cfg = None
    if name == "heat":
        heat_cfg = _heat_config(raw.get("heat") or {})
        model, ham, _report = heat_model.build(heat_cfg)
    else:
        model = _build_model(model_sec)
        ham = _build_hamiltonian(raw.get("hamiltonian") or {}, model)

    run = _build_run(raw.get("run") or {}, seed_override)
    query = tuple(np.asarray(q, dtype=float).reshape(model.dim)
                  for q in (raw.get("query") or {}).get("points", []))
    outputs = raw.get("outputs") or {}
    out_dir = out_override or outputs.get("directory", "out")
    return Experiment(model=model, ham=ham, run=run, query_points=query,
                      out_dir=str(out_dir), oracle=raw.get("oracle") or {},
                      verify=raw.get("verify") or {}, heat=heat_cfg, raw=raw)


def _build_model(sec: Mapping) -> ModelSpec:
    name = str(sec.get("name", "ou"))
    if name == "ou":
        dim = int(sec.get("dim", 1))
        rate = float(sec.get("rate", 1.0))
        g = float(sec.get("noise", 1.0))
        return ModelSpec(dim=dim, noise_dim=dim, linear_drift=-rate * np.eye(dim),
                         nonlinear_drift=make_nonlinearity("zero"),
                         noise_map=g * np.eye(dim), eta=rate, poly_growth_k=0,
                         name="ou")
    if name == "cubic-1d":
        g = float(sec.get("noise", 1.0))
        return ModelSpec(dim=1, noise_dim=1, linear_drift=[[-1.0]],
                         nonlinear_drift=make_nonlinearity("cubic"),
                         noise_map=[[g]], eta=1.0, poly_growth_k=3, name="cubic-1d")
    if name == "custom":
        dim = int(sec.get("dim", 1))
        A = np.asarray(sec.get("linear_drift"), dtype=float)
        G = np.asarray(sec.get("noise_map"), dtype=float)
        nl = str(sec.get("nonlinearity", "zero"))
        coeffs = sec.get("coefficients", [])
        F = make_nonlinearity(nl, coefficients=coeffs)
        return ModelSpec(dim=dim, noise_dim=G.shape[1], linear_drift=A,
                         nonlinear_drift=F, noise_map=G,
                         eta=float(sec.get("eta", 1.0)),
                         poly_growth_k=int(sec.get("growth_k", 1)), name="custom")
    raise ConfigurationError(f"unknown model name {name!r}")


def _cost_of_state(name: str, sec: Mapping):
    if name == "cos":
        return (lambda X: np.cos(np.atleast_2d(X)[..., 0])), 1.0, 1.0
    if name == "constant":
        c = float(sec.get("cost_value", 1.0))
        return (lambda X: np.full(np.atleast_2d(X).shape[0], c)), abs(c), 0.0
    raise ConfigurationError(f"unknown cost {name!r}")


def _build_hamiltonian(sec: Mapping, model: ModelSpec) -> HamiltonianSpec:
    kind = str(sec.get("kind", "uncontrolled-cost"))
    cost_name = str(sec.get("cost", "cos"))
    l_of_x, bound_l, lip_l = _cost_of_state(cost_name, sec)
    if kind == "uncontrolled-cost":
        return make_grid_hamiltonian(
            cost=lambda X, u: l_of_x(X), control_points=[0.0],
            control_map=lambda u: np.zeros(model.noise_dim),
            noise_dim=model.noise_dim, bound_c=bound_l, lip_Lx=lip_l,
            name=f"uncontrolled-{cost_name}")
    if kind == "ball":
        delta = float(sec.get("delta", 0.5))
        return make_ball_hamiltonian(l_of_x, delta, noise_dim=model.noise_dim,
                                     bound_l=bound_l, lip_l=lip_l,
                                     name=f"ball-{cost_name}")
    if kind == "grid":
        if model.noise_dim != 1:
            raise ConfigurationError("grid Hamiltonian requires a 1-D noise space")
        pts = [float(u) for u in sec.get("control_points", [])]
        if not pts:
            raise ConfigurationError("grid Hamiltonian needs control_points")
        u_cost = float(sec.get("control_cost", 0.0))

        def cost(X, u):
            return l_of_x(X) + u_cost * float(u) ** 2

        return make_grid_hamiltonian(
            cost=cost, control_points=pts,
            control_map=lambda u: np.array([float(u)]),
            noise_dim=1,
            bound_c=max(bound_l + u_cost * max(abs(u) for u in pts) ** 2,
                        max(abs(u) for u in pts)),
            lip_Lx=lip_l, name=f"grid-{cost_name}")
    raise ConfigurationError(f"unknown hamiltonian kind {kind!r}")


def _heat_config(sec: Mapping) -> heat_model.HeatConfig:
    kwargs = {}
    for key in ("n_modes", "control_bins", "control_levels"):
        if key in sec:
            kwargs[key] = int(sec[key])
    for key in ("a", "b", "delta"):
        if key in sec:
            kwargs[key] = float(sec[key])
    for key in ("f_name", "cost_name"):
        if key in sec:
            kwargs[key] = str(sec[key])
    if "f_coefficients" in sec:
        kwargs["f_coefficients"] = tuple(float(c) for c in sec["f_coefficients"])
    if "cost_params" in sec:
        kwargs["cost_params"] = dict(sec["cost_params"])
    if "mu_weights" in sec:
        kwargs["mu_weights"] = tuple((float(x), float(w)) for x, w in sec["mu_weights"])
    return heat_model.HeatConfig(**kwargs)


def _build_run(sec: Mapping, seed_override=None) -> RunConfig:
    basis_sec = sec.get("basis") or {}
    basis_kwargs = {}
    for key in ("kind",):
        if key in basis_sec:
            basis_kwargs[key] = str(basis_sec[key])
    for key in ("degree", "n_modes", "n_centers"):
        if key in basis_sec:
            basis_kwargs[key] = int(basis_sec[key])
    for key in ("freq_scale", "bandwidth", "ridge"):
        if key in basis_sec:
            basis_kwargs[key] = float(basis_sec[key])
    basis = BasisSpec(**basis_kwargs)
    kwargs = dict(basis=basis)
    for key in ("dt", "tail_eps", "init_radius", "blowup_guard"):
        if key in sec:
            kwargs[key] = float(sec[key])
    for key in ("n_steps", "n_paths"):
        if key in sec:
            kwargs[key] = int(sec[key])
    if "alpha_schedule" in sec:
        kwargs["alpha_schedule"] = tuple(float(a) for a in sec["alpha_schedule"])
    if "tolerances" in sec:
        kwargs["tolerances"] = dict(sec["tolerances"])
    if "init_center" in sec:
        kwargs["init_center"] = tuple(float(v) for v in sec["init_center"])
    kwargs["seed"] = int(seed_override if seed_override is not None
                         else sec.get("seed", 0))
    try:
        return RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"bad run section: {exc}") from None
