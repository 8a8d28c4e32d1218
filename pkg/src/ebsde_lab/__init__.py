"""Ergodic BSDE lab.

Solver library for long-run-average stochastic control built from four layers:

* ``forward_sim`` -- dissipative forward SDEs (semi-implicit Euler, coupled
  pairs, invariant-measure and semigroup estimators);
* ``bsde_discount`` / ``vanishing_discount`` -- discounted infinite-horizon
  BSDEs solved by regression Monte Carlo and their discount-to-zero limit
  ``(vbar, zetabar, lambda)``;
* ``grid_oracle`` -- an independent 1-D finite-difference solver used as the
  reference for every derived benchmark value;
* ``ergodic_eval`` -- long-run cost estimation and optimality verification
  for feedback controls.

``heat_model`` instantiates the whole pipeline for a controlled stochastic
heat equation via spectral Galerkin truncation, and ``cli`` exposes the
configuration-driven command line.

Submodules are imported lazily so the CLI can configure threading before any
numerical library loads.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "bsde_discount",
    "cli",
    "config",
    "core_model",
    "ergodic_eval",
    "errors",
    "forward_sim",
    "grid_oracle",
    "hamiltonian",
    "heat_model",
    "io_utils",
    "report",
    "rng",
    "vanishing_discount",
)


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
