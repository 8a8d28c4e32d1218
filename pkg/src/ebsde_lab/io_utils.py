"""CSV / JSON artifact handling and the output-directory lock.

Every CSV starts with the versioned schema line ``# ebsde-lab v<semver>
<command>``.  Floats are written with ``repr`` (shortest round-trip form), so
re-running a command with the same seed reproduces files byte for byte.
"""

from __future__ import annotations

import json
import os
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigurationError

LOCK_NAME = ".ebsde-lab.lock"


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def write_csv(path, command, header, rows):
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(f"# ebsde-lab v{__version__} {command}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def read_csv(path):
    """Read a versioned CSV back as (header, list of float-or-str rows)."""
    path = Path(path)
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    body = [ln for ln in lines if not ln.startswith("#")]
    header = body[0].split(",")
    rows = []
    for ln in body[1:]:
        row = []
        for tok in ln.split(","):
            try:
                row.append(float(tok))
            except ValueError:
                row.append(tok)
        rows.append(row)
    return header, rows


@contextmanager
def output_lock(directory):
    """Exclusive lock file guarding an output directory against concurrent writers."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigurationError(
            f"output directory {directory} is locked by another run "
            f"(remove {lock} if stale)") from None
    try:
        os.close(fd)
        yield directory
    finally:
        try:
            os.unlink(lock)
        except FileNotFoundError:
            pass


def trajectory_to_csv(traj, path, command="simulate", path_id=None):
    """Export one trajectory with columns t, x_1..x_n (plus optional path id)."""
    dim = traj.states.shape[1]
    header = ["t"] + [f"x_{i + 1}" for i in range(dim)]
    if path_id is not None:
        header = ["path"] + header
    rows = []
    for t, state in zip(traj.times, traj.states):
        row = [t] + list(state)
        if path_id is not None:
            row = [path_id] + row
        rows.append(row)
    return write_csv(path, command, header, rows)


# ---------------------------------------------------------------------------
# Solution serialization
# ---------------------------------------------------------------------------

def save_solution(directory, sol, command="solve"):
    """Persist an EbsdeSolution so verify can rebuild its function handles."""
    from .bsde_discount import BasisSpec  # local: keep io importable without numpy users

    directory = Path(directory)
    base = sol.base
    basis = base.basis
    payload = {
        "version": __version__,
        "lambda": sol.lam,
        "lambda_stderr": sol.lam_stderr,
        "alpha": base.alpha,
        "horizon_T": base.horizon_T,
        "constants": {"M": sol.M, "K_x": sol.K_x, "K_z": sol.K_z, "eta": sol.eta},
        "basis": {
            "kind": basis.kind,
            "degree": basis.degree,
            "n_modes": basis.n_modes,
            "freq_scale": basis.freq_scale,
            "bandwidth": basis.bandwidth,
            "ridge": basis.ridge,
            "centers": None if basis.centers is None else np.asarray(basis.centers).tolist(),
        },
        "coef_value": np.asarray(base.coef_value).tolist(),
        "coef_zeta": np.asarray(base.coef_zeta).tolist(),
        "hull_lo": np.asarray(base.hull_lo).tolist(),
        "hull_hi": np.asarray(base.hull_hi).tolist(),
        "cfg": {
            "dt": sol.cfg.dt,
            "n_steps": sol.cfg.n_steps,
            "n_paths": sol.cfg.n_paths,
            "seed": sol.cfg.seed,
            "alpha_schedule": list(sol.cfg.alpha_schedule),
            "tail_eps": sol.cfg.tail_eps,
            "init_radius": sol.cfg.init_radius,
            "tolerances": dict(sol.cfg.tolerances),
        },
        "test_points": [np.asarray(q).tolist() for q in sol.test_points],
        "schedule_record": [
            {"alpha": e.alpha, "lambda_alpha": e.lambda_alpha, "v_change": e.v_change,
             "horizon_T": e.horizon_T, "n_paths": e.n_paths}
            for e in sol.schedule_record
        ],
    }
    path = directory / "solution.json"
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return path


def load_solution(directory):
    """Rebuild an EbsdeSolution (with live handles) from solution.json."""
    from .bsde_discount import BasisSpec, DiscountSolution, _make_handles
    from .core_model import RunConfig
    from .vanishing_discount import EbsdeSolution, ScheduleEntry

    path = Path(directory) / "solution.json"
    if not path.exists():
        raise ConfigurationError(f"no solution found at {path}")
    with open(path) as fh:
        payload = json.load(fh)

    b = payload["basis"]
    basis = BasisSpec(
        kind=b["kind"], degree=int(b["degree"]), n_modes=int(b["n_modes"]),
        freq_scale=float(b["freq_scale"]), bandwidth=float(b["bandwidth"]),
        ridge=float(b["ridge"]),
        centers=None if b["centers"] is None else np.asarray(b["centers"], dtype=float),
    )
    coef_value = np.asarray(payload["coef_value"], dtype=float)
    coef_zeta = np.asarray(payload["coef_zeta"], dtype=float)
    value, zeta = _make_handles(basis, coef_value, coef_zeta)
    consts = payload["constants"]
    cfg_d = payload["cfg"]
    cfg = RunConfig(
        dt=float(cfg_d["dt"]), n_steps=int(cfg_d["n_steps"]),
        n_paths=int(cfg_d["n_paths"]), seed=int(cfg_d["seed"]),
        alpha_schedule=tuple(cfg_d["alpha_schedule"]),
        tail_eps=float(cfg_d["tail_eps"]), init_radius=float(cfg_d["init_radius"]),
        tolerances=cfg_d.get("tolerances", {}),
    )
    base = DiscountSolution(
        alpha=float(payload["alpha"]), value=value, zeta=zeta,
        horizon_T=float(payload["horizon_T"]), basis=basis,
        coef_value=coef_value, coef_zeta=coef_zeta,
        hull_lo=np.asarray(payload["hull_lo"], dtype=float),
        hull_hi=np.asarray(payload["hull_hi"], dtype=float),
        M=float(consts["M"]), K_x=float(consts["K_x"]), K_z=float(consts["K_z"]),
        eta=float(consts["eta"]), bound_ratio=0.0, lip_ratio=0.0, diagnostics={},
    )
    v0 = value(np.zeros(len(base.hull_lo)))

    def vbar(x):
        return value(x) - v0

    record = tuple(
        ScheduleEntry(alpha=e["alpha"], lambda_alpha=e["lambda_alpha"],
                      v_change=e["v_change"], horizon_T=e["horizon_T"],
                      n_paths=e["n_paths"])
        for e in payload["schedule_record"])
    return EbsdeSolution(
        vbar=vbar, zetabar=zeta, lam=float(payload["lambda"]),
        lam_stderr=float(payload["lambda_stderr"]), schedule_record=record,
        base=base, cfg=cfg,
        test_points=tuple(np.asarray(q, dtype=float) for q in payload["test_points"]),
        M=base.M, K_x=base.K_x, K_z=base.K_z, eta=base.eta,
    )
