"""Configuration-driven command line.

Commands: ``validate``, ``solve``, ``verify``, ``oracle``, ``report``.
Exit codes: 0 pass, 1 assertion failure, 2 usage/config error, 3 numerical
non-convergence.  All commands are deterministic given the config (the seed
lives in the config; ``--seed`` overrides it).
"""

import os
import sys


def _apply_threads(n):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)


def _early_threads():
    # must run before numpy is imported anywhere in this process
    argv = sys.argv[1:]
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            _apply_threads(argv[i + 1])
            return
        if arg.startswith("--threads="):
            _apply_threads(arg.split("=", 1)[1])
            return


_early_threads()

import click  # noqa: E402
import numpy as np  # noqa: E402

from . import core_model, ergodic_eval, grid_oracle, io_utils  # noqa: E402
from . import vanishing_discount  # noqa: E402
from .config import load_config  # noqa: E402
from .errors import ConfigurationError, ConvergenceFailureError, EbsdeLabError  # noqa: E402

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_NOCONV = 3


def _common(fn):
    fn = click.option("--config", "config_path", required=True,
                      type=click.Path(), help="experiment config (YAML)")(fn)
    fn = click.option("--out", "out_dir", default=None, help="output directory")(fn)
    fn = click.option("--seed", default=None, type=int, help="override config seed")(fn)
    fn = click.option("--threads", default=None, type=int,
                      help="cap numerical threads for this process")(fn)
    return fn


@click.group()
def main():
    """Ergodic BSDE lab: validate, solve, verify, oracle, report."""


def _load(config_path, seed, out_dir):
    try:
        return load_config(config_path, seed_override=seed, out_override=out_dir)
    except ConfigurationError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_USAGE)


@main.command()
@_common
def validate(config_path, out_dir, seed, threads):
    """Run model and Hamiltonian validation, print the reports."""
    exp = _load(config_path, seed, out_dir)
    try:
        rep_m = core_model.validate_model(exp.model, n_probe=32,
                                          radius=exp.run.init_radius,
                                          seed=exp.run.seed)
        rep_h = core_model.validate_hamiltonian(exp.ham, seed=exp.run.seed,
                                                radius=exp.run.init_radius)
    except EbsdeLabError as exc:
        click.echo(f"validation error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    click.echo(f"model: {rep_m}")
    click.echo(f"hamiltonian: {rep_h}")
    sys.exit(EXIT_PASS if (rep_m.passed and rep_h.passed) else EXIT_FAIL)


def _write_schedule_csv(out, record, command):
    return io_utils.write_csv(
        out / "schedule_record.csv", command,
        ["alpha", "lambda_alpha", "v_change", "horizon_T", "n_paths"],
        [(e.alpha, e.lambda_alpha, e.v_change, e.horizon_T, e.n_paths)
         for e in record])


@main.command()
@_common
def solve(config_path, out_dir, seed, threads):
    """Full pipeline: validate, run the alpha schedule, write artifacts."""
    exp = _load(config_path, seed, out_dir)
    rep_m = core_model.validate_model(exp.model, n_probe=32,
                                      radius=exp.run.init_radius, seed=exp.run.seed)
    if not rep_m.passed:
        click.echo(f"model validation failed: {rep_m}", err=True)
        sys.exit(EXIT_FAIL)
    try:
        with io_utils.output_lock(exp.out_dir) as out:
            try:
                sol = vanishing_discount.run_schedule(exp.model, exp.ham, exp.run,
                                                      exp.query_points)
            except ConvergenceFailureError as exc:
                path = None
                if exc.record:
                    path = _write_schedule_csv(out, exc.record, "solve")
                click.echo(f"schedule did not converge: {exc}", err=True)
                if path:
                    click.echo(f"schedule record written to {path}", err=True)
                sys.exit(EXIT_NOCONV)

            _write_schedule_csv(out, sol.schedule_record, "solve")
            dim = exp.model.dim
            m = exp.model.noise_dim
            header = ([f"x_{i + 1}" for i in range(dim)] + ["vbar"]
                      + [f"zeta_{j + 1}" for j in range(m)])
            rows = []
            for q in exp.query_points or (np.zeros(dim),):
                q = np.asarray(q, dtype=float)
                z = np.atleast_1d(sol.zetabar(q))
                rows.append(list(q) + [sol.vbar(q)] + list(z))
            io_utils.write_csv(out / "vbar_query.csv", "solve", header, rows)
            io_utils.write_csv(out / "lambda.csv", "solve",
                               ["lambda", "stderr"], [(sol.lam, sol.lam_stderr)])
            diag = sol.base.diagnostics
            resid = diag.get("step_residual_rms", np.zeros(0))
            conds = diag.get("condition_samples", {})
            io_utils.write_csv(
                out / "diagnostics.csv", "solve",
                ["step", "residual_rms", "condition"],
                [(k, float(resid[k]), conds.get(k, "")) for k in range(len(resid))])
            io_utils.save_solution(out, sol)
    except ConfigurationError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    click.echo(f"lambda = {sol.lam!r}")
    sys.exit(EXIT_PASS)


@main.command()
@_common
@click.option("--solution", "solution_dir", default=None,
              help="directory with solution.json (default: output directory)")
def verify(config_path, out_dir, seed, threads, solution_dir):
    """Run the long-run verification suite against a stored solution."""
    exp = _load(config_path, seed, out_dir)
    where = solution_dir or exp.out_dir
    try:
        sol = io_utils.load_solution(where)
    except ConfigurationError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)

    v = exp.verify
    model, ham = exp.model, exp.ham
    failures = []
    lines = []

    ts = [float(t) for t in v.get("residual_T", (1.0, 2.0, 4.0))]
    n_resid = int(v.get("residual_paths", 4000))
    dt_resid = float(v.get("residual_dt", exp.run.dt))
    points = sol.test_points or (np.zeros(model.dim),)
    for t in ts:
        rep = ergodic_eval.ebsde_residual(model, ham, sol, points, t,
                                          n_resid, dt_resid, exp.run.seed + 17)
        lines.append(str(rep))
        if not rep.passed:
            failures.append(f"ebsde-residual@T={t:g}")

    char = ergodic_eval.lambda_characterization(
        model, ham, sol, int(v.get("characterization_samples", 4000)), exp.run)
    lines.append(str(char))
    if not char.passed:
        failures.append("lambda-characterization")

    extra_seeds = [int(s) for s in v.get("uniqueness_seeds", (exp.run.seed + 1,
                                                              exp.run.seed + 2))]
    lams = [sol.lam]
    errs = [sol.lam_stderr]
    from dataclasses import replace
    run_u = replace(exp.run, n_paths=int(v.get("uniqueness_paths", exp.run.n_paths)))
    for s in extra_seeds:
        s_sol = vanishing_discount.run_schedule(model, ham, replace(run_u, seed=s),
                                                sol.test_points)
        lams.append(s_sol.lam)
        errs.append(s_sol.lam_stderr)
    spread = max(lams) - min(lams)
    comb = max((errs[i] ** 2 + errs[j] ** 2) ** 0.5
               for i in range(len(errs)) for j in range(i + 1, len(errs)))
    tol_u = max(exp.run.tol("lambda_rel") * float(np.mean(np.abs(lams))), 4.0 * comb)
    lines.append(f"lambda uniqueness: spread {spread:.4g} over {len(lams)} runs "
                 f"(tol {tol_u:.4g})")
    if spread > tol_u:
        failures.append("lambda-uniqueness")

    has_control = float(np.max(np.abs(ham.control_matrix()))) > 0 or ham.delta > 0
    if has_control:
        opt = ergodic_eval.verify_optimality(
            model, ham, sol, np.zeros(model.dim),
            [ergodic_eval.zero_feedback(ham)], _verify_run_cfg(exp))
        lines.append(str(opt))
        if not opt.passed:
            failures.append("optimality")
    else:
        lines.append("optimality: skipped (no control authority)")

    click.echo("\n".join(lines))
    if failures:
        click.echo("FAILED checks: " + ", ".join(failures))
        sys.exit(EXIT_FAIL)
    click.echo("all verification checks passed")
    sys.exit(EXIT_PASS)


def _verify_run_cfg(exp):
    from dataclasses import replace
    horizon = float(exp.verify.get("horizon", max(40.0, 20.0 / exp.model.eta)))
    n_paths = int(exp.verify.get("optimality_paths", 2000))
    dt = float(exp.verify.get("residual_dt", exp.run.dt))
    return replace(exp.run, n_paths=n_paths, dt=dt,
                   n_steps=max(1, int(round(horizon / dt))))


@main.command()
@_common
def oracle(config_path, out_dir, seed, threads):
    """Finite-difference reference solution (1-D instances only)."""
    exp = _load(config_path, seed, out_dir)
    if exp.model.dim != 1:
        click.echo("oracle is 1-D only", err=True)
        sys.exit(EXIT_USAGE)
    osec = exp.oracle
    grid = grid_oracle.Grid1D.symmetric(float(osec.get("halfwidth", 5.0)),
                                        int(osec.get("n_nodes", 1001)))
    model = exp.model

    def drift(x):
        X = np.asarray(x, dtype=float).reshape(-1, 1)
        return model.drift(X)[:, 0]

    g = float(model.noise_map[0, 0])
    try:
        with io_utils.output_lock(exp.out_dir) as out:
            sol = grid_oracle.solve_ergodic_hjb_1d(grid, drift, g, exp.ham)
            rho = grid_oracle.invariant_density_1d(drift, g, grid)
            x = grid.nodes
            io_utils.write_csv(out / "oracle_solution.csv", "oracle",
                               ["x", "v", "v_prime", "policy"],
                               zip(x, sol.values, sol.derivative, sol.policy))
            io_utils.write_csv(out / "oracle_density.csv", "oracle",
                               ["x", "rho"], zip(x, rho))
    except EbsdeLabError as exc:
        click.echo(f"oracle error: {exc}", err=True)
        sys.exit(EXIT_NOCONV)
    click.echo(f"lambda = {sol.lambda_!r}")
    sys.exit(EXIT_PASS)


@main.command()
@click.option("--out", "out_dir", required=True,
              help="output directory holding solve/oracle CSV artifacts")
def report(out_dir):
    """Render matplotlib figures next to the delimited outputs."""
    from . import report as report_mod
    if not os.path.isdir(out_dir):
        click.echo(f"no such output directory: {out_dir}", err=True)
        sys.exit(EXIT_USAGE)
    written = report_mod.render_all(out_dir)
    if not written:
        click.echo("no renderable artifacts found", err=True)
        sys.exit(EXIT_USAGE)
    for path in written:
        click.echo(f"wrote {path}")
    sys.exit(EXIT_PASS)


if __name__ == "__main__":
    main()
