"""Command-line front end: synth, verify, simulate, report.

Exit codes: 0 success, 2 safety failure or counterexample found, 3 solver
failed to certify, 4 configuration error.  All artifacts land in an output
directory named by config hash and seed, so reruns with identical inputs
overwrite identical paths.
"""

from __future__ import annotations

import json
import sys as _sys
import time
from pathlib import Path

import click
import numpy as np

from .config import ConfigError, RunConfig, build_problem
from .falsifier import counterexamples_csv, falsify
from .feasibility import Certificate, SolverFailure, check_certificate, solve
from .index import IndexParams, RelativeDegreeError
from .sim import markdown_report, run_batch, trajectory_csv

EXIT_OK = 0
EXIT_SAFETY = 2
EXIT_SOLVER = 3
EXIT_CONFIG = 4


def _load(config_path: str) -> RunConfig:
    try:
        return RunConfig.load(config_path)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        _sys.exit(EXIT_CONFIG)


def _build(cfg: RunConfig):
    try:
        return build_problem(cfg)
    except (ConfigError, RelativeDegreeError, ValueError) as exc:
        click.echo(f"config error: {exc}", err=True)
        _sys.exit(EXIT_CONFIG)


def _outdir(cfg: RunConfig, seed: int, override: str | None) -> Path:
    path = Path(override) if override else Path("runs") / f"{cfg.digest()}-{seed}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _theta_from_cert(problem, cert: Certificate) -> np.ndarray:
    return cert.decision[problem.layout.theta_idx]


@click.group()
def main():
    """Safety index synthesis and safe-control validation toolkit."""


@main.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=None, help="Override the solver seed.")
@click.option("--tolerance", type=float, default=None, help="Override the eigenvalue tolerance.")
@click.option("--output", type=click.Path(file_okay=False), default=None)
def synth(config_path, seed, tolerance, output):
    """Synthesize index parameters and write a certificate JSON."""
    cfg = _load(config_path)
    problem = _build(cfg)
    solver_cfg = problem.solver_config
    if seed is not None:
        solver_cfg.seed = seed
    if tolerance is not None:
        solver_cfg.tolerance = tolerance
    outdir = _outdir(cfg, solver_cfg.seed, output)

    start = time.perf_counter()
    try:
        cert = solve(problem.specs, problem.layout, solver_cfg)
        failed = False
    except SolverFailure as exc:
        cert = exc.certificate
        failed = True
    elapsed = time.perf_counter() - start

    cert_path = outdir / "certificate.json"
    with open(cert_path, "w") as fh:
        json.dump(cert.to_dict(), fh, indent=2)

    ks = np.array([r["k"] for r in cert.restarts if r["valid"]])
    click.echo(f"solve time: {elapsed:.1f} s; restarts valid: "
               f"{sum(r['valid'] for r in cert.restarts)}/{len(cert.restarts)}")
    if len(ks):
        click.echo(f"k over valid restarts: mean {np.mean(ks, axis=0)}, std {np.std(ks, axis=0)}")
    click.echo("per-case lambda_min: " + ", ".join(f"{v:.3e}" for v in cert.lambda_mins))
    click.echo(f"certificate written to {cert_path}")
    if failed:
        residual = float(np.sum(np.maximum(0.0, -cert.lambda_mins - cert.tolerance) ** 2))
        click.echo(f"no valid certificate; best residual {residual:.3e}", err=True)
        _sys.exit(EXIT_SOLVER)


@main.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--certificate", "cert_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Certificate JSON to re-check.")
@click.option("--k", "k_values", type=float, multiple=True,
              help="Raw index parameters to falsify without a certificate.")
@click.option("--output", type=click.Path(file_okay=False), default=None)
def verify(config_path, cert_path, k_values, output):
    """Re-check a certificate and run the sampling falsifier."""
    cfg = _load(config_path)
    problem = _build(cfg)
    outdir = _outdir(cfg, problem.solver_config.seed, output)
    clean = True

    if cert_path is not None:
        with open(cert_path) as fh:
            cert = Certificate.from_dict(json.load(fh))
        ok, diagnostics = check_certificate(problem.specs, problem.layout, cert,
                                            k_min=problem.solver_config.k_min)
        click.echo(f"certificate check: {'pass' if ok else 'FAIL'}")
        for line in diagnostics:
            click.echo(f"  {line}", err=True)
        clean &= ok
        k = _theta_from_cert(problem, cert)
        enforce_min = True
    elif k_values:
        # raw parameters are a falsification probe, so the k floor is not
        # enforced: k = 0 is a legitimate query and must produce its
        # counterexample rather than a config error
        k = np.array(k_values)
        enforce_min = False
    else:
        click.echo("config error: verify needs --certificate or --k", err=True)
        _sys.exit(EXIT_CONFIG)

    try:
        params = IndexParams(k=k, eta=cfg.eta, enforce_min=enforce_min)
    except (ValueError, RelativeDegreeError) as exc:
        click.echo(f"config error: {exc}", err=True)
        _sys.exit(EXIT_CONFIG)
    cexs = falsify(problem.family, params, problem.system, cfg.falsifier_config())
    click.echo(f"falsifier: {len(cexs)} counterexample(s)")
    if cexs:
        csv_path = outdir / "counterexamples.csv"
        counterexamples_csv(cexs, problem.system, str(csv_path))
        worst = cexs[0]
        click.echo(f"  worst: state {worst.state}, phidot {worst.worst_phidot:.6g}"
                   f" (written to {csv_path})")
        clean = False
    _sys.exit(EXIT_OK if clean else EXIT_SAFETY)


@main.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--certificate", "cert_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--trials", type=int, default=None, help="Override the trial count.")
@click.option("--seed", type=int, default=None, help="Override the simulation seed.")
@click.option("--trajectories", is_flag=True, help="Write per-trial trajectory CSVs.")
@click.option("--output", type=click.Path(file_okay=False), default=None)
def simulate(config_path, cert_path, trials, seed, trajectories, output):
    """Run the navigation trial batch under the safety filter."""
    cfg = _load(config_path)
    problem = _build(cfg)
    with open(cert_path) as fh:
        cert = Certificate.from_dict(json.load(fh))
    if not cert.valid:
        click.echo("certificate is not valid; refusing to simulate", err=True)
        _sys.exit(EXIT_SAFETY)

    try:
        task = cfg.task_config()
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        _sys.exit(EXIT_CONFIG)
    if trials is not None:
        task.trials = trials
    if seed is not None:
        task.seed = seed
    outdir = _outdir(cfg, task.seed, output)

    k = _theta_from_cert(problem, cert)
    params = problem.params(k)
    batch = run_batch(problem.family, params, task, record=trajectories)
    report = markdown_report(batch, k)
    report_path = outdir / "report.md"
    report_path.write_text(report)
    if trajectories:
        for r in batch.reports:
            trajectory_csv(r, str(outdir / f"trajectory_{r.trial:03d}.csv"),
                           order=problem.family.order)
    click.echo(report)
    click.echo(f"report written to {report_path}")
    if task.trials == 0:
        click.echo("warning: zero trials requested; report is vacuous", err=True)
        _sys.exit(EXIT_OK)
    _sys.exit(EXIT_OK if batch.all_ok else EXIT_SAFETY)


@main.command()
@click.argument("output_dir", type=click.Path(exists=True, file_okay=False))
def report(output_dir):
    """Print the artifacts summary for an output directory."""
    outdir = Path(output_dir)
    cert_path = outdir / "certificate.json"
    if cert_path.exists():
        with open(cert_path) as fh:
            data = json.load(fh)
        click.echo(f"certificate: valid={data['valid']}, seed={data['seed']}, "
                   f"config={data['config_hash']}")
        click.echo("  lambda_mins: " + ", ".join(f"{v:.3e}" for v in data["lambda_mins"]))
    cex_path = outdir / "counterexamples.csv"
    if cex_path.exists():
        lines = cex_path.read_text().strip().splitlines()
        click.echo(f"counterexamples: {max(0, len(lines) - 1)} (see {cex_path})")
    report_path = outdir / "report.md"
    if report_path.exists():
        click.echo(report_path.read_text())
    if not any(p.exists() for p in (cert_path, cex_path, report_path)):
        click.echo("no artifacts found", err=True)


if __name__ == "__main__":
    main()
