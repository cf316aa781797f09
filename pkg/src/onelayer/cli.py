"""Command-line interface.

Subcommands mirror the stages of the method: ``gen`` builds a teacher,
``init`` runs the moment-based initialization, ``train`` runs descent,
``hessian`` reports the loss curvature, ``rho`` tabulates activation
margins, and ``grid`` drives the experiment sweeps (CSV plus rendered
figures; nonzero exit when a configured threshold fails).
"""

import csv
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import figures, harness, seeding
from .activations import ACTIVATIONS, gaussian_moments, get_activation
from .hessian import offset_weights, spectrum_report
from .initialization import InitConfig, initialize, initialize_population
from .model import generate_teacher, load_teacher, sample, save_samples, save_teacher
from .train import GdConfig, learn


@click.group()
def main():
    """Recover one-hidden-layer teacher networks from Gaussian samples."""


@main.command()
@click.option("--d", type=int, required=True)
@click.option("--k", type=int, required=True)
@click.option("--kappa", type=float, default=2.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--activation", default="squared_relu", show_default=True,
              type=click.Choice(sorted(ACTIVATIONS)))
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="teacher JSON path")
@click.option("--n", type=int, default=0, help="also write this many samples as CSV")
@click.option("--samples-out", type=click.Path(dir_okay=False), default=None)
def gen(d, k, kappa, seed, activation, out, n, samples_out):
    """Generate a teacher network (and optionally samples)."""
    teacher = generate_teacher(d, k, kappa, seed, activation)
    save_teacher(teacher, out)
    click.echo(f"wrote teacher to {out}")
    if n > 0:
        path = samples_out or str(Path(out).with_suffix(".samples.csv"))
        save_samples(sample(teacher, n, seed), path)
        click.echo(f"wrote {n} samples to {path}")


@main.command("init")
@click.option("--teacher", "teacher_path", type=click.Path(exists=True), required=True)
@click.option("--n", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--exact-moments", is_flag=True, help="substitute population moments everywhere")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="write JSON here")
def init_cmd(teacher_path, n, seed, exact_moments, out):
    """Run the tensor initialization and emit the result as JSON."""
    teacher = load_teacher(teacher_path)
    cfg = InitConfig(seed=seed)
    if exact_moments:
        result = initialize_population(teacher, cfg)
    else:
        samples = sample(teacher, n, seed)
        result = initialize(samples, teacher.k, teacher.activation, cfg)
    doc = json.dumps(result.to_dict(), indent=1)
    if out:
        Path(out).write_text(doc)
        click.echo(f"wrote {out}")
    else:
        click.echo(doc)


@main.command()
@click.option("--teacher", "teacher_path", type=click.Path(exists=True), required=True)
@click.option("--n", type=int, required=True)
@click.option("--init", "init_mode", default="tensor", show_default=True,
              type=click.Choice(["tensor", "random", "oracle-v"]))
@click.option("--eta", type=float, default=None, help="step size; defaults to the theory value")
@click.option("--iters", type=int, default=500, show_default=True)
@click.option("--tol", type=float, default=0.01, show_default=True)
@click.option("--resample", is_flag=True, help="disjoint sample block per iteration")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-prefix", default="train", show_default=True,
              help="writes <prefix>.json and <prefix>_trace.csv")
def train(teacher_path, n, init_mode, eta, iters, tol, resample, seed, out_prefix):
    """Gradient descent from a chosen initialization."""
    teacher = load_teacher(teacher_path)
    samples = sample(teacher, n, seed)
    act = teacher.activation
    cfg = GdConfig(eta=eta, iters=iters, tol=tol, resample=resample, seed=seed)

    if init_mode == "tensor":
        res = initialize(samples, teacher.k, act, InitConfig(seed=seed))
        W0, v0 = res.W0, res.v0
    else:
        rng = seeding.stream(seed, seeding.RANDOM_W)
        W0 = rng.standard_normal((teacher.d, teacher.k)) / np.sqrt(teacher.d)
        if init_mode == "oracle-v":
            v0 = teacher.v.copy()
        else:
            v0 = seeding.stream(seed, seeding.RANDOM_V).standard_normal(teacher.k)
            cfg = GdConfig(eta=eta, iters=iters, tol=tol, resample=resample, seed=seed,
                           train_v=True)
    report = learn(samples, act, W0, v0, cfg, teacher=teacher)

    Path(f"{out_prefix}.json").write_text(json.dumps(report.to_dict(), indent=1))
    with open(f"{out_prefix}_trace.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iter", "rel_err", "risk"])
        for i, risk in enumerate(report.risk):
            rel = report.rel_err[i] if i < len(report.rel_err) else float("nan")
            writer.writerow([i, repr(float(rel)), repr(float(risk))])
    figures.trace_plot(report.risk, f"{out_prefix}_risk.png", "objective")
    click.echo(f"success={report.success} rel_err={report.rel_err[-1] if report.rel_err else 'n/a'} "
               f"iters={report.iters}")
    click.echo(f"wrote {out_prefix}.json, {out_prefix}_trace.csv, {out_prefix}_risk.png")


@main.command()
@click.option("--teacher", "teacher_path", type=click.Path(exists=True), required=True)
@click.option("--n", type=int, default=100000, show_default=True)
@click.option("--offset", type=float, default=0.0, show_default=True,
              help="relative Frobenius distance of the probe point from the teacher")
@click.option("--seed", type=int, default=0, show_default=True)
def hessian(teacher_path, n, offset, seed):
    """Empirical Hessian spectrum beside the theory bracket."""
    teacher = load_teacher(teacher_path)
    W = offset_weights(teacher, offset, seed)
    report = spectrum_report(teacher, W, n, seed)
    click.echo(json.dumps(report.to_dict(), indent=1))


@main.command()
@click.option("--activation", required=True, type=click.Choice(sorted(ACTIVATIONS)))
@click.option("--sigma", default="1.0", show_default=True, help="comma-separated scales")
def rho(activation, sigma):
    """CSV table of the moment functionals and margin per scale."""
    act = get_activation(activation)
    sigmas = [float(s) for s in sigma.split(",") if s.strip()]
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["quantity"] + [f"{activation} (sigma={s:g})" for s in sigmas])
    profiles = [gaussian_moments(act, s) for s in sigmas]
    for label, pick in [
        ("alpha0", lambda p: p.alpha[0]),
        ("alpha1", lambda p: p.alpha[1]),
        ("alpha2", lambda p: p.alpha[2]),
        ("beta0", lambda p: p.beta0),
        ("beta2", lambda p: p.beta2),
        ("rho", lambda p: p.rho),
    ]:
        writer.writerow([label] + [repr(float(pick(p))) for p in profiles])


@main.group()
def grid():
    """Experiment sweeps; exit code 1 when a configured threshold fails."""


def _load_cfg(config_path):
    return harness.ExperimentConfig.from_json(config_path)


def _finish(violations):
    for v in violations:
        click.echo(f"THRESHOLD VIOLATED: {v}", err=True)
    if violations:
        sys.exit(1)
    click.echo("all thresholds satisfied")


@grid.command("recovery")
@click.argument("config_path", type=click.Path(exists=True))
def grid_recovery(config_path):
    cfg = _load_cfg(config_path)
    _, rate_map = harness.run_recovery_grid(cfg)
    click.echo(f"wrote results under {cfg.out_dir}")
    _finish(harness.check_recovery_thresholds(cfg, rate_map))


@grid.command("init")
@click.argument("config_path", type=click.Path(exists=True))
def grid_init(config_path):
    cfg = _load_cfg(config_path)
    _, mean_map, _ = harness.run_init_error_grid(cfg)
    click.echo(f"wrote results under {cfg.out_dir}")
    _finish(harness.check_init_thresholds(cfg, mean_map))


@grid.command("convergence")
@click.argument("config_path", type=click.Path(exists=True))
def grid_convergence(config_path):
    cfg = _load_cfg(config_path)
    runs, _ = harness.run_convergence_comparison(cfg)
    click.echo(f"wrote results under {cfg.out_dir}")
    _finish(harness.check_convergence_thresholds(cfg, runs))


if __name__ == "__main__":
    main()
