"""Experiment grids: recovery rate, initialization error, convergence.

Every trial's seed is a pure function of (master seed, d, n, trial), so
a grid is reproducible row for row no matter how trials are scheduled
across workers.  Results land in sorted CSV files next to rendered
figures; wall-clock timings go to a sidecar file because they are the
one measurement that can never be made deterministic.  Reruns skip
(d, n, trial) keys already present in the output.
"""

import csv
import json
import multiprocessing
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import seeding
from .activations import get_activation
from .initialization import InitConfig, initialize, initialize_population
from .model import generate_teacher, sample
from .train import GdConfig, learn, _column_costs, _best_permutation

WORKERS_ENV = "ONELAYER_WORKERS"


@dataclass(frozen=True)
class ExperimentConfig:
    d_values: tuple = (10, 25, 50)
    n_values: tuple = (1000, 3000, 10000)
    k: int = 5
    kappa: float = 2.0
    activation: str = "squared_relu"
    trials: int = 10
    master_seed: int = 0
    eta: float = 0.02
    iters: int = 500
    tol: float = 0.01
    projections: int = 100
    exact_moments: bool = False
    out_dir: str = "runs"
    thresholds: dict = field(default_factory=dict)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            doc = json.load(fh)
        doc.pop("kind", None)
        for key in ("d_values", "n_values"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)


def _worker_count():
    raw = os.environ.get(WORKERS_ENV, "")
    if raw.strip():
        return max(1, int(raw))
    return os.cpu_count() or 1


def _run_trials(fn, specs):
    """Each trial runs in a freshly spawned single-task process.

    Long-lived processes drift into different heap layouts, which
    perturbs low-level reduction rounding; failing trials amplify that
    chaotically, so byte-reproducible grids need every trial to start
    from an identical interpreter state.  Worker count then only
    affects scheduling, never values.
    """
    if not specs:
        return []
    workers = min(_worker_count(), len(specs))
    ctx = multiprocessing.get_context("spawn")
    with ctx.Pool(processes=workers, maxtasksperchild=1) as pool:
        return pool.map(fn, specs, chunksize=1)


def _write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x):
    if isinstance(x, float):
        return repr(float(x))
    return x


def _read_existing(path, key_len):
    path = Path(path)
    if not path.exists():
        return {}
    out = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for row in reader:
            key = tuple(int(v) for v in row[:key_len])
            out[key] = row
    return out


def _trial_cfg(cfg):
    # slim picklable view for worker processes
    return {
        "k": cfg.k,
        "kappa": cfg.kappa,
        "activation": cfg.activation,
        "eta": cfg.eta,
        "iters": cfg.iters,
        "tol": cfg.tol,
        "projections": cfg.projections,
        "exact_moments": cfg.exact_moments,
    }


# ---------------------------------------------------------------------------
# recovery grid


def _recovery_trial(spec):
    d, n, trial, seed, tc = spec
    act = get_activation(tc["activation"])
    started = time.perf_counter()
    try:
        teacher = generate_teacher(d, tc["k"], tc["kappa"], seed, act)
        samples = sample(teacher, n, seed)
        init = initialize(samples, tc["k"], act,
                          InitConfig(seed=seed, projections=tc["projections"]))
        report = learn(samples, act, init.W0, init.v0,
                       GdConfig(eta=tc["eta"], iters=tc["iters"], tol=tc["tol"], seed=seed),
                       teacher=teacher)
        rel = report.rel_err[-1] if report.rel_err else float("nan")
        row = [d, n, trial, seed, int(report.success), _fmt(float(rel)), report.iters, ""]
    except Exception as exc:  # noqa: BLE001 - a failed trial is data, not a crash
        row = [d, n, trial, seed, 0, _fmt(float("nan")), 0, type(exc).__name__]
    seconds = time.perf_counter() - started
    return row, [d, n, trial, _fmt(seconds)]


def run_recovery_grid(cfg: ExperimentConfig):
    """Teacher -> sample -> initialize -> descend, per grid cell and trial.

    Writes recovery_results.csv, recovery_rates.csv, a timing sidecar,
    and a recovery-rate heatmap.  Returns (rows, rates dict).
    """
    out = Path(cfg.out_dir)
    results_path = out / "recovery_results.csv"
    existing = _read_existing(results_path, 3)

    specs = []
    for d in cfg.d_values:
        for n in cfg.n_values:
            for trial in range(cfg.trials):
                if (d, n, trial) in existing:
                    continue
                seed = seeding.trial_seed(cfg.master_seed, d, n, trial)
                specs.append((d, n, trial, seed, _trial_cfg(cfg)))

    fresh = _run_trials(_recovery_trial, specs)
    rows = list(existing.values()) + [r for r, _ in fresh]
    rows.sort(key=lambda r: (int(r[0]), int(r[1]), int(r[2])))
    _write_csv(results_path, ["d", "n", "trial", "seed", "success", "rel_err", "iters", "error"], rows)
    if fresh:
        _write_csv(out / "recovery_timings.csv", ["d", "n", "trial", "seconds"], [t for _, t in fresh])

    rates = {}
    for row in rows:
        key = (int(row[0]), int(row[1]))
        rates.setdefault(key, []).append(int(row[4]))
    rate_rows = [[d, n, _fmt(float(np.mean(v)))] for (d, n), v in sorted(rates.items())]
    _write_csv(out / "recovery_rates.csv", ["d", "n", "rate"], rate_rows)
    rate_map = {key: float(np.mean(v)) for key, v in rates.items()}
    from . import figures  # deferred so spawned workers skip matplotlib

    figures.rate_heatmap(cfg.d_values, cfg.n_values, rate_map, out / "recovery_rate.png",
                         title="recovery rate", vmin=0.0, vmax=1.0)
    return rows, rate_map


# ---------------------------------------------------------------------------
# initialization error grid


def _init_error(W0, v0, teacher):
    costs, _, _ = _column_costs(W0, v0, teacher)
    k = costs.shape[0]
    err, perm = _best_permutation(costs, np.ones((k, k), dtype=bool))
    v_correct = all(v0[perm[j]] == teacher.v[j] for j in range(k))
    return float(err), bool(v_correct)


def _init_trial(spec):
    d, n, trial, seed, tc = spec
    act = get_activation(tc["activation"])
    try:
        teacher = generate_teacher(d, tc["k"], tc["kappa"], seed, act)
        icfg = InitConfig(seed=seed, projections=tc["projections"])
        if tc["exact_moments"]:
            init = initialize_population(teacher, icfg)
        else:
            samples = sample(teacher, n, seed)
            init = initialize(samples, tc["k"], act, icfg)
        err, v_ok = _init_error(init.W0, init.v0, teacher)
        return [d, n, trial, seed, _fmt(err), int(v_ok), ""]
    except Exception as exc:  # noqa: BLE001
        return [d, n, trial, seed, _fmt(float("nan")), 0, type(exc).__name__]


def run_init_error_grid(cfg: ExperimentConfig):
    """Permutation-matched initialization error per grid cell and trial."""
    out = Path(cfg.out_dir)
    results_path = out / "init_results.csv"
    existing = _read_existing(results_path, 3)

    specs = []
    for d in cfg.d_values:
        for n in cfg.n_values:
            for trial in range(cfg.trials):
                if (d, n, trial) in existing:
                    continue
                seed = seeding.trial_seed(cfg.master_seed, d, n, trial)
                specs.append((d, n, trial, seed, _trial_cfg(cfg)))

    fresh = _run_trials(_init_trial, specs)
    rows = list(existing.values()) + fresh
    rows.sort(key=lambda r: (int(r[0]), int(r[1]), int(r[2])))
    _write_csv(results_path, ["d", "n", "trial", "seed", "init_err", "v_correct", "error"], rows)

    cells = {}
    for row in rows:
        key = (int(row[0]), int(row[1]))
        cells.setdefault(key, []).append((float(row[4]), int(row[5])))
    agg_rows, mean_map, dark = [], {}, set()
    for key in sorted(cells):
        errs = [e for e, _ in cells[key]]
        v_all = all(v for _, v in cells[key])
        mean_err = float(np.mean(errs))
        agg_rows.append([key[0], key[1], _fmt(mean_err), int(v_all)])
        mean_map[key] = mean_err
        if not v_all:
            dark.add(key)
    _write_csv(out / "init_mean.csv", ["d", "n", "mean_err", "v_all_correct"], agg_rows)
    from . import figures

    figures.rate_heatmap(cfg.d_values, cfg.n_values, mean_map, out / "init_error.png",
                         title="tensor initialization error", dark_cells=dark)
    return rows, mean_map, dark


# ---------------------------------------------------------------------------
# convergence comparison

APPROACHES = ("tensor", "random-wv", "random-w-oracle-v")


def _convergence_task(args):
    cfg, risk_stop = args
    d, n = cfg.d_values[0], cfg.n_values[0]
    seed = seeding.trial_seed(cfg.master_seed, d, n, 0)
    act = get_activation(cfg.activation)
    teacher = generate_teacher(d, cfg.k, cfg.kappa, seed, act)
    samples = sample(teacher, n, seed)

    rng_w = seeding.stream(seed, seeding.RANDOM_W)
    W_rand = rng_w.standard_normal((d, cfg.k)) / np.sqrt(d)
    rng_v = seeding.stream(seed, seeding.RANDOM_V)
    v_rand = rng_v.standard_normal(cfg.k)

    base = GdConfig(eta=cfg.eta, iters=cfg.iters, tol=0.0, risk_tol=risk_stop, seed=seed)
    runs = {}
    init = initialize(samples, cfg.k, act, InitConfig(seed=seed, projections=cfg.projections))
    runs["tensor"] = learn(samples, act, init.W0, init.v0, base, teacher=teacher)
    runs["random-wv"] = learn(samples, act, W_rand, v_rand, replace(base, train_v=True),
                              teacher=teacher)
    runs["random-w-oracle-v"] = learn(samples, act, W_rand, teacher.v, base, teacher=teacher)
    return runs


def run_convergence_comparison(cfg: ExperimentConfig, risk_stop=1e-13):
    """Three initializations on identical data: full pipeline with fixed
    output signs, random start training both layers, random start with
    oracle output signs."""
    (runs,) = _run_trials(_convergence_task, [(cfg, risk_stop)])

    rows = []
    for name in APPROACHES:
        rep = runs[name]
        for it, risk in enumerate(rep.risk):
            rel = rep.rel_err[it] if it < len(rep.rel_err) else float("nan")
            rows.append([name, it, _fmt(float(risk)), _fmt(float(rel))])
    out = Path(cfg.out_dir)
    _write_csv(out / "convergence.csv", ["approach", "iter", "objective", "rel_err"], rows)
    from . import figures

    figures.convergence_plot({name: runs[name].risk for name in APPROACHES},
                             out / "convergence.png")
    return runs, rows


# ---------------------------------------------------------------------------
# threshold evaluation (drives the CLI exit code)


def first_iteration_below(risks, level):
    for i, r in enumerate(risks):
        if r <= level:
            return i
    return None


def loglinear_r2(values):
    """R^2 of a straight-line fit to log10 of a positive trace."""
    y = np.log10(np.maximum(np.asarray(values, dtype=float), 1e-300))
    x = np.arange(len(y), dtype=float)
    if len(y) < 3:
        return 0.0
    coeffs = np.polyfit(x, y, 1)
    resid = y - np.polyval(coeffs, x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0
    return 1.0 - float(np.sum(resid**2)) / ss_tot


def check_recovery_thresholds(cfg, rate_map):
    violations = []
    for item in cfg.thresholds.get("min_rate", []):
        key = (int(item["d"]), int(item["n"]))
        rate = rate_map.get(key)
        if rate is None or rate < float(item["value"]):
            violations.append(f"recovery rate at d={key[0]}, n={key[1]} is {rate}, need >= {item['value']}")
    if cfg.thresholds.get("rate_nonincreasing_in_d"):
        slack = 1.0 / cfg.trials + 1e-12
        for n in cfg.n_values:
            rates = [rate_map[(d, n)] for d in cfg.d_values]
            for a, b, d_hi in zip(rates, rates[1:], cfg.d_values[1:]):
                if b > a + slack:
                    violations.append(
                        f"recovery rate increased with d at n={n}: {a} -> {b} (d={d_hi})"
                    )
    return violations


def check_init_thresholds(cfg, mean_map):
    violations = []
    if cfg.thresholds.get("err_decreasing_in_n"):
        for d in cfg.d_values:
            means = [mean_map[(d, n)] for n in cfg.n_values]
            for a, b, n_hi in zip(means, means[1:], cfg.n_values[1:]):
                if not b < a:
                    violations.append(
                        f"mean init error not strictly decreasing at d={d}: {a} -> {b} (n={n_hi})"
                    )
    ceiling = cfg.thresholds.get("max_err")
    if ceiling is not None:
        worst = max(mean_map.values())
        if worst > float(ceiling):
            violations.append(f"worst mean init error {worst} exceeds {ceiling}")
    return violations


def check_convergence_thresholds(cfg, runs, fit_window=100):
    violations = []
    th = cfg.thresholds
    target = float(th.get("first_to", 1e-6))
    hits = {name: first_iteration_below(runs[name].risk, target) for name in APPROACHES}
    if th.get("tensor_fastest", True):
        t = hits["tensor"]
        others = [hits[n] for n in APPROACHES[1:]]
        if t is None or any(o is not None and o <= t for o in others):
            violations.append(f"tensor start not first to objective {target}: {hits}")
    stuck = th.get("random_wv_stuck_above")
    if stuck is not None and min(runs["random-wv"].risk) < float(stuck):
        violations.append(
            f"random-wv objective fell below {stuck}: {min(runs['random-wv'].risk)}"
        )
    r2_min = th.get("loglinear_r2")
    if r2_min is not None:
        for name in ("tensor", "random-w-oracle-v"):
            trace = runs[name].risk[-fit_window:]
            r2 = loglinear_r2(trace)
            if r2 < float(r2_min):
                violations.append(f"{name} final-phase log fit R^2 = {r2:.4f} < {r2_min}")
    return violations
