"""Command-line front end.

    mfstein meanfield|simulate|rate|stein|perturb|all --config cfg.json --out DIR

Exit codes: 0 success, 2 usage/config error, 3 numerical failure,
4 model-assumption violation.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, ModelSpec, default_config, load_config
from .ctmc import (
    LatticeState,
    RateBoundViolation,
    ReducibleChain,
    empirical_stationary,
    gillespie_simulate,
    msd_sweep,
    stationary_moments,
    uniformize_simulate,
)
from .meanfield import (
    EquilibriumNotFound,
    ModelAssumptionError,
    PreconditionError,
    equilibrium,
    integrate,
    stability_report,
)
from .model import ModelError
from .ode import StiffnessError
from .perturbation import (
    ExponentialStabilityWarning,
    cumulative_error_scaling,
    error_trajectory,
    sensitivity_decay_check,
)
from .stats import InsufficientData
from .stein import InstabilityError, second_order_remainder_scan, stein_report

log = logging.getLogger("mfstein")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_ASSUMPTION = 0, 2, 3, 4

# reference values quoted for the SIS example (alpha = beta = 1/2)
REF_INTERVAL = (0.21, 0.27)
REF_STD = {100: 0.02177, 1000: 0.0068}


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"not serializable: {type(o)}")


class Run:
    """Output directory bookkeeping for one command invocation."""

    def __init__(self, cfg: ExperimentConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.out = Path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self.summary: list[str] = []
        self.tasks: list[dict] = []
        self.t0 = time.time()

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def say(self, line: str) -> None:
        self.summary.append(line)
        print(line)

    def finish(self) -> None:
        (self.out / "summary.txt").write_text("\n".join(self.summary) + "\n")
        manifest = {
            "command": self.command,
            "config_sha256": self.cfg.digest(),
            "config": self.cfg.to_dict(),
            "tool_version": __version__,
            "seed": self.cfg.seed,
            "tasks": self.tasks,
            "wall_clock_seconds": round(time.time() - self.t0, 3),
            "outputs": sorted(set(self.files)) + ["summary.txt"],
        }
        write_json(self.out / "manifest.json", manifest)


def _equilibrium(cfg, model):
    return equilibrium(model, tol=cfg.tolerances.equilibrium)


def cmd_meanfield(cfg: ExperimentConfig, run: Run) -> int:
    model = cfg.model.build()
    xstar = _equilibrium(cfg, model)
    rep = stability_report(model, xstar)
    out = {"model": cfg.model.family, "params": cfg.model.params, **rep.to_dict()}
    write_json(run.path("meanfield.json"), out)
    if model.n == len(cfg.simulate.x0) and model.bounded:
        traj = integrate(model, cfg.simulate.x0, horizon=20.0, tol=cfg.tolerances.ode,
                         t_eval=np.linspace(0, 20.0, 201))
        traj.to_csv(run.path("trajectory.csv"))
    run.say(f"equilibrium x* = {[f'{v:.12g}' for v in xstar]}")
    run.say(f"eigenvalues (conserved subspace) = "
            f"{[complex(round(z.real, 10), round(z.imag, 10)) for z in rep.eigenvalues]}")
    run.say("locally exponentially stable: "
            f"{'yes' if rep.locally_exponentially_stable else 'NO'}; "
            f"global stability: {rep.global_stability}")
    return EXIT_OK


def _simulate_task(task: dict) -> dict:
    model = ModelSpec(**task["model"]).build()
    M = task["M"]
    start = LatticeState.nearest(task["x0"], M)
    sim = uniformize_simulate if task["simulator"] == "uniformization" else gillespie_simulate
    t0 = time.time()
    path = sim(model, M, start, task["horizon"], seed=task["seed"], replica=task["replica"])
    emp = empirical_stationary(path, task["burn_in"])
    mom = stationary_moments(emp, task["xstar"])
    grid, xs = path.thin(task["points"])
    return {"M": M, "grid": grid, "x": xs, "events": path.n_events,
            "rms_dev": np.sqrt(mom.msd_components),
            "rms_dev_stderr": mom.stderr_components, "mean": mom.mean,
            "seconds": time.time() - t0}


def _map(fn, tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def cmd_simulate(cfg: ExperimentConfig, run: Run) -> int:
    model = cfg.model.build()
    xstar = _equilibrium(cfg, model)
    sc = cfg.simulate
    tasks = [{"model": {"family": cfg.model.family, "params": cfg.model.params},
              "M": int(M), "x0": sc.x0, "horizon": sc.horizon, "seed": cfg.seed,
              "replica": i, "simulator": cfg.simulator, "burn_in": sc.burn_in,
              "points": sc.points, "xstar": xstar.tolist()}
             for i, M in enumerate(sc.M_list)]
    results = _map(_simulate_task, tasks, cfg.workers)
    rows = []
    for task, res in zip(tasks, results):
        n = res["x"].shape[1]
        write_csv(run.path(f"path_M{res['M']}.csv"), ["t"] + [f"x_{i + 1}" for i in range(n)],
                  [[t, *x] for t, x in zip(res["grid"], res["x"])])
        rows.append([res["M"], *res["rms_dev"], res["events"]])
        run.tasks.append({"M": res["M"], "seed": task["seed"], "replica": task["replica"],
                          "events": res["events"]})
        run.say(f"M={res['M']:>7d}: events={res['events']}, "
                f"rms deviation of x_i from x*_i = {np.round(res['rms_dev'], 6).tolist()}")
    write_csv(run.path("simulate_summary.csv"),
              ["M"] + [f"rms_dev_x_{i + 1}" for i in range(model.n)] + ["events"], rows)
    write_json(run.path("simulate_meta.json"), {
        "time_axis": "continuous time; uniformization tick index is approximately "
                     "t * rate_bound, i.e. discrete time scaled by M",
        "simulator": cfg.simulator, "burn_in": sc.burn_in if sc.burn_in is not None
        else 0.2 * sc.horizon, "xstar": xstar})
    if model.n >= 2:
        dev = [r[2] for r in rows]
        dec = all(a > b for a, b in zip(dev, dev[1:]))
        run.say(f"rms deviation of x_2 strictly decreasing in M: {'yes' if dec else 'NO'}")
    return EXIT_OK


def cmd_rate(cfg: ExperimentConfig, run: Run, method: str | None = None) -> int:
    model = cfg.model.build()
    xstar = _equilibrium(cfg, model)
    rc = cfg.rate
    method = method or rc.method
    rows = msd_sweep(model, rc.M_list, xstar, method=method, horizon=rc.horizon,
                     seed=cfg.seed, simulator=cfg.simulator, component=rc.component)
    write_csv(run.path("rate.csv"), ["M", "msd", "m_times_msd", "stderr", "method", "seed"],
              [[r["M"], r["msd"], r["m_times_msd"], r["stderr"], r["method"], r["seed"]]
               for r in rows])
    write_json(run.path("rate.json"), {"component": rc.component, "xstar": xstar,
                                       "rows": rows})
    for r in rows:
        run.say(f"M={r['M']:>5d}  M*msd={r['m_times_msd']:.6f}  std={r['std_dev']:.6f}"
                f"  stderr={r['stderr']:.2e}")
    if cfg.model.family == "sis" and rc.component == 0:
        lo, hi = REF_INTERVAL
        inside = all(lo <= r["m_times_msd"] <= hi for r in rows)
        run.say(f"check: all M*E[(x0-x0*)^2] in [{lo}, {hi}]: {'PASS' if inside else 'FAIL'}"
                f" (range {min(r['m_times_msd'] for r in rows):.4f}.."
                f"{max(r['m_times_msd'] for r in rows):.4f})")
        for r in rows:
            if r["M"] in REF_STD:
                ref = REF_STD[r["M"]]
                ok = abs(r["std_dev"] - ref) <= 0.1 * ref
                run.say(f"check: std dev at M={r['M']} = {r['std_dev']:.5f} vs {ref} +-10%: "
                        f"{'PASS' if ok else 'FAIL'}")
    return EXIT_OK


def cmd_stein(cfg: ExperimentConfig, run: Run) -> int:
    model = cfg.model.build()
    xstar = _equilibrium(cfg, model)
    for M in cfg.stein.M_list:
        rep = stein_report(model, int(M), xstar, tol=cfg.tolerances.poisson)
        rep.to_json(run.path(f"stein_M{M}.json"))
        text = rep.summary()
        (run.out / f"stein_M{M}.txt").write_text(text + "\n")
        run.files.append(f"stein_M{M}.txt")
        for line in text.splitlines():
            run.say(line)
    if cfg.stein.remainder_M:
        rows, slope = second_order_remainder_scan(model, cfg.stein.remainder_M, xstar)
        write_csv(run.path("remainder.csv"), ["M", "max_remainder", "fit_slope"],
                  [[r["M"], r["max_remainder"], slope] for r in rows])
        run.say(f"second-order remainder slope vs M: {slope:.4f}")
    return EXIT_OK


def cmd_perturb(cfg: ExperimentConfig, run: Run) -> int:
    model = cfg.model.build()
    pc = cfg.perturb
    xstar = _equilibrium(cfg, model)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ExponentialStabilityWarning)
        rate = sensitivity_decay_check(model, pc.x, xstar)
    for w in caught:
        run.say(f"WARNING: {w.message}")
        print(f"warning: {w.message}", file=sys.stderr)
    run.say(f"sensitivity decay rate: {rate:.6f}")
    if rate >= 0:
        return EXIT_OK
    z = cfg.perturb_direction
    rows, slope = cumulative_error_scaling(model, pc.x, z, pc.eps, tol=cfg.tolerances.perturb,
                                           horizon=pc.horizon)
    control = error_trajectory(model, pc.x, pc.x, horizon=1.0, tol=cfg.tolerances.perturb)
    write_csv(run.path("perturb.csv"), ["epsilon", "cumulative_error", "fit_slope"],
              [[0.0, control.cumulative, slope]]
              + [[r["epsilon"], r["cumulative_error"], r["fit_slope"]] for r in rows])
    mid = pc.eps[len(pc.eps) // 2]
    tr = error_trajectory(model, pc.x, np.asarray(pc.x) + mid * z,
                          tol=cfg.tolerances.perturb, t_eval=np.linspace(0, 20, 401))
    write_csv(run.path("error_trajectory.csv"),
              ["t"] + [f"e_{i + 1}" for i in range(model.n)] + ["e_norm"],
              [[t, *e, en] for t, e, en in zip(tr.times, tr.e, tr.e_norm)])
    for r in rows:
        run.say(f"eps={r['epsilon']:<8g} int||e||dt={r['cumulative_error']:.6e}"
                f"{'  (noise limited)' if r['noise_limited'] else ''}")
    run.say(f"control y=x: int||e||dt = {control.cumulative:g}")
    run.say(f"log-log slope of cumulative error vs eps: {slope:.4f}")
    return EXIT_OK


COMMANDS = {"meanfield": cmd_meanfield, "simulate": cmd_simulate, "rate": cmd_rate,
            "stein": cmd_stein, "perturb": cmd_perturb}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfstein", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=[*COMMANDS, "all"])
    p.add_argument("--config", type=Path, help="JSON config file")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--seed", type=int, help="base RNG seed (overrides config)")
    p.add_argument("--workers", type=int, help="worker processes for simulations")
    p.add_argument("--method", help="exact|simulate for 'rate'; "
                                    "gillespie|uniformization for 'simulate'")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else default_config()
        if args.out:
            cfg.out = args.out
        if args.seed is not None:
            cfg.seed = args.seed
        if args.workers is not None:
            cfg.workers = args.workers
        rate_method = None
        if args.method:
            if args.method in ("exact", "simulate"):
                rate_method = args.method
            elif args.method in ("gillespie", "uniformization"):
                cfg.simulator = args.method
            else:
                raise ConfigError(f"unknown --method {args.method!r}")
        cfg.validate()
    except ConfigError as exc:
        print(f"mfstein: error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    names = list(COMMANDS) if args.command == "all" else [args.command]
    run = Run(cfg, args.command)
    try:
        for name in names:
            run.say(f"== {name} ==")
            if name == "rate":
                code = cmd_rate(cfg, run, rate_method)
            else:
                code = COMMANDS[name](cfg, run)
            if code != EXIT_OK:
                return code
    except (ModelAssumptionError, PreconditionError, ReducibleChain, ModelError,
            RateBoundViolation) as exc:
        run.say(f"model assumption violated: {exc}")
        return EXIT_ASSUMPTION
    except (EquilibriumNotFound, StiffnessError, InstabilityError, InsufficientData,
            np.linalg.LinAlgError) as exc:
        run.say(f"numerical failure: {exc}")
        return EXIT_NUMERICAL
    except ValueError as exc:
        run.say(f"invalid input: {exc}")
        return EXIT_USAGE
    finally:
        run.finish()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
