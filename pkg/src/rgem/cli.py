"""Experiment harness: sweeps of synthetic scenarios and iteration traces.

Config (JSON)::

    {
      "scenarios": [{"n": [3000, 1000, 600, 400], "m": [50], "k": 3,
                     "radius": 2.0, "rho_range": [0.3, 0.9],
                     "theta_range": [0.5, 2.0], "weights": null}],
      "replicates": 25,
      "methods": ["kmeans", "gem", "rgem"],
      "fit": {"max_iter": 200, "tol": 1e-6, "cv_refresh_every": 20,
              "cv_folds": 5, "eta_grid": null, "loading": 1e-6},
      "seed": 0,
      "output_dir": "results",
      "record_timing": true
    }

Each scenario entry expands to every (n, m) pair.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from ._seeding import derive_seed
from .em import FitConfig, fit
from .errors import RgemError
from .kmeans import kmeans, params_from_labels
from .synth import draw_scenario, match_clusters, nmi, sample_gmm, scenario_params

log = logging.getLogger("rgem")

METHODS = ("kmeans", "gem", "rgem")
FIT_KEYS = ("max_iter", "tol", "cv_refresh_every", "cv_folds", "eta_grid", "loading")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    scenario_id: int
    n: int
    m: int
    k: int = 3
    radius: float = 2.0
    rho_range: tuple = (0.3, 0.9)
    theta_range: tuple = (0.5, 2.0)
    weights: Optional[tuple] = None


@dataclass
class ExperimentConfig:
    scenarios: list
    replicates: int = 25
    methods: tuple = METHODS
    fit: dict = field(default_factory=dict)
    seed: int = 0
    output_dir: str = "results"
    record_timing: bool = True

    def __post_init__(self):
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if not self.methods:
            raise ConfigError("at least one method is required")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods: {bad}")
        if not self.scenarios:
            raise ConfigError("at least one scenario is required")
        unknown = set(self.fit) - set(FIT_KEYS)
        if unknown:
            raise ConfigError(f"unknown fit options: {sorted(unknown)}")
        self.methods = tuple(m for m in METHODS if m in self.methods)

    @property
    def max_k(self) -> int:
        return max(s.k for s in self.scenarios)

    def fit_config(self, k: int, seed: int, mode: str) -> FitConfig:
        opts = dict(self.fit)
        if opts.get("eta_grid") is not None:
            opts["eta_grid"] = tuple(opts["eta_grid"])
        return FitConfig(k=k, seed=seed, mode=mode, **opts)


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def parse_config(doc: dict) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from a decoded JSON document."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    scenarios = []
    for entry in doc.get("scenarios", []):
        extra = set(entry) - {"n", "m", "k", "radius", "rho_range", "theta_range", "weights"}
        if extra:
            raise ConfigError(f"unknown scenario keys: {sorted(extra)}")
        if "n" not in entry or "m" not in entry:
            raise ConfigError("each scenario needs n and m")
        for n in _as_list(entry["n"]):
            for m in _as_list(entry["m"]):
                scenarios.append(Scenario(
                    scenario_id=len(scenarios),
                    n=int(n),
                    m=int(m),
                    k=int(entry.get("k", 3)),
                    radius=float(entry.get("radius", 2.0)),
                    rho_range=tuple(entry.get("rho_range", (0.3, 0.9))),
                    theta_range=tuple(entry.get("theta_range", (0.5, 2.0))),
                    weights=None if entry.get("weights") is None else tuple(entry["weights"]),
                ))
    try:
        return ExperimentConfig(
            scenarios=scenarios,
            replicates=int(doc.get("replicates", 25)),
            methods=tuple(doc.get("methods", METHODS)),
            fit=dict(doc.get("fit", {})),
            seed=int(doc.get("seed", 0)),
            output_dir=str(doc.get("output_dir", "results")),
            record_timing=bool(doc.get("record_timing", True)),
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return parse_config(doc)


def replicate_seed(master: int, scenario_id: int, replicate: int) -> int:
    return derive_seed(master, scenario_id, replicate)


def make_replicate(sc: Scenario, seed: int):
    spec = draw_scenario(sc.n, sc.m, k=sc.k, seed=seed, rho_range=sc.rho_range,
                         theta_range=sc.theta_range, radius=sc.radius, weights=sc.weights)
    return spec, sample_gmm(spec), scenario_params(spec)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def results_header(k: int) -> list:
    return (["scenario_id", "n", "m", "k", "replicate", "method", "seed", "nmi"]
            + [f"frob_err_c{j + 1}" for j in range(k)]
            + ["iterations", "converged"]
            + [f"eta_{j + 1}" for j in range(k)]
            + ["wall_ms", "status"])


def _run_method(cfg: ExperimentConfig, sc: Scenario, rep: int, method: str) -> dict:
    seed = replicate_seed(cfg.seed, sc.scenario_id, rep)
    row = {"scenario_id": sc.scenario_id, "n": sc.n, "m": sc.m, "k": sc.k,
           "replicate": rep, "method": method, "seed": seed}
    t0 = time.perf_counter()
    try:
        _, data, truth = make_replicate(sc, seed)
        if method == "kmeans":
            fc = cfg.fit_config(sc.k, seed, "vanilla")
            # same seed derivation as the EM initialization
            km = kmeans(data, sc.k, derive_seed(fc.seed, 0))
            labels, params = km.labels, params_from_labels(data, km.labels, sc.k)
            iterations, converged, etas = km.iterations, km.converged, [None] * sc.k
        else:
            mode = "vanilla" if method == "gem" else "regularized"
            rep_ = fit(data, cfg.fit_config(sc.k, seed, mode))
            labels, params = rep_.hard_labels, rep_.params
            iterations, converged, etas = rep_.iterations_run, rep_.converged, list(rep_.etas)
        perm = match_clusters(params, truth)
        frob = [float(np.linalg.norm(params.covs[perm[j]].entries - truth.covs[j].entries))
                for j in range(sc.k)]
        row.update(nmi=nmi(data.true_labels, labels), frob=frob, iterations=iterations,
                   converged=converged, etas=etas, status="ok")
    except RgemError as exc:
        log.warning("scenario %d replicate %d %s failed: %s", sc.scenario_id, rep, method, exc)
        row.update(nmi=None, frob=[None] * sc.k, iterations=None, converged=None,
                   etas=[None] * sc.k, status="failed")
    row["wall_ms"] = (time.perf_counter() - t0) * 1e3 if cfg.record_timing else None
    return row


def _row_cells(row: dict, k: int) -> list:
    pad = [None] * (k - row["k"])
    cells = [row["scenario_id"], row["n"], row["m"], row["k"], row["replicate"],
             row["method"], row["seed"], row["nmi"]]
    cells += list(row["frob"]) + pad
    cells += [row["iterations"], row["converged"]]
    cells += list(row["etas"]) + pad
    cells += [row["wall_ms"], row["status"]]
    return [c if isinstance(c, str) else _fmt(c) for c in cells]


def _task(args):
    return _run_method(*args)


def _map(tasks, jobs):
    if jobs <= 1:
        return [_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(_task, tasks, chunksize=1))


def run_sweep(cfg: ExperimentConfig, out_dir=None, jobs: int = 1) -> list:
    """Run every (scenario, replicate, method) and write ``results.csv``.

    Returns the result rows as dicts, in (scenario, replicate, method) order.
    """
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(cfg, sc, r, meth) for sc in cfg.scenarios
             for r in range(cfg.replicates) for meth in cfg.methods]
    log.info("running %d fits with %d worker(s)", len(tasks), jobs)
    rows = _map(tasks, jobs)
    k = cfg.max_k
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(results_header(k))
        for row in rows:
            w.writerow(_row_cells(row, k))
    return rows


def _trace_replicate(args):
    cfg, sc, rep, cluster = args
    seed = replicate_seed(cfg.seed, sc.scenario_id, rep)
    _, data, truth = make_replicate(sc, seed)
    out = []
    for method in cfg.methods:
        if method == "kmeans":
            continue
        mode = "vanilla" if method == "gem" else "regularized"
        try:
            rep_ = fit(data, cfg.fit_config(sc.k, seed, mode),
                       reference=[c.entries for c in truth.covs])
        except RgemError as exc:
            log.warning("trace replicate %d %s failed: %s", rep, method, exc)
            continue
        # match on the shared k-means start so both methods track the same component
        est = match_clusters(rep_.init_params, truth)[cluster]
        for r in rep_.trace:
            out.append((method, rep, r.iteration, float(r.frob[est, cluster]), r.penalized_loglik))
    return out


def run_trace(cfg: ExperimentConfig, cluster: int, out_dir=None, jobs: int = 1) -> list:
    """Per-iteration covariance error of one true cluster (0-based), written to ``trace.csv``."""
    if len(cfg.scenarios) != 1:
        raise ConfigError("trace needs exactly one (n, m) scenario")
    sc = cfg.scenarios[0]
    if not 0 <= cluster < sc.k:
        raise ConfigError(f"cluster must be in 1..{sc.k}")
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(cfg, sc, r, cluster) for r in range(cfg.replicates)]
    if jobs <= 1:
        chunks = [_trace_replicate(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            chunks = list(ex.map(_trace_replicate, tasks))
    rows = [r for chunk in chunks for r in chunk]
    rows.sort(key=lambda r: (METHODS.index(r[0]), r[1], r[2]))
    with open(out / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "replicate", "iteration", "frobenius_error", "penalized_loglik"])
        for method, rep, it, err, pll in rows:
            w.writerow([method, rep, it, _fmt(err), _fmt(pll)])
    return rows


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rgem", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario sweep and write results.csv")
    run.add_argument("--config", required=True)
    run.add_argument("--out")
    run.add_argument("--seed", type=int)
    run.add_argument("--jobs", type=int, default=1)

    tr = sub.add_parser("trace", help="write per-iteration covariance errors to trace.csv")
    tr.add_argument("--config", required=True)
    tr.add_argument("--cluster", type=int, required=True, help="1-based true cluster index")
    tr.add_argument("--out")
    tr.add_argument("--seed", type=int)
    tr.add_argument("--jobs", type=int, default=1)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        if args.command == "run":
            rows = run_sweep(cfg, args.out, args.jobs)
            failed = sum(r["status"] != "ok" for r in rows)
            log.info("wrote %d rows (%d failed)", len(rows), failed)
        else:
            rows = run_trace(cfg, args.cluster - 1, args.out, args.jobs)
            log.info("wrote %d trace rows", len(rows))
    except (ConfigError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return 2
    return 0
