"""Simulated-data experiment: train on one scenario, evaluate transfer to others.

For each seed a training pool and fresh reference sets are generated under the
true reward. Each cell (method, k, seed) fits a model on the first ``2**k``
pool trajectories, rolls the fitted policy out on every scenario and compares
the rollouts with the reference sets. The ``TRUE`` cells roll out the true
policy again and give the self-baseline.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np

from .belief import tabulate_covariances
from .config import ExperimentConfig, echo_config, resolve_config
from .dpe import fit_dpe
from .estimators import EstimationOptions, estimate_reward
from .metrics import GaussianSummary, d_histogram, kl_discrete, kl_gaussian_temporal, reward_rd
from .simulator import simulate_batch
from .soft_solver import solve_soft_policy

log = logging.getLogger(__name__)

METRICS = ("KLG", "KL_d", "RD")
BASELINE = "TRUE"

# stream tags for seed derivation
_POOL, _REFERENCE, _BASELINE, _EVAL = 0, 1, 2, 3
_METHOD_TAG = {"MCE": 0, "MCL": 1, "DPE": 2}


def stream_seed(seed: int, *tags: int) -> int:
    """Independent integer seed for a named random stream of one repetition."""
    return int(np.random.SeedSequence([int(seed), *map(int, tags)]).generate_state(1)[0])


@dataclass
class CellResult:
    seed: int
    method: str
    k: Optional[int]
    status: str = "ok"
    message: str = ""
    theta_hat: Optional[list] = None
    metrics: dict = field(default_factory=dict)  # scenario -> metric -> value
    iterations: int = 0
    converged: Optional[bool] = None
    dpe: Optional[dict] = None  # chosen penalties and grid spans of a DPE fit

    @property
    def cell_id(self) -> str:
        k = "base" if self.k is None else f"k{self.k}"
        return f"seed{self.seed}_{self.method}_{k}"

    def to_dict(self) -> dict:
        return {"seed": self.seed, "method": self.method, "k": self.k, "status": self.status,
                "message": self.message, "theta_hat": self.theta_hat, "metrics": self.metrics,
                "iterations": self.iterations, "converged": self.converged, "dpe": self.dpe}


@dataclass
class E1Report:
    config: ExperimentConfig
    cells: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def values(self, scenario: str, method: str, k, metric: str) -> np.ndarray:
        return np.array([c.metrics[scenario][metric] for c in self.cells
                         if c.method == method and c.k == k and c.status == "ok"
                         and metric in c.metrics.get(scenario, {})])

    def summary(self) -> list:
        """Rows ``(scenario, method, k, metric, n, median, q25, q75)``."""
        keys = []
        for c in self.cells:
            for sc, ms in c.metrics.items():
                for m in ms:
                    key = (sc, c.method, c.k, m)
                    if key not in keys:
                        keys.append(key)
        order = {m: i for i, m in enumerate((BASELINE, "MCE", "MCL", "DPE"))}
        keys.sort(key=lambda x: (x[0], order.get(x[1], 9), -1 if x[2] is None else x[2], METRICS.index(x[3])))
        rows = []
        for sc, method, k, metric in keys:
            v = self.values(sc, method, k, metric)
            if v.size == 0:
                continue
            q25, med, q75 = np.percentile(v, [25, 50, 75])
            rows.append((sc, method, k, metric, int(v.size), float(med), float(q25), float(q75)))
        return rows

    def theta_hat(self, method: str, k: int) -> dict:
        return {c.seed: np.asarray(c.theta_hat) for c in self.cells
                if c.method == method and c.k == k and c.status == "ok" and c.theta_hat is not None}


# --- per-seed context ---------------------------------------------------------

@lru_cache(maxsize=4)
def _scenario_setup(config_json: str, scenario: str):
    config = resolve_config(json.loads(config_json))
    problem = config.problem(scenario)
    schedule = tabulate_covariances(problem)
    return problem, schedule


@lru_cache(maxsize=4)
def _true_policy(config_json: str, scenario: str):
    problem, schedule = _scenario_setup(config_json, scenario)
    theta = json.loads(config_json)["theta"]
    return solve_soft_policy(problem, schedule, theta)


def _summaries(data, d_max: int, eps: float):
    return GaussianSummary.from_dataset(data), d_histogram(data, d_max, eps)


@lru_cache(maxsize=2)
def _seed_context(config_json: str, seed: int):
    config = resolve_config(json.loads(config_json))
    v = config.values
    train = v["train_scenario"]
    problem, schedule = _scenario_setup(config_json, train)
    pool = simulate_batch(problem, schedule, _true_policy(config_json, train),
                          config.resolved_pool_size, stream_seed(seed, _POOL),
                          metadata={"theta": v["theta"]})
    refs = {}
    for si, sc in enumerate(sorted(v["scenarios"])):
        p, s = _scenario_setup(config_json, sc)
        ref = simulate_batch(p, s, _true_policy(config_json, sc), v["eval_count"],
                             stream_seed(seed, _REFERENCE, si))
        refs[sc] = _summaries(ref, p.d_max, v["smoothing_eps"])
    return pool, refs


def _compare(reference, candidate) -> dict:
    g_ref, h_ref = reference
    g, h = candidate
    return {"KLG": kl_gaussian_temporal(g_ref, g), "KL_d": kl_discrete(h_ref, h)}


def _dpe_summary(trace: dict) -> dict:
    out = {"folds": trace["folds"], "criterion": "mean cross-validated deviance"}
    for name, part in (("continuous", trace["continuous"][0]), ("switch", trace["switch"])):
        out[name] = {"chosen": part["chosen"], "grid_max": part["lambdas"][0],
                     "grid_min": part["lambdas"][-1], "grid_size": len(part["lambdas"])}
    return out


def run_cell(config: ExperimentConfig, seed: int, method: str, k: Optional[int]) -> CellResult:
    """Fit, roll out and score one (method, k, seed) cell; failures are recorded."""
    cfg_json = json.dumps(config.values, sort_keys=True)
    v = config.values
    cell = CellResult(seed, method, k)
    try:
        pool, refs = _seed_context(cfg_json, seed)
        theta_true = config.theta_vector
        policies = {}
        if method == BASELINE:
            policies = {sc: _true_policy(cfg_json, sc) for sc in v["scenarios"]}
        elif method in ("MCE", "MCL"):
            train_problem, train_schedule = _scenario_setup(cfg_json, v["train_scenario"])
            opts = EstimationOptions(method=method, barrier_weight=v["barrier_weight"],
                                     rel_grad_tol=v["rel_grad_tol"], max_iters=v["max_iters"],
                                     theta_init=theta_true, seed=seed)
            res = estimate_reward(train_problem, pool.subset(2**k), opts, train_schedule)
            theta_hat = res.theta_star.as_vector()
            cell.theta_hat = [float(x) for x in theta_hat]
            cell.iterations, cell.converged = res.iterations, bool(res.converged)
            if not res.converged:
                cell.message = res.message
            for sc in v["scenarios"]:
                p, s = _scenario_setup(cfg_json, sc)
                policies[sc] = solve_soft_policy(p, s, theta_hat)
        elif method == "DPE":
            dpe = fit_dpe(pool.subset(2**k), folds=v["dpe_folds"], seed=seed)
            cell.dpe = _dpe_summary(dpe.cv_trace)
            policies = {sc: dpe for sc in v["scenarios"]}
        else:
            raise ValueError(f"unknown method {method!r}")

        for si, sc in enumerate(sorted(v["scenarios"])):
            p, s = _scenario_setup(cfg_json, sc)
            if method == BASELINE:
                stream = stream_seed(seed, _BASELINE, si)
            else:
                stream = stream_seed(seed, _EVAL, _METHOD_TAG[method], k, si)
            sim = simulate_batch(p, s, policies[sc], v["eval_count"], stream)
            cell.metrics[sc] = _compare(refs[sc], _summaries(sim, p.d_max, v["smoothing_eps"]))
        if cell.theta_hat is not None:
            cell.metrics[v["train_scenario"]]["RD"] = reward_rd(theta_true, cell.theta_hat)
        elif method == BASELINE:
            cell.metrics[v["train_scenario"]]["RD"] = 0.0
    except Exception as exc:  # recorded, the pipeline continues
        log.warning("cell %s failed: %s", cell.cell_id, exc)
        cell.status = "failed"
        cell.message = f"{type(exc).__name__}: {exc}"
        cell.metrics = {}
    return cell


def cell_list(config: ExperimentConfig) -> list:
    v = config.values
    cells = []
    for seed in v["seeds"]:
        cells.append((seed, BASELINE, None))
        for method in v["methods"]:
            for k in v["k_grid"]:
                cells.append((seed, method, k))
    return cells


def _cell_worker(args):
    config_values, seed, method, k = args
    start = time.perf_counter()
    cell = run_cell(resolve_config(config_values), seed, method, k)
    return cell, time.perf_counter() - start


def run_e1(config: ExperimentConfig, cache_dir=None, threads: int = 1) -> E1Report:
    """Run every cell, reusing cached cells from ``cache_dir`` when present."""
    report = E1Report(config)
    cache = None
    if cache_dir is not None:
        cache = Path(cache_dir) / f"cache_{config.hash()}"
        cache.mkdir(parents=True, exist_ok=True)
    todo, done = [], {}
    for spec in cell_list(config):
        cell = CellResult(*spec)
        path = None if cache is None else cache / f"{cell.cell_id}.json"
        if path is not None and path.exists():
            done[spec] = CellResult(**json.loads(path.read_text()))
            report.timings[cell.cell_id] = {"seconds": 0.0, "cached": True}
        else:
            todo.append(spec)
    jobs = [(config.values, *spec) for spec in todo]
    pool = ProcessPoolExecutor(max_workers=threads) if threads > 1 and len(jobs) > 1 else None
    try:
        results = pool.map(_cell_worker, jobs) if pool else map(_cell_worker, jobs)
        for spec, (cell, seconds) in zip(todo, results):
            done[spec] = cell
            report.timings[cell.cell_id] = {"seconds": seconds, "cached": False}
            log.info("cell %s %s in %.1fs", cell.cell_id, cell.status, seconds)
            if cache is not None and cell.status == "ok":
                (cache / f"{cell.cell_id}.json").write_text(json.dumps(cell.to_dict(), sort_keys=True))
    finally:
        if pool:
            pool.shutdown()
    report.cells = [done[spec] for spec in cell_list(config)]
    return report


# --- output files ---------------------------------------------------------------

def _num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def emit_outputs(report: E1Report, out_dir, n_theta: int = 6) -> dict:
    """Write the metric report, fitted parameters, DPE penalties, plot series and the echoed config.

    Everything except ``timings_*.json`` is a deterministic function of the
    report contents.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h = report.config.hash()
    paths = {"config": echo_config(report.config, out)}

    rows = []
    for c in report.cells:
        if c.status != "ok":
            rows.append(("", c.method, _num(c.k), c.seed, "", "", c.status, c.message))
            continue
        for sc in sorted(c.metrics):
            for m in METRICS:
                if m in c.metrics[sc]:
                    rows.append((sc, c.method, _num(c.k), c.seed, m, _num(c.metrics[sc][m]), c.status, c.message))
    paths["metrics"] = out / f"metrics_{h}.csv"
    _write_csv(paths["metrics"], ["scenario", "method", "k", "seed", "metric", "value", "status", "message"], rows)

    rows = [(c.method, _num(c.k), c.seed, c.status, _num(c.iterations), _num(c.converged),
             *[_num(x) for x in c.theta_hat]) for c in report.cells if c.theta_hat is not None]
    paths["theta"] = out / f"theta_{h}.csv"
    _write_csv(paths["theta"], ["method", "k", "seed", "status", "iterations", "converged",
                                *[f"theta_{i}" for i in range(n_theta)]], rows)

    rows = []
    for c in report.cells:
        if c.dpe is None:
            continue
        for part in ("continuous", "switch"):
            g = c.dpe[part]
            rows.append((_num(c.k), c.seed, part, c.dpe["criterion"], c.dpe["folds"], _num(g["chosen"]),
                         _num(g["grid_max"]), _num(g["grid_min"]), g["grid_size"]))
    paths["dpe"] = out / f"dpe_{h}.csv"
    _write_csv(paths["dpe"], ["k", "seed", "part", "criterion", "folds", "lambda", "grid_max", "grid_min",
                              "grid_size"], rows)

    summary = report.summary()
    paths["summary"] = out / f"summary_{h}.csv"
    _write_csv(paths["summary"], ["scenario", "method", "k", "metric", "n", "median", "q25", "q75"],
               [(sc, m, _num(k), met, n, _num(a), _num(b), _num(c)) for sc, m, k, met, n, a, b, c in summary])

    series = sorted((r for r in summary if r[2] is not None),
                    key=lambda r: (METRICS.index(r[3]), r[1], r[0], r[2]))
    paths["plot"] = out / f"plot_{h}.csv"
    _write_csv(paths["plot"], ["metric", "method", "scenario", "k", "median", "q25", "q75"],
               [(met, m, sc, k, _num(a), _num(b), _num(c)) for sc, m, k, met, n, a, b, c in series])

    paths["timings"] = out / f"timings_{h}.json"
    paths["timings"].write_text(json.dumps(report.timings, indent=2, sort_keys=True) + "\n")
    return paths
