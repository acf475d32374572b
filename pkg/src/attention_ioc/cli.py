"""Command-line entry point."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .belief import tabulate_covariances
from .config import ConfigError, ExperimentConfig, echo_config, load_config, resolve_config
from .dpe import fit_dpe
from .estimators import EstimationOptions, estimate_reward
from .experiment import emit_outputs, run_e1
from .metrics import GaussianSummary, d_histogram, kl_discrete, kl_gaussian_temporal, lateral_se
from .simulator import export_dataset, import_dataset, simulate_batch
from .soft_solver import solve_soft_policy


def _config(args) -> ExperimentConfig:
    if args.config:
        return load_config(args.config, args.scale)
    return resolve_config({}, args.scale)


def _scenario(config: ExperimentConfig, name) -> str:
    name = name or config.train_scenario
    if name not in config.scenarios:
        raise ConfigError(f"scenario {name!r} not defined (have {sorted(config.scenarios)})")
    return name


def cmd_validate(args) -> int:
    config = _config(args)
    print(config.to_json())
    print(f"config hash {config.hash()}", file=sys.stderr)
    return 0


def cmd_simulate(args) -> int:
    config = _config(args)
    sc = _scenario(config, args.scenario)
    problem = config.problem(sc)
    schedule = tabulate_covariances(problem)
    theta = config.theta_vector if args.theta is None else np.asarray(json.loads(args.theta), dtype=float)
    policy = solve_soft_policy(problem, schedule, theta)
    n = args.n or config.eval_count
    data = simulate_batch(problem, schedule, policy, n, args.seed, metadata={"theta": theta.tolist()})
    out = Path(args.out or f"trajectories_{config.hash()}_{sc}_seed{args.seed}.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    export_dataset(data, out)
    print(out)
    return 0


def cmd_estimate(args) -> int:
    config = _config(args)
    data = import_dataset(args.data)
    sc = _scenario(config, args.scenario or data.metadata.get("scenario"))
    problem = config.problem(sc)
    if args.method == "DPE":
        pol = fit_dpe(data, folds=config.dpe_folds, seed=args.seed)
        result = {"method": "DPE", "Lambda1": pol.Lambda1.tolist(), "lambda2": pol.lambda2.tolist(),
                  "SigmaB": pol.SigmaB.tolist(), "lambda_switch": pol.lambda_switch.tolist()}
    else:
        theta0 = config.theta_vector if args.theta_init is None else json.loads(args.theta_init)
        opts = EstimationOptions(method=args.method, barrier_weight=config.barrier_weight,
                                 rel_grad_tol=config.rel_grad_tol, max_iters=config.max_iters,
                                 theta_init=np.asarray(theta0, dtype=float), seed=args.seed)
        res = estimate_reward(problem, data, opts)
        result = {"method": args.method, "theta": res.theta_star.as_vector().tolist(),
                  "iterations": res.iterations, "converged": res.converged, "message": res.message}
    text = json.dumps(result, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_evaluate(args) -> int:
    config = _config(args)
    ref = import_dataset(args.reference)
    cand = import_dataset(args.candidate)
    d_max = config.d_max
    out = {
        "KLG": kl_gaussian_temporal(GaussianSummary.from_dataset(ref), GaussianSummary.from_dataset(cand)),
        "KL_d": kl_discrete(d_histogram(ref, d_max, config.smoothing_eps),
                            d_histogram(cand, d_max, config.smoothing_eps)),
    }
    if len(ref) == 1:
        out["SE"] = lateral_se(ref.x_p[0, :, 0], cand)
    text = json.dumps(out, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_run_e1(args) -> int:
    config = _config(args)
    if args.seed is not None:
        config = resolve_config({**config.values, "seeds": [args.seed]})
    out = Path(args.out or config.output_dir)
    echo_config(config, out)
    report = run_e1(config, cache_dir=out, threads=args.threads)
    paths = emit_outputs(report, out)
    failed = [c.cell_id for c in report.cells if c.status != "ok"]
    for name, p in sorted(paths.items()):
        print(f"{name}: {p}")
    if failed:
        print(f"{len(failed)} failed cells: {', '.join(failed)}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=1, help="worker processes for experiment cells")
    common.add_argument("--scale", choices=["desk", "paper"], default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="attention-ioc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="roll out a soft-optimal policy")
    p.add_argument("--scenario")
    p.add_argument("--n", type=int)
    p.add_argument("--theta", help="JSON list of 6 reward parameters")
    p.set_defaults(func=cmd_simulate, seed_default=0)

    p = sub.add_parser("estimate", parents=[common], help="fit a model to a trajectory file")
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=["MCE", "MCL", "DPE"], default="MCE")
    p.add_argument("--scenario")
    p.add_argument("--theta-init", help="JSON list; defaults to the configured theta")
    p.set_defaults(func=cmd_estimate, seed_default=0)

    p = sub.add_parser("evaluate", parents=[common], help="compare two trajectory files")
    p.add_argument("--reference", required=True)
    p.add_argument("--candidate", required=True)
    p.set_defaults(func=cmd_evaluate, seed_default=0)

    p = sub.add_parser("run-e1", parents=[common], help="run the simulated transfer experiment")
    p.set_defaults(func=cmd_run_e1, seed_default=None)

    p = sub.add_parser("validate-config", parents=[common], help="print the resolved config")
    p.set_defaults(func=cmd_validate, seed_default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is None:
        args.seed = args.seed_default
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
