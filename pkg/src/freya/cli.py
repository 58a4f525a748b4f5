"""``freya`` command line.

Exit codes: 0 success, 2 configuration error, 3 failed assertion.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import theory
from .collectors import WorkerPool, compute_batch, compute_batch_difference, compute_gradient
from .harness import ConfigError, build_model, build_problem, load_config, parse_taus, run_experiment
from .objectives import generate_quadratic, save_quadratic

EXIT_OK, EXIT_CONFIG, EXIT_ASSERT = 0, 2, 3

# one-sided 99% normal quantile
Z99 = 2.3263478740408408


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def cmd_run(args):
    config = load_config(args.config)
    result = run_experiment(config, base_dir=Path(args.config).parent, output=args.out)
    s = result.summary
    print(f"f_best = {_fmt(s['f_best'])} ({s['f_best_source']}), selection: {s['selection_rule']}")
    for label, run_id in s["best"].items():
        line = f"{label:20s} best {run_id}"
        if s["target"] is not None:
            line += f"  time to target {_fmt(s['best_time_to_target'][label])}"
        print(line)
    for label, v in s["variance"].items():
        print(f"{label:20s} trailing mean {_fmt(v['mean'])}  variance {_fmt(v['variance'])}")
    if result.output is not None:
        print(f"wrote {result.output}")
    return EXIT_OK


def _load_constants(path):
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"constants: {exc}") from exc
    try:
        return dict(L_minus=float(doc["L_minus"]), L_pm=float(doc["L_pm"]),
                    delta0=float(doc["delta0"]), eps=float(doc["eps"]),
                    L_plus=float(doc["L_plus"]) if "L_plus" in doc else None)
    except KeyError as exc:
        raise ConfigError(f"constants: missing {exc.args[0]!r}") from exc


def cmd_advise(args):
    taus_arg = args.taus
    if Path(taus_arg).is_file():
        taus_arg = "file:" + taus_arg
    taus = parse_taus(taus_arg, args.n)
    c = _load_constants(args.constants)
    if c["L_minus"] <= 0 or c["eps"] <= 0 or c["L_pm"] < 0:
        raise ConfigError("constants must be positive")
    report = theory.theory_report(args.m, taus, c["L_minus"], c["L_pm"], c["delta0"], c["eps"],
                                  L_plus=c["L_plus"])
    if args.json:
        print(report.to_json(indent=2))
    else:
        width = max(len(k) for k, _ in report.rows())
        for k, v in report.rows():
            print(f"{k:<{width}}  {_fmt(v)}")
    return EXIT_OK


def cmd_gen_quadratic(args):
    try:
        prob = generate_quadratic(args.m, args.d, args.lam, args.s, args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    save_quadratic(prob, args.out)
    h = prob.hints
    print(f"wrote {args.out}: m={prob.m} d={prob.d} L_minus={_fmt(h.L_minus)} "
          f"L_pm={_fmt(h.L_pm)} L_plus={_fmt(h.L_plus)}")
    return EXIT_OK


def check_bounds(config, base_dir="."):
    """Run collector-time checks; return a list of ``(name, ok, detail)``.

    Config keys: ``workers`` (as for ``run``), ``problem`` (optional, default a
    small quadratic), ``S`` (list), ``seeds`` (list), ``checks`` (subset of
    ``batch_difference``, ``batch``, ``gradient``).
    """
    model = build_model(config["workers"], base_dir) if "workers" in config else None
    if model is None:
        raise ConfigError("missing workers")
    problem = build_problem(config.get("problem") or
                            {"type": "quadratic", "m": 100, "d": 2, "lambda": 1.0, "s": 1.0}, base_dir)
    sizes = [int(s) for s in config.get("S", [1, 8, 64])]
    seeds = [int(s) for s in config.get("seeds", range(20))]
    checks = config.get("checks", ["batch_difference", "batch", "gradient"])
    unknown = set(checks) - {"batch_difference", "batch", "gradient"}
    if unknown:
        raise ConfigError(f"unknown checks {sorted(unknown)}")
    if not sizes or not seeds or min(sizes) < 1:
        raise ConfigError("need non-empty S (all >= 1) and seeds")
    taus = model.bounds(0)
    x = problem.x0
    y = np.zeros_like(x)
    out = []
    collectors = {
        "batch_difference": (4.0, lambda S, pool: compute_batch_difference(S, x, y, problem, pool)),
        "batch": (2.0, lambda S, pool: compute_batch(S, x, problem, pool)),
    }
    for S in sizes:
        for name, (factor, collect) in collectors.items():
            if name not in checks:
                continue
            bound = factor * theory.equilibrium_time(S, taus)[0]
            worst = max(collect(S, WorkerPool(model, seed)).duration for seed in seeds)
            out.append((f"{name} S={S}", worst <= bound, f"max duration {worst:.6g} <= {bound:.6g}"))
    if "gradient" in checks:
        durations = np.array([compute_gradient(x, problem, WorkerPool(model, seed)).duration
                              for seed in seeds])
        bound = theory.compute_gradient_time_bound(problem.m, taus)
        mean = durations.mean()
        se = durations.std(ddof=1) / math.sqrt(len(seeds)) if len(seeds) > 1 else 0.0
        out.append((f"gradient m={problem.m}", mean <= bound + Z99 * se,
                    f"mean duration {mean:.6g} (se {se:.3g}) <= {bound:.6g}"))
    return out


def cmd_check_bounds(args):
    config = load_config(args.config)
    results = check_bounds(config, base_dir=Path(args.config).parent)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_ASSERT


def build_parser():
    parser = argparse.ArgumentParser(prog="freya", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("config")
    p.add_argument("--out", help="override the config's output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("advise", help="print parameter advice for a worker profile")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--taus", required=True, help="file of worker times or a formula such as sqrt(i)")
    p.add_argument("--constants", required=True, help="JSON with L_minus, L_pm, delta0, eps")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_advise)

    p = sub.add_parser("gen-quadratic", help="generate and save a quadratic problem")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--s", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_quadratic)

    p = sub.add_parser("check-bounds", help="assert collector time bounds")
    p.add_argument("config")
    p.set_defaults(func=cmd_check_bounds)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
