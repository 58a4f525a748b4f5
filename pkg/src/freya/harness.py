"""Experiment runner: build a problem and a worker model from a JSON config,
race optimizers over stepsize grids and seeds, write trajectories and a
summary.

Config layout::

    {
      "problem":   {"type": "quadratic", "m": 1000, "d": 50, "lambda": 1e-3, "s": 1, "seed": 0}
                 | {"type": "quadratic_file", "path": "q.json"}
                 | {"type": "csv", "path": "data.csv", "label_column": -1, "header": false, "mu": 0},
      "workers":   {"n": 100, "mode": "static", "taus": "sqrt(i)", "override": {"100": 1e9}},
      "algorithms": [{"name": "freya_page", "gamma": {"pow2": [-10, 10]}}, ...],
      "seeds":     [0],
      "budgets":   {"max_iters": 10000, "max_time": null, "eps": null,
                    "target_rel": 1e-4, "eval_every": 1},
      "selection": "first_to_target",
      "trailing_window": null,
      "prune":     false,
      "output":    "out/"
    }

Every cell (algorithm, stepsize, seed) owns its random streams, derived
from the seed alone, so the order of ``algorithms`` never matters.

``prune`` (only with ``first_to_target``) runs each grid from the largest
stepsize down and stops every later run once its simulated time exceeds the
best time-to-target found so far.  The selected best run is unchanged;
losing runs are truncated.
"""

from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import optimizers
from .objectives import generate_quadratic, load_csv_dataset, load_quadratic
from .simclock import WorkerTimeModel

__all__ = [
    "ConfigError",
    "parse_taus",
    "build_problem",
    "build_model",
    "load_config",
    "run_experiment",
    "best_run_select",
    "summarize_variance",
    "ALGORITHMS",
    "SELECTION_RULES",
]


class ConfigError(ValueError):
    pass


ALGORITHMS = {
    "freya_page": (optimizers.run_freya_page, {"gamma", "S", "p", "rule", "sampler"}),
    "freya_sgd": (optimizers.run_freya_sgd, {"gamma", "S", "delta0", "delta_star"}),
    "rennala_sgd": (optimizers.run_rennala_sgd, {"gamma", "S", "delta0", "delta_star"}),
    "soviet_page": (optimizers.run_soviet_page, {"gamma", "S", "p", "rule"}),
    "asynchronous_sgd": (optimizers.run_asynchronous_sgd, {"gamma"}),
    "hero_gd": (optimizers.run_gd_baselines, {"gamma"}),
    "soviet_gd": (optimizers.run_gd_baselines, {"gamma"}),
}

SELECTION_RULES = ("min_terminal_f", "first_to_eps", "first_to_target")

_NUMBER = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?|inf"


def _read_numbers(path):
    text = Path(path).read_text()
    try:
        values = json.loads(text)
    except json.JSONDecodeError:
        values = text.replace(",", " ").split()
    try:
        return np.array([float(v) for v in values])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: not a list of numbers") from exc


def parse_taus(value, n=None, base_dir="."):
    """Worker times from a number, a list, or one of
    ``"const c"``, ``"sqrt(i)"``, ``"linear"``, ``"linear c"``, ``"file:<path>"``,
    ``{"file": path}``.  Formulas use the 1-based worker index ``i``.
    """
    if isinstance(value, dict):
        if set(value) != {"file"}:
            raise ConfigError(f"unknown taus object {value!r}")
        value = "file:" + str(value["file"])
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = f"const {value!r}"
    if isinstance(value, (list, tuple)):
        arr = np.array([float(v) for v in value])
    elif isinstance(value, str):
        s = value.strip()
        if s.startswith("file:"):
            arr = _read_numbers(Path(base_dir) / s[5:].strip())
        else:
            if n is None:
                raise ConfigError(f"taus formula {s!r} needs n")
            i = np.arange(1, n + 1, dtype=float)
            if s in ("sqrt(i)", "sqrt"):
                arr = np.sqrt(i)
            elif re.fullmatch(r"linear(\s+i)?", s):
                arr = i
            elif m := re.fullmatch(rf"linear\s+({_NUMBER})", s):
                arr = float(m.group(1)) * i
            elif m := re.fullmatch(rf"const\s+({_NUMBER})", s):
                arr = np.full(n, float(m.group(1)))
            else:
                raise ConfigError(f"cannot parse taus formula {s!r}")
    else:
        raise ConfigError(f"cannot parse taus {value!r}")
    if n is not None and arr.size != n:
        raise ConfigError(f"expected {n} worker times, got {arr.size}")
    if arr.size == 0 or np.isnan(arr).any() or (arr < 0).any():
        raise ConfigError("worker times must be non-negative")
    return arr


def _apply_override(arr, override):
    arr = arr.copy()
    for key, value in (override or {}).items():
        i = int(key)
        if not (1 <= i <= arr.size or -arr.size <= i <= -1):
            raise ConfigError(f"override index {i} out of range")
        arr[i - 1 if i > 0 else i] = float(value)
    return arr


def build_model(cfg, base_dir="."):
    cfg = dict(cfg)
    mode = cfg.pop("mode", "static")
    n = cfg.pop("n", None)
    low = float(cfg.pop("low", 0.5))
    override = cfg.pop("override", None)
    try:
        if mode == "dynamic":
            schedule = cfg.pop("schedule")
            if isinstance(schedule, str):
                schedule = json.loads((Path(base_dir) / schedule).read_text())
            sched = {int(k): _apply_override(parse_taus(v, n, base_dir), override)
                     for k, v in schedule.items()}
            default = cfg.pop("default", None)
            if default is not None:
                default = _apply_override(parse_taus(default, n, base_dir), override)
            model = WorkerTimeModel(mode="dynamic", schedule=sched, default=default)
        else:
            taus = _apply_override(parse_taus(cfg.pop("taus"), n, base_dir), override)
            model = WorkerTimeModel(taus, mode=mode, low=low)
    except KeyError as exc:
        raise ConfigError(f"workers: missing {exc.args[0]!r}") from exc
    except (ValueError, OSError) as exc:
        raise ConfigError(f"workers: {exc}") from exc
    if cfg:
        raise ConfigError(f"workers: unknown keys {sorted(cfg)}")
    return model


def build_problem(cfg, base_dir="."):
    cfg = dict(cfg)
    kind = cfg.pop("type", "quadratic")
    try:
        if kind == "quadratic":
            prob = generate_quadratic(int(cfg.pop("m")), int(cfg.pop("d")),
                                      float(cfg.pop("lambda")), float(cfg.pop("s")),
                                      int(cfg.pop("seed", 0)))
        elif kind == "quadratic_file":
            prob = load_quadratic(Path(base_dir) / cfg.pop("path"))
        elif kind == "csv":
            prob = load_csv_dataset(Path(base_dir) / cfg.pop("path"),
                                    label_column=int(cfg.pop("label_column", -1)),
                                    header=bool(cfg.pop("header", False)),
                                    mu=float(cfg.pop("mu", 0.0)))
        else:
            raise ConfigError(f"unknown problem type {kind!r}")
    except KeyError as exc:
        raise ConfigError(f"problem: missing {exc.args[0]!r}") from exc
    except (ValueError, OSError) as exc:
        raise ConfigError(f"problem: {exc}") from exc
    if cfg:
        raise ConfigError(f"problem: unknown keys {sorted(cfg)}")
    return prob


def gamma_grid(value):
    """``"auto"``, a number, a list, or ``{"pow2": [lo, hi]}`` for ``2**i``, ``lo <= i <= hi``."""
    if value is None or value == "auto":
        return ["auto"]
    if isinstance(value, dict):
        if set(value) != {"pow2"} or len(value["pow2"]) != 2:
            raise ConfigError(f"unknown gamma grid {value!r}")
        lo, hi = (int(v) for v in value["pow2"])
        return [2.0 ** i for i in range(lo, hi + 1)]
    values = value if isinstance(value, list) else [value]
    try:
        out = [float(v) for v in values]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad gamma {value!r}") from exc
    if not out or any(not (g > 0 and math.isfinite(g)) for g in out):
        raise ConfigError("stepsizes must be positive and finite")
    return out


@dataclass
class Cell:
    label: str
    algorithm: str
    gamma: object
    seed: int
    report: optimizers.OptimizerReport

    @property
    def gamma_value(self):
        return float(self.report.params.get("gamma", math.nan))

    @property
    def run_id(self):
        return f"{self.label}_g{self.gamma_value!r}_s{self.seed}"


@dataclass
class RaceResult:
    cells: list
    best: dict
    summary: dict
    f_best: float
    output: Path | None = None
    variance: dict = field(default_factory=dict)


def load_config(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def _budgets(cfg):
    cfg = dict(cfg or {})
    out = {k: cfg.pop(k, None) for k in ("max_iters", "max_time", "eps", "target_rel")}
    out["eval_every"] = int(cfg.pop("eval_every", 1))
    if cfg:
        raise ConfigError(f"budgets: unknown keys {sorted(cfg)}")
    for k in ("max_iters", "max_time", "eps", "target_rel"):
        if out[k] is not None and not out[k] > 0:
            raise ConfigError(f"budget {k} must be positive")
    if out["max_iters"] is None and out["max_time"] is None and out["eps"] is None \
            and out["target_rel"] is None:
        raise ConfigError("set at least one budget")
    return out


def _algorithms(entries):
    if not entries:
        raise ConfigError("no algorithms")
    out, labels = [], set()
    for cfg in entries:
        cfg = dict(cfg)
        name = cfg.pop("name", None)
        if name not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {name!r}")
        label = cfg.pop("label", name)
        if label in labels:
            raise ConfigError(f"duplicate algorithm label {label!r}")
        labels.add(label)
        allowed = ALGORITHMS[name][1]
        extra = set(cfg) - allowed
        if extra:
            raise ConfigError(f"{label}: unknown parameters {sorted(extra)}")
        if name == "asynchronous_sgd" and cfg.get("gamma", "auto") == "auto":
            raise ConfigError("asynchronous_sgd needs an explicit gamma or grid")
        grid = gamma_grid(cfg.pop("gamma", None))
        out.append((label, name, grid, cfg))
    return out


def _run_cell(name, params, gamma, seed, problem, model, budgets, target):
    fn = ALGORITHMS[name][0]
    kwargs = dict(params)
    kwargs.update(gamma=gamma, seed=seed, eps=budgets["eps"], max_iters=budgets["max_iters"],
                  max_time=budgets["max_time"], target=target, eval_every=budgets["eval_every"])
    if name in ("hero_gd", "soviet_gd"):
        kwargs["variant"] = name.split("_")[0]
        if kwargs["gamma"] == "auto":
            kwargs["gamma"] = None
    return fn(problem, model, **kwargs)


def _suboptimality_base(problem):
    """Closed-form optimum when the mean problem is strongly convex, else None."""
    try:
        return problem.optimum_value()
    except (AttributeError, NotImplementedError):
        return None


def run_experiment(config, base_dir=".", output=None):
    """Run every (algorithm, stepsize, seed) cell and write trajectories plus ``summary.json``."""
    config = dict(config)
    problem = build_problem(config.get("problem") or {}, base_dir)
    if "workers" not in config:
        raise ConfigError("missing workers")
    model = build_model(config["workers"], base_dir)
    algos = _algorithms(config.get("algorithms"))
    seeds = [int(s) for s in config.get("seeds", [0])]
    if not seeds:
        raise ConfigError("no seeds")
    budgets = _budgets(config.get("budgets"))
    rule = config.get("selection", "min_terminal_f")
    if rule not in SELECTION_RULES:
        raise ConfigError(f"unknown selection rule {rule!r}")
    window = config.get("trailing_window")
    out_dir = output if output is not None else config.get("output")
    if out_dir is not None:
        out_dir = Path(base_dir) / out_dir
        try:
            (out_dir / "trajectories").mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory: {exc}") from exc
        if not os.access(out_dir, os.W_OK):
            raise ConfigError(f"output directory {out_dir} is not writable")

    f0 = float(problem.value(problem.x0))
    f_star = _suboptimality_base(problem)
    target = None
    if budgets["target_rel"] is not None:
        if f_star is None:
            raise ConfigError("target_rel needs a problem with a closed-form optimum")
        target = f_star + budgets["target_rel"] * (f0 - f_star)
    if rule == "first_to_target" and target is None:
        raise ConfigError("first_to_target needs budgets.target_rel")
    if rule == "first_to_eps" and budgets["eps"] is None:
        raise ConfigError("first_to_eps needs budgets.eps")

    prune = bool(config.get("prune", False))
    if prune and rule != "first_to_target":
        raise ConfigError("prune needs selection first_to_target")
    cells = []
    for label, name, grid, params in algos:
        best_time = math.inf
        if prune:
            grid = sorted(grid, key=lambda g: -math.inf if g == "auto" else -g)
        for gamma in grid:
            for seed in seeds:
                cell_budgets = budgets
                if prune and math.isfinite(best_time) and best_time > 0:
                    cap = best_time if budgets["max_time"] is None else min(best_time, budgets["max_time"])
                    cell_budgets = dict(budgets, max_time=cap)
                rep = _run_cell(name, params, gamma, seed, problem, model, cell_budgets, target)
                cells.append(Cell(label, name, gamma, seed, rep))
                if target is not None:
                    best_time = min(best_time, rep.time_to_value(target))

    if f_star is not None:
        f_best, f_source = f_star, "closed_form"
    else:
        observed = [f for c in cells for f in c.report.values if math.isfinite(f)]
        f_best, f_source = (min(observed) if observed else math.nan), "min_observed"

    best = {}
    for label, *_ in algos:
        mine = [c for c in cells if c.label == label]
        best[label] = best_run_select(mine, rule, eps=budgets["eps"], target=target)

    variance = {}
    if window is not None:
        variance = summarize_variance(
            {label: [(c.report.times, c.report.values - f_best)] for label, c in best.items()},
            float(window))

    summary = {
        "f0": f0,
        "f_best": f_best,
        "f_best_source": f_source,
        "target": target,
        "selection_rule": rule,
        "n_workers": model.n,
        "m": problem.m,
        "cells": [_cell_summary(c, target) for c in cells],
        "best": {label: c.run_id for label, c in best.items()},
        "best_time_to_target": {label: c.report.time_to_value(target) if target is not None else None
                                for label, c in best.items()},
        "trailing_window": window,
        "variance": {k: {"mean": v[0], "variance": v[1]} for k, v in variance.items()},
    }
    if out_dir is not None:
        for c in cells:
            c.report.write_csv(out_dir / "trajectories" / f"{c.run_id}.csv", f_best=f_best)
        with open(out_dir / "summary.json", "w") as fh:
            json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return RaceResult(cells=cells, best=best, summary=summary, f_best=f_best,
                      output=out_dir, variance=variance)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def _cell_summary(c, target):
    r = c.report
    return {
        "run_id": c.run_id,
        "label": c.label,
        "algorithm": c.algorithm,
        "gamma": c.gamma_value,
        "seed": c.seed,
        "stop_reason": r.stop_reason,
        "iterations": r.iterations,
        "total_time": r.total_time,
        "terminal_f": float(r.values[-1]),
        "min_grad_norm_sq": r.min_grad_norm_sq,
        "time_to_target": r.time_to_value(target) if target is not None else None,
    }


def _first_time(report, eps):
    for _, t, gn, _ in report.trajectory:
        if gn <= eps:
            return t
    return math.inf


def best_run_select(results, rule="min_terminal_f", eps=None, target=None):
    """Best cell by ``rule``; ties go to the smallest ``(gamma, seed)``.

    Non-finite scores (diverged runs, targets never reached) rank last.
    """
    if not results:
        raise ValueError("no runs to select from")
    if rule == "min_terminal_f":
        score = lambda c: c.report.values[-1]  # noqa: E731
    elif rule == "first_to_eps":
        if eps is None:
            raise ValueError("first_to_eps needs eps")
        score = lambda c: _first_time(c.report, eps)  # noqa: E731
    elif rule == "first_to_target":
        if target is None:
            raise ValueError("first_to_target needs a target")
        score = lambda c: c.report.time_to_value(target)  # noqa: E731
    else:
        raise ValueError(f"unknown selection rule {rule!r}")

    def key(c):
        s = float(score(c))
        return (s if not math.isnan(s) else math.inf, c.gamma_value, c.seed)

    return min(results, key=key)


def summarize_variance(trajectories, trailing_window):
    """Mean and population variance of each label's metric over its trailing window.

    ``trajectories`` maps a label to a list of ``(times, values)`` series;
    every sample with ``time >= t_end - trailing_window`` is pooled.
    """
    if trailing_window <= 0:
        raise ValueError("trailing window must be positive")
    out = {}
    for label, series in trajectories.items():
        pooled = []
        for times, values in series:
            times = np.asarray(times, dtype=float)
            values = np.asarray(values, dtype=float)
            if times.size == 0:
                raise ValueError(f"{label}: empty trajectory")
            if trailing_window > times[-1] - times[0]:
                raise ValueError(f"{label}: window {trailing_window} exceeds run length "
                                 f"{times[-1] - times[0]}")
            pooled.append(values[times >= times[-1] - trailing_window])
        pooled = np.concatenate(pooled)
        out[label] = (float(pooled.mean()), float(pooled.var()))
    return out
