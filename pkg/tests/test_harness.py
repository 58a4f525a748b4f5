import csv
import json
import math
import os

import numpy as np
import pytest

from freya.harness import (
    Cell,
    ConfigError,
    best_run_select,
    build_model,
    build_problem,
    gamma_grid,
    parse_taus,
    run_experiment,
    summarize_variance,
)
from freya.objectives import generate_quadratic, save_quadratic
from freya.optimizers import OptimizerReport


def base_config(**over):
    cfg = {
        "problem": {"type": "quadratic", "m": 30, "d": 4, "lambda": 0.05, "s": 1.0, "seed": 1},
        "workers": {"n": 5, "taus": "sqrt(i)"},
        "algorithms": [
            {"name": "freya_page", "gamma": [0.25, 0.5]},
            {"name": "soviet_page", "gamma": 0.5},
            {"name": "asynchronous_sgd", "gamma": 0.05},
        ],
        "seeds": [0, 1],
        "budgets": {"max_iters": 40},
    }
    cfg.update(over)
    return cfg


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestParseTaus:
    def test_formulas(self):
        np.testing.assert_array_equal(parse_taus("sqrt(i)", 4), np.sqrt([1, 2, 3, 4]))
        np.testing.assert_array_equal(parse_taus("linear", 3), [1, 2, 3])
        np.testing.assert_array_equal(parse_taus("linear i", 3), [1, 2, 3])
        np.testing.assert_array_equal(parse_taus("linear 0.5", 3), [0.5, 1, 1.5])
        np.testing.assert_array_equal(parse_taus("const 2.5", 2), [2.5, 2.5])
        np.testing.assert_array_equal(parse_taus(3, 2), [3, 3])

    def test_list_and_inf(self):
        np.testing.assert_array_equal(parse_taus([1, "inf", 0]), [1, math.inf, 0])

    def test_files(self, tmp_path):
        (tmp_path / "a.txt").write_text("1 2\n3,4\n")
        (tmp_path / "b.json").write_text("[0.5, 1e9]")
        np.testing.assert_array_equal(parse_taus("file:a.txt", base_dir=tmp_path), [1, 2, 3, 4])
        np.testing.assert_array_equal(parse_taus({"file": "b.json"}, 2, tmp_path), [0.5, 1e9])

    @pytest.mark.parametrize("spec", ["cube(i)", "const", [1, -2], {"path": "x"}, None])
    def test_rejects(self, spec):
        with pytest.raises(ConfigError):
            parse_taus(spec, 2)

    def test_length_mismatch(self):
        with pytest.raises(ConfigError):
            parse_taus([1, 2, 3], 2)

    def test_formula_needs_n(self):
        with pytest.raises(ConfigError):
            parse_taus("sqrt(i)")


class TestBuilders:
    def test_override(self):
        model = build_model({"n": 4, "taus": 1.0, "override": {"4": 1e9, "-3": 2.0}})
        np.testing.assert_array_equal(model.bounds(0), [1.0, 2.0, 1.0, 1e9])

    def test_override_out_of_range(self):
        with pytest.raises(ConfigError):
            build_model({"n": 2, "taus": 1.0, "override": {"3": 1.0}})

    def test_dynamic(self):
        model = build_model({"n": 2, "mode": "dynamic", "schedule": {"0": [1, 2], "1": "const 3"},
                             "default": [4, 4]})
        assert model.bounds(1).tolist() == [3, 3] and model.bounds(9).tolist() == [4, 4]

    def test_unknown_keys(self):
        with pytest.raises(ConfigError):
            build_model({"n": 2, "taus": 1.0, "colour": "red"})
        with pytest.raises(ConfigError):
            build_problem({"type": "quadratic", "m": 3, "d": 2, "lambda": 1, "s": 1, "x": 0})

    def test_problem_types(self, tmp_path):
        save_quadratic(generate_quadratic(5, 3, 0.1, 1.0, 0), tmp_path / "q.json")
        assert build_problem({"type": "quadratic_file", "path": "q.json"}, tmp_path).m == 5
        (tmp_path / "d.csv").write_text("1,2,1\n0,1,0\n3,1,1\n")
        assert build_problem({"type": "csv", "path": "d.csv", "mu": 0.1}, tmp_path).m == 3
        with pytest.raises(ConfigError):
            build_problem({"type": "cubic"})
        with pytest.raises(ConfigError):
            build_problem({"type": "quadratic", "m": 3})

    def test_gamma_grid(self):
        assert gamma_grid({"pow2": [-1, 1]}) == [0.5, 1.0, 2.0]
        assert gamma_grid(None) == ["auto"] and gamma_grid(0.1) == [0.1]
        for bad in ({"pow3": [0, 1]}, [0.0], ["x"], [math.inf]):
            with pytest.raises(ConfigError):
                gamma_grid(bad)


class TestRunExperiment:
    def test_single_cell_gd_monotone(self, tmp_path):
        cfg = {
            "problem": {"type": "quadratic", "m": 10, "d": 3, "lambda": 0.1, "s": 1.0},
            "workers": {"n": 2, "taus": [1, 2]},
            "algorithms": [{"name": "hero_gd"}],
            "budgets": {"max_iters": 50},
            "output": "out",
        }
        res = run_experiment(cfg, base_dir=tmp_path)
        files = os.listdir(tmp_path / "out" / "trajectories")
        assert len(files) == 1
        rows = read_csv(tmp_path / "out" / "trajectories" / files[0])
        f = [float(r["f_value"]) for r in rows]
        assert len(f) == 51 and all(b <= a for a, b in zip(f, f[1:]))
        sub = [float(r["suboptimality"]) for r in rows]
        np.testing.assert_allclose(sub, np.array(f) - res.f_best, rtol=0, atol=0)

    def test_summary_contents(self, tmp_path):
        res = run_experiment(base_config(output="o"), base_dir=tmp_path)
        doc = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert doc["selection_rule"] == "min_terminal_f"
        assert doc["f_best_source"] == "closed_form"
        assert len(doc["cells"]) == 2 * 2 + 2 + 2
        assert set(doc["best"]) == {"freya_page", "soviet_page", "asynchronous_sgd"}
        assert len(os.listdir(tmp_path / "o" / "trajectories")) == len(res.cells)

    def test_plot_data_is_time_and_suboptimality(self, tmp_path):
        res = run_experiment(base_config(output="o"), base_dir=tmp_path)
        for c in res.cells:
            rows = read_csv(tmp_path / "o" / "trajectories" / f"{c.run_id}.csv")
            assert [float(r["time"]) for r in rows] == list(c.report.times)
            assert [float(r["suboptimality"]) for r in rows] == \
                [float(f - res.f_best) for f in c.report.values]

    def test_reproducible_bytes(self, tmp_path):
        run_experiment(base_config(output="a"), base_dir=tmp_path)
        run_experiment(base_config(output="b"), base_dir=tmp_path)
        names = sorted(os.listdir(tmp_path / "a" / "trajectories"))
        assert names == sorted(os.listdir(tmp_path / "b" / "trajectories"))
        for name in names:
            assert (tmp_path / "a" / "trajectories" / name).read_bytes() == \
                (tmp_path / "b" / "trajectories" / name).read_bytes()
        assert (tmp_path / "a" / "summary.json").read_bytes() == \
            (tmp_path / "b" / "summary.json").read_bytes()

    def test_permutation_isolation(self):
        cfg = base_config()
        a = run_experiment(cfg)
        cfg_rev = base_config(algorithms=list(reversed(cfg["algorithms"])))
        b = run_experiment(cfg_rev)
        traj_a = {c.run_id: c.report.trajectory for c in a.cells}
        traj_b = {c.run_id: c.report.trajectory for c in b.cells}
        assert traj_a == traj_b

    def test_selection_rules(self):
        g0 = generate_quadratic(30, 4, 0.05, 1.0, 1)
        gn = float(np.sum(g0.full_gradient(g0.x0) ** 2))
        res = run_experiment(base_config(selection="first_to_eps",
                                         budgets={"max_iters": 40, "eps": 0.5 * gn}))
        assert res.summary["selection_rule"] == "first_to_eps"
        res = run_experiment(base_config(selection="first_to_target",
                                         budgets={"max_iters": 40, "target_rel": 0.5}))
        assert res.summary["target"] is not None

    def test_prune_keeps_best(self):
        cfg = base_config(algorithms=[{"name": "freya_page", "gamma": {"pow2": [-4, 2]}}],
                          seeds=[0], selection="first_to_target",
                          budgets={"max_iters": 3000, "target_rel": 1e-2})
        full = run_experiment(cfg)
        pruned = run_experiment(dict(cfg, prune=True))
        assert full.summary["best"] == pruned.summary["best"]
        assert full.summary["best_time_to_target"] == pruned.summary["best_time_to_target"]

    def test_prune_needs_target_rule(self):
        with pytest.raises(ConfigError):
            run_experiment(base_config(prune=True))

    def test_trailing_window(self):
        res = run_experiment(base_config(trailing_window=5.0))
        assert set(res.variance) == {"freya_page", "soviet_page", "asynchronous_sgd"}
        assert all(v[1] >= 0 for v in res.variance.values())

    @pytest.mark.parametrize("change", [
        {"algorithms": [{"name": "mystery"}]},
        {"algorithms": []},
        {"algorithms": [{"name": "freya_page", "momentum": 0.9}]},
        {"algorithms": [{"name": "asynchronous_sgd"}]},
        {"algorithms": [{"name": "hero_gd"}, {"name": "hero_gd"}]},
        {"budgets": {"max_iters": 0}},
        {"budgets": {"max_time": 0.0}},
        {"budgets": {}},
        {"budgets": {"max_iters": 5, "walltime": 3}},
        {"selection": "fastest"},
        {"selection": "first_to_eps"},
        {"selection": "first_to_target"},
        {"seeds": []},
        {"workers": {"n": 2, "taus": "sqrt(x)"}},
    ])
    def test_config_errors(self, change):
        with pytest.raises(ConfigError):
            run_experiment(base_config(**change))

    def test_missing_workers(self):
        cfg = base_config()
        del cfg["workers"]
        with pytest.raises(ConfigError):
            run_experiment(cfg)

    def test_target_needs_closed_form(self, tmp_path):
        (tmp_path / "d.csv").write_text("1,2,1\n0,1,0\n3,1,1\n")
        cfg = base_config(problem={"type": "csv", "path": "d.csv"},
                          budgets={"max_iters": 5, "target_rel": 0.1})
        with pytest.raises(ConfigError):
            run_experiment(cfg, base_dir=tmp_path)

    def test_min_observed_baseline(self, tmp_path):
        (tmp_path / "d.csv").write_text("1,2,1\n0,1,0\n3,1,1\n")
        res = run_experiment(base_config(problem={"type": "csv", "path": "d.csv"}),
                             base_dir=tmp_path)
        assert res.summary["f_best_source"] == "min_observed"
        assert res.f_best == min(min(c.report.values) for c in res.cells)

    @pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
    def test_unwritable_output(self, tmp_path):
        locked = tmp_path / "locked"
        locked.mkdir()
        locked.chmod(0o500)
        try:
            with pytest.raises(ConfigError):
                run_experiment(base_config(output="locked/out"), base_dir=tmp_path)
        finally:
            locked.chmod(0o700)

    def test_output_path_is_a_file(self, tmp_path):
        (tmp_path / "blocker").write_text("")
        with pytest.raises(ConfigError):
            run_experiment(base_config(output="blocker/out"), base_dir=tmp_path)


def fake_cell(gamma, seed, values, times=None):
    times = times if times is not None else list(range(len(values)))
    traj = [(k, float(t), 1.0, float(f)) for k, (t, f) in enumerate(zip(times, values))]
    rep = OptimizerReport(method="x", trajectory=traj, stop_reason="iterations",
                          min_grad_norm_sq=1.0, eps=None, x=None, iterations=len(values),
                          total_time=float(times[-1]), params={"gamma": gamma})
    return Cell("x", "x", gamma, seed, rep)


class TestBestRunSelect:
    def test_single(self):
        c = fake_cell(0.1, 0, [3.0, 2.0])
        assert best_run_select([c]) is c

    def test_smaller_terminal_wins(self):
        a, b = fake_cell(0.1, 0, [3.0, 2.0]), fake_cell(0.2, 0, [3.0, 1.0])
        assert best_run_select([a, b]) is b

    def test_tie_goes_to_smaller_gamma_then_seed(self):
        a, b, c = fake_cell(0.2, 0, [1.0]), fake_cell(0.1, 1, [1.0]), fake_cell(0.1, 0, [1.0])
        assert best_run_select([a, b, c]) is c

    def test_nan_ranks_last(self):
        a, b = fake_cell(0.1, 0, [math.nan]), fake_cell(0.2, 0, [5.0])
        assert best_run_select([a, b]) is b

    def test_first_to_target(self):
        a = fake_cell(0.1, 0, [5.0, 2.0, 0.5], [0, 1, 10])
        b = fake_cell(0.2, 0, [5.0, 0.9, 0.1], [0, 4, 5])
        assert best_run_select([a, b], "first_to_target", target=1.0) is b

    def test_errors(self):
        with pytest.raises(ValueError):
            best_run_select([])
        with pytest.raises(ValueError):
            best_run_select([fake_cell(0.1, 0, [1.0])], "first_to_eps")
        with pytest.raises(ValueError):
            best_run_select([fake_cell(0.1, 0, [1.0])], "loudest")


class TestSummarizeVariance:
    def test_constant(self):
        out = summarize_variance({"a": [([0, 1, 2, 3], [5.0] * 4)]}, 2.0)
        assert out["a"] == (5.0, 0.0)

    def test_two_point_population(self):
        a, b = 3.0, 7.0
        out = summarize_variance({"x": [([0, 1], [a, b])]}, 1.0)
        assert out["x"] == ((a + b) / 2, ((a - b) / 2) ** 2)

    def test_window_selects_tail(self):
        out = summarize_variance({"x": [([0, 1, 2, 3], [100.0, 1.0, 2.0, 3.0])]}, 2.0)
        assert out["x"] == (2.0, pytest.approx(2 / 3))

    def test_window_exceeds_run(self):
        with pytest.raises(ValueError):
            summarize_variance({"x": [([0, 1], [1.0, 2.0])]}, 1.5)

    def test_bad_window(self):
        with pytest.raises(ValueError):
            summarize_variance({"x": [([0, 1], [1.0, 2.0])]}, 0.0)


@pytest.mark.slow
def test_freya_page_steadier_than_async_sgd():
    cfg = {
        "problem": {"type": "quadratic", "m": 1000, "d": 50, "lambda": 1e-3, "s": 1.0, "seed": 0},
        "workers": {"n": 100, "taus": "sqrt(i)"},
        "algorithms": [
            {"name": "freya_page", "gamma": {"pow2": [-4, 4]}},
            {"name": "asynchronous_sgd", "gamma": {"pow2": [-10, -4]}},
        ],
        "budgets": {"max_time": 4000.0, "eval_every": 10},
        "trailing_window": 1000.0,
    }
    res = run_experiment(cfg)
    assert res.variance["freya_page"][1] < res.variance["asynchronous_sgd"][1]
