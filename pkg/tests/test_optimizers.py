import math

import numpy as np
import pytest

from freya import optimizers as O
from freya import theory
from freya.collectors import Sampler, WorkerPool
from freya.objectives import generate_quadratic
from freya.simclock import StreamBank, WorkerTimeModel


@pytest.fixture
def quad():
    return generate_quadratic(64, 8, 1e-2, 1.0, 3)


def page_state(prob, x, g, p, S=4, gamma=0.5, seed=0):
    return O.PageState(x=x.copy(), g=g.copy(), gamma=gamma, p=p, S=S,
                       coin=np.random.default_rng(seed))


class TestPageStep:
    def test_p_one_is_gradient_descent(self, quad):
        model = WorkerTimeModel([1.0, 2.0, 3.0])
        pool = WorkerPool(model, 0)
        gamma = 1 / quad.hints.L_minus
        x = quad.x0
        state = page_state(quad, x, quad.full_gradient(x), 1.0, gamma=gamma)
        x_gd = x.copy()
        for _ in range(30):
            O.freya_page_step(state, quad, pool)
            x_gd = x_gd - gamma * quad.full_gradient(x_gd)
            np.testing.assert_allclose(state.x, x_gd, rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(state.g, quad.full_gradient(state.x), rtol=1e-12, atol=1e-14)

    def test_fixed_point(self):
        prob = generate_quadratic(20, 5, 0.1, 0.0, 0)
        x_star = prob.minimizer()
        state = page_state(prob, x_star, np.zeros(5), 0.01)
        pool = WorkerPool(WorkerTimeModel([1.0, 2.0]), 0)
        # exact while every step is a difference step; a full step brings round-off
        steps = 0
        while steps < 20:
            O.freya_page_step(state, prob, pool)
            np.testing.assert_array_equal(state.x, x_star)
            if state.last_kind == "full":
                break
            assert np.all(state.g == 0)
            steps += 1
        assert steps > 0

    def test_conditional_unbiasedness(self, quad, rng):
        x = rng.normal(size=8)
        g = rng.normal(size=8)
        p, gamma = 0.3, 0.2
        x_new = x - gamma * g
        model = WorkerTimeModel([1.0, 1.5, 2.0])
        draws = []
        for r in range(10000):
            state = page_state(quad, x, g, p, S=3, gamma=gamma, seed=r)
            O.freya_page_step(state, quad, WorkerPool(model, r))
            draws.append(state.g)
        draws = np.array(draws)
        gx, gn = quad.full_gradient(x), quad.full_gradient(x_new)
        expected = p * gn + (1 - p) * (g + gn - gx)
        se = draws.std(axis=0, ddof=1) / math.sqrt(len(draws))
        assert np.all(np.abs(draws.mean(axis=0) - expected) <= 3 * se)

    def test_importance_step_unbiased_difference(self, quad):
        x, g = quad.x0, quad.full_gradient(quad.x0)
        model = WorkerTimeModel([1.0])
        sampler = Sampler("importance", np.random.default_rng(0), quad.hints.L_i)
        draws = []
        for r in range(4000):
            state = page_state(quad, x, g, 1e-9, S=4, gamma=0.3, seed=r)
            O.freya_page_step(state, quad, WorkerPool(model, r), sampler)
            draws.append(state.g - g)
        x_new = x - 0.3 * g
        truth = quad.full_gradient(x_new) - quad.full_gradient(x)
        draws = np.array(draws)
        se = draws.std(axis=0, ddof=1) / math.sqrt(len(draws))
        assert np.all(np.abs(draws.mean(axis=0) - truth) <= 4 * se + 1e-15)


class TestRunFreyaPage:
    def test_auto_parameters(self, quad):
        rep = O.run_freya_page(quad, WorkerTimeModel.sqrt_model(4), max_iters=3)
        S, p = theory.large_scale_params(quad.m)
        assert rep.params["S"] == S and rep.params["p"] == p
        assert rep.params["gamma"] == theory.page_stepsize(p, S, quad.hints.L_minus, quad.hints.L_pm)

    @pytest.mark.parametrize("rule", ["ratio", "optimal"])
    def test_other_parameter_rules(self, quad, rule):
        rep = O.run_freya_page(quad, WorkerTimeModel.sqrt_model(4), rule=rule, max_iters=3)
        assert 1 <= rep.params["S"] <= quad.m and 0 < rep.params["p"] <= 1

    def test_time_accounting(self, quad):
        rep = O.run_freya_page(quad, WorkerTimeModel.sqrt_model(5), max_iters=200, seed=1)
        assert rep.total_time == pytest.approx(sum(rep.trace.durations()), rel=1e-12)
        assert rep.total_time == rep.trace.total_time
        assert rep.trace.records[0].k == -1 and rep.trace.records[0].kind == "full"
        assert np.all(np.diff(rep.times) >= 0)

    def test_estimator_reset_on_full_steps(self, quad):
        model = WorkerTimeModel.sqrt_model(3)
        pool = WorkerPool(model, 0)
        S, p = 8, 0.2
        x = quad.x0
        state = page_state(quad, x, quad.full_gradient(x), p, S=S, gamma=0.3)
        fulls = 0
        for _ in range(100):
            O.freya_page_step(state, quad, pool)
            if state.last_kind == "full":
                fulls += 1
                ref = quad.full_gradient(state.x)
                assert np.linalg.norm(state.g - ref) <= 1e-12 * np.linalg.norm(ref)
        assert fulls > 0

    def test_converges(self, quad):
        g0 = quad.full_gradient(quad.x0)
        eps = 1e-4 * (g0 @ g0)
        rep = O.run_freya_page(quad, WorkerTimeModel.sqrt_model(8), eps=eps, max_iters=100000)
        assert rep.reached_eps and rep.stop_reason == "eps"

    @pytest.mark.parametrize("sampler", ["nice", "importance"])
    def test_other_samplers_converge(self, quad, sampler):
        g0 = quad.full_gradient(quad.x0)
        eps = 1e-4 * (g0 @ g0)
        rep = O.run_freya_page(quad, WorkerTimeModel.sqrt_model(8), sampler=sampler, eps=eps,
                               max_iters=100000)
        assert rep.reached_eps

    def test_budgets(self, quad):
        rep = O.run_freya_page(quad, WorkerTimeModel.sqrt_model(8), max_time=50.0)
        assert rep.stop_reason == "time" and rep.total_time >= 50.0
        assert rep.trajectory[-2][1] < 50.0
        rep = O.run_freya_page(quad, WorkerTimeModel.sqrt_model(8), max_iters=17)
        assert rep.stop_reason == "iterations" and rep.iterations == 17
        with pytest.raises(ValueError):
            O.run_freya_page(quad, WorkerTimeModel.sqrt_model(8))

    def test_divergence_stops(self, quad):
        rep = O.run_freya_page(quad, WorkerTimeModel.sqrt_model(2), gamma=1e3, max_iters=10 ** 6)
        assert rep.stop_reason == "diverged"

    def test_eval_every_subsamples(self, quad):
        rep = O.run_freya_page(quad, WorkerTimeModel.sqrt_model(4), max_iters=95, eval_every=10)
        assert [r[0] for r in rep.trajectory] == list(range(0, 95, 10)) + [95]

    def test_deterministic(self, quad):
        a = O.run_freya_page(quad, WorkerTimeModel.sqrt_model(6), max_iters=50, seed=4)
        b = O.run_freya_page(quad, WorkerTimeModel.sqrt_model(6), max_iters=50, seed=4)
        assert a.trajectory == b.trajectory

    def test_coin_stream_independent_of_S(self, quad):
        kinds = []
        for S in (2, 9):
            rep = O.run_freya_page(quad, WorkerTimeModel.sqrt_model(3), S=S, p=0.3, max_iters=60)
            kinds.append([r.kind for r in rep.trace.records])
        assert kinds[0] == kinds[1]

    def test_csv(self, quad, tmp_path):
        rep = O.run_freya_page(quad, WorkerTimeModel.sqrt_model(2), max_iters=5)
        rep.write_csv(tmp_path / "r.csv", f_best=-1.0)
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "k,time,grad_norm_sq,f_value,suboptimality" and len(lines) == 7


class TestSGD:
    def test_zero_variance_full_batch_is_gd(self):
        prob = generate_quadratic(12, 5, 0.1, 0.0, 0)
        gamma = 0.8 / prob.hints.L_minus
        rep = O.run_freya_sgd(prob, WorkerTimeModel([1.0, 2.0]), gamma=gamma, S=12, max_iters=30)
        x = prob.x0
        for _ in range(30):
            x = x - gamma * prob.full_gradient(x)
        np.testing.assert_allclose(rep.x, x, rtol=1e-12, atol=1e-12)

    def test_rennala_is_same_loop(self, quad):
        kw = dict(gamma=0.1, S=5, max_iters=40, seed=2)
        a = O.run_freya_sgd(quad, WorkerTimeModel.sqrt_model(4), **kw)
        b = O.run_rennala_sgd(quad, WorkerTimeModel.sqrt_model(4), **kw)
        assert a.trajectory == b.trajectory and b.method == "rennala_sgd"

    def test_auto_parameters(self, quad):
        g0 = quad.full_gradient(quad.x0)
        eps = 0.05 * (g0 @ g0)
        rep = O.run_freya_sgd(quad, WorkerTimeModel.sqrt_model(4), eps=eps, delta_star=0.0,
                              max_iters=2000)
        delta0 = quad.value(quad.x0) - quad.optimum_value()
        assert rep.params["S"] == theory.sgd_params(delta0, eps, quad.hints.L_max, 0.0)
        assert rep.params["gamma"] > 0

    def test_auto_needs_constants(self, quad):
        with pytest.raises(ValueError):
            O.run_freya_sgd(quad, WorkerTimeModel([1.0]), max_iters=3)

    def test_time_is_batch_collection(self, quad):
        rep = O.run_freya_sgd(quad, WorkerTimeModel([1.0]), gamma=0.1, S=3, max_iters=4)
        assert rep.total_time == 12.0


class TestSovietPage:
    def test_blocks(self):
        owner = O.soviet_blocks(10, 3)
        assert np.bincount(owner).tolist() == [4, 3, 3]
        assert np.all(np.diff(owner) >= 0)

    def test_full_phase_equal_speeds(self, quad):
        rep = O.run_soviet_page(quad, WorkerTimeModel([2.0] * 8), p=1.0, S=4, max_iters=3)
        assert rep.trace.durations() == [2.0 * 64 / 8] * 4

    def test_straggler_phase(self, quad):
        rep = O.run_soviet_page(quad, WorkerTimeModel([1.0] * 7 + [1e9]), p=1.0, S=4, max_iters=2)
        assert rep.trace.durations()[0] == 1e9 * 8

    def test_single_worker_is_hero_timing(self, quad):
        rep = O.run_soviet_page(quad, WorkerTimeModel([3.0]), p=1.0, S=4, max_iters=2)
        assert rep.trace.durations()[0] == 3.0 * 64

    def test_minibatch_phase_owner_counts(self, quad):
        taus = np.array([1.0, 2.0, 3.0, 4.0])
        rep = O.run_soviet_page(quad, WorkerTimeModel(taus), p=0.01, S=10, max_iters=30)
        owner = O.soviet_blocks(quad.m, 4)
        for rec in rep.trace.records:
            if rec.kind == "diff":
                counts = np.array(rec.oracle_calls) // 2
                assert counts.sum() == 10
                assert rec.duration == max(c * 2 * t for c, t in zip(counts, taus))
        assert owner.size == quad.m

    def test_converges(self, quad):
        g0 = quad.full_gradient(quad.x0)
        rep = O.run_soviet_page(quad, WorkerTimeModel.sqrt_model(4), eps=1e-4 * (g0 @ g0),
                                max_iters=100000)
        assert rep.reached_eps


class TestGDBaselines:
    def test_hero_timing(self):
        prob = generate_quadratic(10, 3, 0.1, 1.0, 0)
        rep = O.run_gd_baselines(prob, WorkerTimeModel([2.0, 5.0]), "hero", max_iters=3)
        assert rep.trace.durations() == [20.0] * 3

    def test_soviet_timing(self):
        prob = generate_quadratic(12, 3, 0.1, 1.0, 0)
        rep = O.run_gd_baselines(prob, WorkerTimeModel([1.5] * 4), "soviet", max_iters=2)
        assert rep.trace.durations() == [12 * 1.5 / 4] * 2

    def test_convergence_within_classical_bound(self, quad):
        g0 = quad.full_gradient(quad.x0)
        eps = 1e-3 * (g0 @ g0)
        delta0 = quad.value(quad.x0) - quad.optimum_value()
        K = math.ceil(2 * delta0 * quad.hints.L_minus / eps)
        rep = O.run_gd_baselines(quad, WorkerTimeModel([1.0]), "hero", eps=eps, max_iters=K)
        assert rep.reached_eps and rep.iterations <= K

    def test_unknown_variant(self, quad):
        with pytest.raises(ValueError):
            O.run_gd_baselines(quad, WorkerTimeModel([1.0]), "villain", max_iters=1)


class TestAsynchronousSGD:
    def test_single_worker_is_sequential_sgd(self, quad):
        gamma = 0.05
        rep = O.run_asynchronous_sgd(quad, WorkerTimeModel([2.0]), gamma, max_iters=50, seed=6)
        gen = StreamBank(6, 1, 1).generators[0]
        x = quad.x0
        for _ in range(50):
            j = min(int(gen.random() * quad.m), quad.m - 1)
            x = x - gamma * quad.component_gradient(j, x)
        np.testing.assert_array_equal(rep.x, x)
        assert rep.total_time == 100.0 and max(rep.extras["delays"]) == 0

    def test_delays_bounded_with_equal_times(self, quad):
        n = 6
        rep = O.run_asynchronous_sgd(quad, WorkerTimeModel([1.0] * n), 0.01, max_iters=300)
        assert max(rep.extras["delays"]) <= n - 1

    def test_one_update_per_completion(self, quad):
        rep = O.run_asynchronous_sgd(quad, WorkerTimeModel([1.0, 3.0]), 0.01, max_iters=40)
        assert sum(r.completions for r in rep.trace.records) == 40
        assert rep.trace.total_time == rep.total_time

    def test_straggler_never_updates(self, quad):
        rep = O.run_asynchronous_sgd(quad, WorkerTimeModel([1.0, math.inf]), 0.01, max_iters=20)
        assert rep.trace.calls.tolist() == [20, 0]

    def test_rejects_bad_step(self, quad):
        with pytest.raises(ValueError):
            O.run_asynchronous_sgd(quad, WorkerTimeModel([1.0]), 0.0, max_iters=1)
