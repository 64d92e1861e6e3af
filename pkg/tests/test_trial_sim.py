import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqsurv.survival_core import TrialData
from seqsurv.trial_sim import (
    EXAMPLE_18,
    Example18Boundary,
    Exponential,
    GridBoundary,
    HaybittlePetoBoundary,
    PoissonAccrual,
    ProportionalHazards,
    Scenario,
    SpendingBoundary,
    TableAccrual,
    TestSpec,
    UniformAccrual,
    Weibull,
    generate_trial,
    operating_characteristics,
    replay_path,
    replicate_rng,
    run_test,
    sample_size_search,
    schoenfeld_n,
    simulate_outcomes,
)
from seqsurv.boundary_engine import SpendingFunction
from seqsurv.boundary_engine import z_quantile

Z975 = z_quantile(0.025)


def scenario(n=120, hr=1.0, times=(1.0, 2.0, 3.0), withdrawal=None):
    base = Exponential(0.5)
    return Scenario(n, UniformAccrual(2.0), ProportionalHazards(base, math.log(hr)), base, times,
                    withdrawal=withdrawal)


class TestGenerate:
    def test_uniform_entry_window(self):
        sc = Scenario(350, UniformAccrual(3.0), Exponential(1.0), Exponential(1.0), (5.5,))
        d = generate_trial(sc, replicate_rng(0, 0))
        assert d.n == 350
        assert d.entry.min() >= 0 and d.entry.max() <= 3.0

    def test_no_withdrawal(self):
        d = generate_trial(scenario(), replicate_rng(1, 0))
        assert np.all(np.isinf(d.withdrawal))

    def test_mean_survival(self):
        sc = Scenario(10_000, UniformAccrual(1.0), Exponential(1.0), Exponential(1.0), (1.0,))
        d = generate_trial(sc, replicate_rng(2, 0))
        assert abs(d.survival.mean() - 1.0) < 0.03

    def test_deterministic_stream(self):
        sc = scenario(withdrawal=Exponential(0.1))
        a, b = generate_trial(sc, replicate_rng(5, 3)), generate_trial(sc, replicate_rng(5, 3))
        for col in ("entry", "survival", "withdrawal", "is_x"):
            np.testing.assert_array_equal(getattr(a, col), getattr(b, col))
        c = generate_trial(sc, replicate_rng(5, 4))
        assert not np.array_equal(a.entry, c.entry)

    def test_weibull_and_ph(self):
        w = Weibull(2.0, 1.5)
        s = np.linspace(0.1, 3, 5)
        np.testing.assert_allclose(w.inverse_cumhaz(w.cumhaz(s)), s)
        ph = ProportionalHazards(w, 0.4)
        np.testing.assert_allclose(ph.cumhaz(s), math.exp(0.4) * w.cumhaz(s))

    def test_accruals(self):
        rng = replicate_rng(0, 1)
        p = PoissonAccrual(10.0).sample(rng, 50)
        assert np.all(np.diff(p) > 0)
        t = TableAccrual((0.0, 0.5, 1.0)).sample(rng, 3)
        np.testing.assert_array_equal(t, [0.0, 0.5, 1.0])

    def test_scenario_validation_and_round_trip(self):
        sc = scenario(withdrawal=Exponential(0.2))
        assert Scenario.from_dict(sc.to_dict()) == sc
        with pytest.raises(ValueError):
            Scenario(1, UniformAccrual(1.0), Exponential(1.0), Exponential(1.0), (1.0,))
        with pytest.raises(ValueError):
            Scenario(10, UniformAccrual(1.0), Exponential(1.0), Exponential(1.0), (2.0, 1.0))


class TestRunTest:
    times = (1.0, 2.0, 3.0)

    def test_infinite_interim_thresholds(self):
        spec = TestSpec(boundary=GridBoundary((math.inf, math.inf, Z975)))
        for r in range(20):
            out = run_test(generate_trial(scenario(hr=3.0), replicate_rng(9, r)), spec, self.times)
            assert out.stop_index == 3
            assert len(out.path) == 3

    def test_immediate_crossing_replayed(self):
        assert replay_path(GridBoundary((2.85, 2.85, 2.05)), self.times, [5.0], [1.0]) == (1, "reject")

    def test_immediate_crossing_on_data(self):
        # every X subject fails before the first look, no Y subject does
        n = 60
        is_x = np.arange(n) % 2 == 0
        surv = np.where(is_x, 0.1 + 0.001 * np.arange(n), 50.0)
        data = TrialData.from_arrays(np.zeros(n), surv, None, is_x)
        out = run_test(data, TestSpec(boundary=GridBoundary((2.85, 2.85, 2.05))), self.times)
        assert out.path[0].Z >= 2.85
        assert out.stop_index == 1 and out.reject

    def test_bhat_path_has_no_interim_stop(self):
        z = [1.68, 2.24, 2.37, 2.30, 2.34, 2.82]
        times = tuple(range(1, 8))
        stop, decision = replay_path(GridBoundary((2.85,) * 7), times, z, [1.0] * 6)
        assert stop is None and decision is None

    def test_example18_boundary_rules(self):
        times = tuple(1.0 + 0.5 * j for j in range(10))
        # information cap forces the final test
        assert replay_path(EXAMPLE_18, times, [10.0, 30.0], [30.0, 56.0]) == (2, "reject")
        assert replay_path(EXAMPLE_18, times, [10.0, 10.0], [30.0, 56.0]) == (2, "accept")
        # too little information to stop early even with a large Z
        assert replay_path(EXAMPLE_18, times, [30.0], [10.0]) == (None, None)
        assert replay_path(EXAMPLE_18, times, [30.0], [12.0]) == (1, "reject")

    def test_example18_batch_matches_check(self):
        rng = np.random.default_rng(0)
        times = tuple(1.0 + 0.5 * j for j in range(10))
        V = np.cumsum(rng.uniform(0, 9, (300, 10)), axis=1)
        S = rng.normal(0, 1, (300, 10)) * np.sqrt(V) * 1.5
        idx, rej = EXAMPLE_18.batch(S, V)
        for r in range(300):
            stop, dec = replay_path(EXAMPLE_18, times, S[r], V[r])
            assert stop == idx[r] + 1
            assert (dec == "reject") == rej[r]

    def test_zero_information_is_skipped(self):
        # no events at the first look
        n = 20
        is_x = np.arange(n) % 2 == 0
        data = TrialData.from_arrays(np.zeros(n), np.linspace(1.5, 2.9, n), None, is_x)
        out = run_test(data, TestSpec(boundary=GridBoundary((2.0, 2.0, 2.0))), self.times)
        assert out.path[0].skipped and out.path[0].V == 0
        assert out.stop_index > 1

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000))
    def test_stop_is_first_crossing(self, r):
        bnd = GridBoundary((2.2, 2.2, Z975))
        out = run_test(generate_trial(scenario(hr=1.8), replicate_rng(17, r)), TestSpec(boundary=bnd), self.times)
        assert len(out.path) == out.stop_index
        for p in out.path[:-1]:
            assert abs(p.Z) < 2.2
        if out.stop_index < 3:
            assert abs(out.stopped.Z) >= 2.2 and out.reject

    def test_spending_and_hp_boundaries_run(self):
        for bnd in (SpendingBoundary(SpendingFunction("obrien-fleming", 0.05)), HaybittlePetoBoundary(0.1)):
            out = run_test(generate_trial(scenario(n=200), replicate_rng(3, 0)), TestSpec(boundary=bnd), self.times)
            assert out.decision in ("reject", "accept")

    def test_cox_statistic_matches_logrank(self):
        d = generate_trial(scenario(n=200, hr=1.5), replicate_rng(4, 0))
        a = run_test(d, TestSpec("cox", boundary=GridBoundary((9, 9, 9))), self.times)
        b = run_test(d, TestSpec("logrank", boundary=GridBoundary((9, 9, 9))), self.times)
        assert [p.S for p in a.path] == pytest.approx([p.S for p in b.path], abs=1e-9)

    def test_spec_round_trip(self):
        spec = TestSpec("grho:1", "C", Example18Boundary(), 0.05)
        assert TestSpec.from_dict(spec.to_dict()) == spec


class TestOperatingCharacteristics:
    def test_infinite_interims_stop_at_horizon(self):
        spec = TestSpec(boundary=GridBoundary((math.inf, math.inf, Z975)))
        rep = operating_characteristics(scenario(), spec, 200, seed=1)
        assert rep.expected_stop_time == 3.0
        assert rep.stage_histogram == [0, 0, 200]

    def test_power_increases_with_hazard_ratio(self):
        spec = TestSpec(boundary=GridBoundary((2.8, Z975)))
        kw = dict(n=80, times=(1.5, 3.0))
        lo = operating_characteristics(scenario(hr=1.2, **kw), spec, 10_000, seed=2)
        hi = operating_characteristics(scenario(hr=2.0, **kw), spec, 10_000, seed=2)
        assert hi.rejection_rate > lo.rejection_rate

    def test_independent_of_workers(self):
        sc, spec = scenario(n=60), TestSpec(boundary=GridBoundary((2.5, 2.5, Z975)))
        a = simulate_outcomes(sc, spec, 40, seed=3, workers=1)
        b = simulate_outcomes(sc, spec, 40, seed=3, workers=3)
        assert a == b
        ra = operating_characteristics(sc, spec, 40, 3).to_dict()
        rb = operating_characteristics(sc, spec, 40, 3, workers=2).to_dict()
        assert ra == rb


class TestSampleSize:
    def fixed(self):
        base = Exponential(0.5)
        return Scenario(100, UniformAccrual(2.0), base, base, (4.0,))

    def test_null_target_alpha_returns_minimum(self):
        res = sample_size_search(self.fixed(), TestSpec(boundary=GridBoundary((Z975,))), 0.05, 0.0,
                                 n_sims=2000, seed=0, n_min=20, confirm_sims=None)
        assert res.n == 20

    def test_more_power_needs_more_subjects(self):
        spec = TestSpec(boundary=GridBoundary((Z975,)))
        kw = dict(n_sims=1000, seed=1, confirm_sims=None)
        n5 = sample_size_search(self.fixed(), spec, 0.5, math.log(0.6), **kw).n
        n9 = sample_size_search(self.fixed(), spec, 0.9, math.log(0.6), **kw).n
        assert n9 > n5

    def test_fixed_sample_matches_closed_form(self):
        lam, L, t, hr = 0.5, 2.0, 4.0, 0.6

        def p_event(rate):
            return 1 - (math.exp(-rate * (t - L)) - math.exp(-rate * t)) / (rate * L)

        pe = 0.5 * (p_event(lam) + p_event(lam * hr))
        closed = schoenfeld_n(math.log(hr), 0.05, 0.8, pe)
        res = sample_size_search(self.fixed(), TestSpec(boundary=GridBoundary((Z975,))), 0.8, math.log(hr),
                                 n_sims=2000, seed=2, confirm_sims=None)
        assert abs(res.n - closed) / closed < 0.10
        assert res.trace and all("power" in row for row in res.trace)

    def test_unreachable_target(self):
        from seqsurv.trial_sim import SampleSizeError

        with pytest.raises(SampleSizeError, match="cap"):
            sample_size_search(self.fixed(), TestSpec(boundary=GridBoundary((Z975,))), 0.9, 0.0,
                               n_sims=200, seed=0, n_min=20, n_cap=40, confirm_sims=None)
