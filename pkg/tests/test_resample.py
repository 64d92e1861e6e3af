import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import optimize
from scipy.stats import norm

from seqsurv.rank_stats import cox_score_info
from seqsurv.resample import (
    HybridConfig,
    HybridPValue,
    OrderingScheme,
    PiecewiseCumHaz,
    ResamplingWeights,
    batch_cox_score_info,
    brownian_siegmund_pvalue,
    exact_bootstrap_tail,
    exact_importance_expectation,
    Example2Config,
    fit_cox,
    fit_hybrid_model,
    hybrid_confidence_set,
    importance_bootstrap_tail,
    mann_whitney,
    optimal_tilt,
    optimal_weights,
    order_outcomes,
    p_hat,
    sample_from_distribution,
    uniform_weights,
    y_scores,
)
from seqsurv.survival_core import StepFunction, TrialData, snapshot
from seqsurv.trial_sim import (
    EXAMPLE_18,
    PathPoint,
    SequentialOutcome,
    TestSpec,
    UniformAccrual,
    generate_trial,
    replicate_rng,
    run_test,
)


class TestMannWhitney:
    def test_all_above(self):
        assert mann_whitney([4, 5], [1]) == 2

    def test_all_below(self):
        assert mann_whitney([1, 2], [3]) == -2

    def test_ties_score_zero(self):
        assert mann_whitney([1, 2], [2]) == -1

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 9), min_size=1, max_size=8), st.lists(st.integers(0, 9), min_size=1, max_size=8))
    def test_antisymmetry(self, x, y):
        assert mann_whitney(y, x) == -mann_whitney(x, y)
        assert y_scores(x, y).sum() == mann_whitney(x, y)


def example1_samples(seed):
    rng = np.random.default_rng(seed)
    scale = 3 / math.log(2)
    return rng.exponential(scale, 30), rng.exponential(scale, 25)


def tail_point(x, y, level):
    u = y_scores(x, y)
    return len(y) * u.mean() + norm.ppf(level) * math.sqrt(np.sum((u - u.mean()) ** 2))


class TestOptimalWeights:
    def test_zero_tilt_is_uniform(self):
        x, y = example1_samples(0)
        w = optimal_weights(x, y, 0.0, tilt=0.0)
        assert np.all(w.p == 1 / 25) and w.tilt == 0

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0.001, 0.4))
    def test_sum_and_ordering(self, seed, level):
        x, y = example1_samples(seed)
        w = optimal_weights(x, y, tail_point(x, y, level))
        assert w.p.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(w.p > 0)
        order = np.argsort(w.u_tilde)
        assert np.all(np.diff(w.p[order]) <= 1e-15)

    def test_stationarity(self):
        for xt in (-2.58, -1.0, 0.5):
            A = optimal_tilt(xt)
            assert 2 * A * norm.cdf(xt - A) == pytest.approx(norm.pdf(xt - A), rel=1e-8)
            h = lambda a: norm.cdf(xt - a) * math.exp(a * a)
            assert h(A) <= min(h(A * 0.9), h(A * 1.1))

    def test_degenerate_scores(self):
        w = optimal_weights([5.0, 6.0], [1.0, 2.0, 3.0], -1.0)
        assert w.degenerate
        assert_allclose(w.p, 1 / 3)

    def test_derived_quantities(self):
        x, y = example1_samples(1)
        w = optimal_weights(x, y, tail_point(x, y, 0.01))
        assert w.s2 == pytest.approx(np.sum(np.log(25 * w.p) ** 2))
        assert w.x_tilde == pytest.approx(norm.ppf(0.01))

    def test_importance_halves_standard_error(self):
        x, y = example1_samples(2)
        xp = tail_point(x, y, 0.005)
        direct = importance_bootstrap_tail(x, y, xp, 500, uniform_weights(x, y), replicate_rng(1, 0))
        tilted = importance_bootstrap_tail(x, y, xp, 500, optimal_weights(x, y, xp), replicate_rng(1, 1))
        assert tilted.se * 2 <= direct.se


class TestExhaustive:
    x = np.array([1.3, 0.2, 2.9])
    y = np.array([0.5, 1.9, 3.1, 0.9])

    def test_uniform_weights(self):
        exact = exact_bootstrap_tail(self.x, self.y, -1)
        assert exact_importance_expectation(self.x, self.y, -1, np.full(4, 0.25)) == pytest.approx(exact, abs=1e-12)

    @settings(max_examples=10, deadline=None)
    @given(st.lists(st.floats(0.05, 5.0), min_size=4, max_size=4), st.integers(-12, 12))
    def test_any_positive_weights(self, raw, x_point):
        p = np.asarray(raw) / np.sum(raw)
        exact = exact_bootstrap_tail(self.x, self.y, x_point)
        assert abs(exact_importance_expectation(self.x, self.y, x_point, p) - exact) < 1e-12


# -- orderings -----------------------------------------------------------------


def outcome(stop, S, V=None):
    S = list(S)
    V = list(V) if V is not None else [1.0] * len(S)
    return SequentialOutcome(stop, tuple(PathPoint(float(j + 1), s, v, 0) for j, (s, v) in enumerate(zip(S, V))),
                             "accept")


LOWER = (-3.0, -2.5, -np.inf)
UPPER = (3.0, 2.5, np.inf)
SIEG = OrderingScheme("siegmund", lower=LOWER, upper=UPPER)


class TestOrderings:
    def test_same_time_larger_sum(self):
        assert order_outcomes(outcome(2, [0, 5]), outcome(2, [0, 3]), SIEG) == "greater"

    def test_early_upper_exit_dominates(self):
        for s2 in (-10.0, 0.0, 2.4, 50.0):
            assert order_outcomes(outcome(1, [3.5]), outcome(2, [0, s2]), SIEG) == "greater"

    def test_early_lower_exit_is_smallest(self):
        assert order_outcomes(outcome(3, [0, 0, -40.0]), outcome(1, [-3.2]), SIEG) == "greater"

    def test_psi_pinned_at_earlier_stop(self):
        psi = OrderingScheme("psi-path", "standardized")
        a = outcome(2, [0.3, 1.0])
        b = outcome(3, [-0.1, 1.0, 99.0])
        assert order_outcomes(a, b, psi) == "equal"

    def test_missing_path_entry(self):
        psi = OrderingScheme("psi-path")
        bad = SequentialOutcome(3, (PathPoint(1.0, 1.0, 1.0, 0),), "accept")
        with pytest.raises(ValueError):
            order_outcomes(bad, outcome(3, [0, 0, 0]), psi)

    def test_scheme_validation(self):
        with pytest.raises(ValueError):
            OrderingScheme("siegmund")
        with pytest.raises(ValueError):
            OrderingScheme("other")


@st.composite
def stopped_outcomes(draw):
    """Outcomes of a random walk stopped by the (LOWER, UPPER) boundary."""
    steps = draw(st.lists(st.floats(-2.0, 2.0), min_size=3, max_size=3))
    s = np.cumsum(steps)
    for j in range(3):
        if s[j] >= UPPER[j] or s[j] <= LOWER[j] or j == 2:
            return outcome(j + 1, s[: j + 1])


def _flip(r):
    return {"greater": "less", "less": "greater", "equal": "equal"}[r]


@pytest.mark.parametrize("scheme", [SIEG, OrderingScheme("psi-path", "standardized")], ids=["siegmund", "psi"])
@settings(max_examples=200, deadline=None)
@given(a=stopped_outcomes(), b=stopped_outcomes(), c=stopped_outcomes())
def test_order_trichotomy_and_transitivity(scheme, a, b, c):
    for x, y in ((a, b), (b, c), (a, c)):
        r = order_outcomes(x, y, scheme)
        assert r in ("less", "equal", "greater")
        assert order_outcomes(y, x, scheme) == _flip(r)
    ab, bc, ac = order_outcomes(a, b, scheme), order_outcomes(b, c, scheme), order_outcomes(a, c, scheme)
    if ab in ("greater", "equal") and bc in ("greater", "equal"):
        assert ac == ("equal" if ab == bc == "equal" else "greater")
    if ab in ("less", "equal") and bc in ("less", "equal"):
        assert ac == ("equal" if ab == bc == "equal" else "less")


# -- Cox fitting and the hybrid machinery -----------------------------------------


def partial_loglik(beta, obs, ev, z):
    ll = 0.0
    for i in np.flatnonzero(ev):
        risk = obs >= obs[i]
        ll += beta * z[i] - math.log(np.sum(np.exp(beta * z[risk])))
    return ll


class TestCox:
    def test_maximizer(self):
        d = generate_trial(Example2Config().scenario(math.log(0.6)), replicate_rng(3, 0))
        snap = snapshot(d, 4.0)
        fit = fit_cox(snap)
        ref = optimize.minimize_scalar(lambda b: -partial_loglik(b, snap.observed, snap.event, snap.covariate),
                                       bounds=(-3, 3), method="bounded", options={"xatol": 1e-9})
        assert fit.beta == pytest.approx(ref.x, abs=1e-6)
        h = 1e-4
        curv = -(partial_loglik(fit.beta + h, snap.observed, snap.event, snap.covariate)
                 - 2 * partial_loglik(fit.beta, snap.observed, snap.event, snap.covariate)
                 + partial_loglik(fit.beta - h, snap.observed, snap.event, snap.covariate)) / h**2
        assert fit.information == pytest.approx(curv, rel=1e-4)

    def test_no_events(self):
        d = TrialData.from_arrays([0, 0], [5.0, 6.0], None, [True, False])
        with pytest.raises(ValueError):
            fit_cox(snapshot(d, 1.0))

    def test_monotone_likelihood_falls_back(self):
        # all events in the X arm: no finite maximiser
        d = TrialData.from_arrays([0] * 4, [1.0, 2.0, 9.0, 9.0], None, [True, True, False, False])
        with pytest.raises(ValueError):
            fit_cox(snapshot(d, 5.0))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.booleans())
    def test_batch_matches_scalar(self, seed, ties):
        rng = np.random.default_rng(seed)
        B, n = 4, 30
        obs = rng.exponential(1, (B, n))
        if ties:
            obs = np.ceil(obs * 3) / 3
        ev = rng.random((B, n)) < 0.7
        z = (rng.random((B, n)) < 0.5).astype(float)
        S, V = batch_cox_score_info(obs, ev, z)
        for b in range(B):
            snap = type(snapshot(TrialData.from_arrays([0], [1.0]), 1.0))(9.0, obs[b], ev[b], z[b] > 0, z[b], obs[b])
            s, v = cox_score_info(snap)
            assert S[b] == pytest.approx(s, abs=1e-10)
            assert V[b] == pytest.approx(v, abs=1e-10)


class TestNuisance:
    def test_piecewise_inverse(self):
        L = PiecewiseCumHaz.from_step(StepFunction.from_arrays([1.0, 2.0, 4.0], [0.2, 0.5, 0.6]))
        s = np.array([0.0, 0.5, 1.0, 1.7, 3.9, 4.0, 10.0])
        assert_allclose(L.inverse(L(s)), s, atol=1e-12)
        assert L(10.0) == pytest.approx(0.6 + 0.15 * 6)

    def test_defective_distribution_sampling(self):
        C = StepFunction.from_arrays([1.0, 3.0], [0.25, 0.4])
        draws = sample_from_distribution(C, np.random.default_rng(0), 200_000)
        assert np.mean(draws == 1.0) == pytest.approx(0.25, abs=0.005)
        assert np.mean(draws == 3.0) == pytest.approx(0.15, abs=0.005)
        assert np.mean(np.isinf(draws)) == pytest.approx(0.6, abs=0.005)


@pytest.fixture(scope="module")
def observed_model():
    cfg = Example2Config()
    d = generate_trial(cfg.scenario(math.log(2 / 3)), replicate_rng(21, 0))
    out = run_test(d, TestSpec("cox", boundary=EXAMPLE_18), cfg.analysis_times)
    return fit_hybrid_model(d, out, cfg.analysis_times, accrual=UniformAccrual(3.0), n=350, allocation=0.5)


class TestPHat:
    def test_importance_equals_direct_at_estimate(self, observed_model):
        cfg = HybridConfig(B=500, seed=4)
        pv = HybridPValue(observed_model, cfg)
        bh = observed_model.beta_hat
        assert pv.evaluate(bh, "importance").value == pv.evaluate(bh, "direct").value
        for normalize in (False,):
            raw = HybridPValue(observed_model, HybridConfig(B=500, seed=4, normalize=normalize))
            assert raw(bh) == pv.evaluate(bh, "direct").value

    def test_nondecreasing(self, observed_model):
        # fresh batches from one shared stream, so common random numbers across beta
        bh = observed_model.beta_hat
        pv = HybridPValue(observed_model, HybridConfig(B=1000, seed=5, mode="direct"))
        vals = [pv.evaluate(b) for b in (bh - 1, bh, bh + 1)]
        for a, b in zip(vals, vals[1:]):
            assert b.value >= a.value - 2 * math.hypot(a.se, b.se)

    def test_importance_nondecreasing_near_estimate(self, observed_model):
        # the reweighted batch only supports beta within a few SE of beta_hat
        bh, se = observed_model.beta_hat, observed_model.fit.se
        pv = HybridPValue(observed_model, HybridConfig(B=1000, seed=5))
        vals = [pv.evaluate(bh + k * se) for k in (-2, -1, 0, 1, 2)]
        for a, b in zip(vals, vals[1:]):
            assert b.value >= a.value - 2 * math.hypot(a.se, b.se)
        assert vals[2].ess == 1000
        assert all(v.ess < 1000 for v in vals[:2] + vals[3:])

    def test_direct_vs_importance(self, observed_model):
        bh = observed_model.beta_hat
        pv = HybridPValue(observed_model, HybridConfig(B=2000, seed=6))
        for b in (bh - 0.5, bh + 0.5):
            i = pv.evaluate(b, "importance")
            d = HybridPValue(observed_model, HybridConfig(B=2000, seed=7)).evaluate(b, "direct")
            assert abs(i.value - d.value) <= 3 * math.hypot(i.se, d.se)

    def test_function_form(self, observed_model):
        cfg = HybridConfig(B=200, seed=1)
        assert p_hat(observed_model.beta_hat, observed_model, cfg) == HybridPValue(observed_model, cfg)(observed_model.beta_hat)

    def test_zero_resamples_rejected(self):
        with pytest.raises(ValueError):
            HybridConfig(B=0)

    def test_ratio_at_earlier_index(self, observed_model):
        from seqsurv.resample import log_likelihood_ratio, simulate_batch

        batch = simulate_batch(observed_model, observed_model.beta_hat, 400, replicate_rng(3, 1))
        b = observed_model.beta_hat + 0.3
        np.testing.assert_array_equal(log_likelihood_ratio(batch, b), log_likelihood_ratio(batch, b, batch.stop))
        first = log_likelihood_ratio(batch, b, np.zeros(400, dtype=int))
        assert np.var(first) < np.var(log_likelihood_ratio(batch, b))
        # E[L(b)/L(beta_hat)] = 1 at any fixed index
        assert abs(np.mean(np.exp(first)) - 1) < 0.05

    def test_non_finite_ratios_are_excluded(self, observed_model):
        r = HybridPValue(observed_model, HybridConfig(B=200, seed=2)).evaluate(900.0)
        assert r.excluded > 0


class TestConfidenceSet:
    def test_contains_estimate(self, observed_model):
        cfg = HybridConfig(B=500, seed=8)
        ph = HybridPValue(observed_model, cfg)(observed_model.beta_hat)
        ci = hybrid_confidence_set(observed_model, 0.05, cfg)
        assert 0.05 < ph < 0.95
        assert ci.lower < observed_model.beta_hat < ci.upper
        assert len(ci.trace) > 4
        d = ci.to_dict()
        assert d["interval"] == [ci.lower, ci.upper] and d["mode"] == "importance"

    def test_no_sign_change(self, observed_model):
        cfg = HybridConfig(B=200, seed=8, bracket_se=0.01)
        with pytest.raises(ValueError, match="no crossing"):
            hybrid_confidence_set(observed_model, 0.05, cfg)


class TestBrownianComparator:
    def test_single_look_is_normal_tail(self):
        o = outcome(1, [3.0], [8.0])
        for beta in (-0.4, 0.0, 0.3):
            ref = norm.sf((3.0 - beta * 8.0) / math.sqrt(8.0))
            assert brownian_siegmund_pvalue(o, beta) == pytest.approx(ref, abs=1e-8)

    def test_increasing_in_beta(self):
        o = outcome(4, [1, 3, 5, 6.5], [6, 15, 30, 56])
        vals = np.array([brownian_siegmund_pvalue(o, b) for b in np.linspace(-1, 1, 9)])
        assert np.all(np.diff(vals) >= 0)
        assert np.all(np.diff(vals)[vals[1:] < 1] > 0)

    def test_early_upper_exit_counts_everything_above(self):
        o1 = outcome(2, [1.0, 12.0], [10.0, 15.0])  # upper exit at look 2 (12 >= 2.85 sqrt 15)
        p = brownian_siegmund_pvalue(o1, 0.0)
        assert 0 < p < 0.01

    def test_continuous_monitoring(self):
        small = outcome(1, [3.0], [8.0])
        assert brownian_siegmund_pvalue(small, 0.2, monitoring="continuous") == pytest.approx(
            norm.sf((3.0 - 0.2 * 8.0) / math.sqrt(8.0)), abs=1e-12)
        # an upper exit: watching between looks can only add earlier upper exits
        o = outcome(3, [1.0, 4.0, 18.0], [10.0, 20.0, 30.0])
        for beta in (-0.2, 0.0, 0.2):
            d = brownian_siegmund_pvalue(o, beta)
            c = brownian_siegmund_pvalue(o, beta, monitoring="continuous")
            assert c > d
        with pytest.raises(ValueError):
            brownian_siegmund_pvalue(o, 0.0, monitoring="sometimes")
