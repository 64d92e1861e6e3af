"""Resampling machinery: importance-resampled bootstrap tails, sample-space
orderings and hybrid resampling confidence sets for the Cox parameter."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from . import boundary_engine as be
from .survival_core import StepFunction, TrialData, TrialSnapshot, _product_limit, breslow_cumhaz, snapshot
from .trial_sim import EXAMPLE_18, Example18Boundary, SequentialOutcome, replicate_rng

# -- Mann-Whitney importance resampling --------------------------------------


def mann_whitney(x, y) -> int:
    """U = sum_ij sign(X_i - Y_j); ties contribute zero."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return int(np.sign(x[:, None] - y[None, :]).sum())


def y_scores(x, y) -> np.ndarray:
    """u_j = sum_i sign(X_i - Y_j): the contribution of each Y_j to U."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.sign(x[:, None] - y[None, :]).sum(axis=0)


@dataclass(frozen=True)
class ResamplingWeights:
    p: np.ndarray
    tilt: float
    u: np.ndarray
    u_tilde: np.ndarray
    x_tilde: float
    degenerate: bool = False

    @property
    def delta(self) -> np.ndarray:
        return -np.log(self.p.size * self.p)

    @property
    def s2(self) -> float:
        return float(np.sum(self.delta**2))


def _tilt_weights(u_tilde, A):
    e = -A * u_tilde
    e = e - e.max()
    w = np.exp(e)
    return w / w.sum()


def optimal_tilt(x_tilde: float, tol: float = 1e-10) -> float:
    """Minimiser of Phi(x_tilde - A) exp(A^2) over A > 0.

    Solves the stationarity condition 2 A Phi(x - A) = phi(x - A) by bisection
    on (0, |x| + 10); returns 0 when there is no interior root.
    """

    def g(A):
        # log-scale comparison keeps the far tail finite
        r = x_tilde - A
        log_pdf = -0.5 * r * r - 0.5 * math.log(2 * math.pi)
        return math.log(2 * A) + _log_ndtr(r) - log_pdf

    lo, hi = 1e-300, abs(x_tilde) + 10.0
    if g(hi) < 0:
        return 0.0
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid == 0 or g(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _log_ndtr(r):
    from scipy.special import log_ndtr

    return float(log_ndtr(r))


def optimal_weights(x, y, x_point: float, tilt: float | None = None) -> ResamplingWeights:
    """Exponentially tilted resampling weights for P(U* <= x_point)."""
    u = y_scores(x, y)
    n = u.size
    ubar = u.mean()
    sd = math.sqrt(float(np.sum((u - ubar) ** 2)))
    if sd == 0:
        return ResamplingWeights(np.full(n, 1.0 / n), 0.0, u, np.zeros(n), math.nan, True)
    u_tilde = (u - ubar) / sd
    x_tilde = (x_point - n * ubar) / sd
    A = optimal_tilt(x_tilde) if tilt is None else float(tilt)
    p = np.full(n, 1.0 / n) if A == 0 else _tilt_weights(u_tilde, A)
    return ResamplingWeights(p, A, u, u_tilde, x_tilde)


def uniform_weights(x, y) -> ResamplingWeights:
    return optimal_weights(x, y, 0.0, tilt=0.0)


@dataclass(frozen=True)
class TailEstimate:
    estimate: float
    se: float
    B: int


def importance_bootstrap_tail(x, y, x_point: float, B: int, weights: ResamplingWeights,
                              rng: np.random.Generator) -> TailEstimate:
    """Estimate P(U* <= x_point | X, Y), resampling Y with probabilities p.

    Each resample contributes 1{U_b <= x} prod_i (n p_i)^(-M_bi).
    """
    p = weights.p
    n = p.size
    M = rng.multinomial(n, p, size=B)
    U = M @ weights.u
    log_lr = -(M @ np.log(n * p))
    vals = np.where(U <= x_point, np.exp(log_lr), 0.0)
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(B)) if B > 1 else math.nan
    return TailEstimate(est, se, B)


def exact_bootstrap_tail(x, y, x_point: float) -> float:
    """P(U* <= x | X, Y) by enumerating all n^n ordered resamples of Y."""
    u = y_scores(x, y)
    n = u.size
    hits = sum(1 for idx in itertools.product(range(n), repeat=n) if u[list(idx)].sum() <= x_point)
    return hits / n**n


def exact_importance_expectation(x, y, x_point: float, p) -> float:
    """E_p[1{U* <= x} prod (n p_i)^(-M_i)] by enumerating all ordered resamples."""
    u = y_scores(x, y)
    p = np.asarray(p, dtype=float)
    n = u.size
    terms = []
    for idx in itertools.product(range(n), repeat=n):
        idx = list(idx)
        if u[idx].sum() <= x_point:
            prob = math.prod(p[i] for i in idx)
            lr = math.prod(1.0 / (n * p[i]) for i in idx)
            terms.append(prob * lr)
    return math.fsum(terms)


# -- orderings ----------------------------------------------------------------


@dataclass(frozen=True)
class OrderingScheme:
    """``siegmund`` orders (stop index, S) against S-scale boundaries a_j < b_j.

    ``psi-path`` compares the path statistic at the earlier stop index; the
    statistic is ``estimate`` (S/V) or ``standardized`` (S/sqrt(V)).
    """

    kind: str = "psi-path"
    statistic: str = "estimate"
    lower: tuple[float, ...] | None = None
    upper: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("psi-path", "siegmund"):
            raise ValueError("ordering kind must be 'psi-path' or 'siegmund'")
        if self.statistic not in ("estimate", "standardized"):
            raise ValueError("psi statistic must be 'estimate' or 'standardized'")
        if self.kind == "siegmund" and (self.lower is None or self.upper is None):
            raise ValueError("siegmund ordering needs boundaries")


def psi_path(outcome: SequentialOutcome, statistic: str = "estimate") -> np.ndarray:
    attr = "estimate" if statistic == "estimate" else "Z"
    return np.array([getattr(p, attr) for p in outcome.path])


def _cmp(a, b) -> str:
    return "greater" if a > b else ("less" if a < b else "equal")


def siegmund_key(t: int, s: float, lower, upper) -> tuple:
    """Lexicographic key: early upper exits largest, early lower exits smallest."""
    if s >= upper[t - 1]:
        return (2, -t, s)
    if s <= lower[t - 1]:
        return (0, t, s)
    return (1, 0, s)


def order_outcomes(o1: SequentialOutcome, o2: SequentialOutcome, scheme: OrderingScheme) -> str:
    if scheme.kind == "siegmund":
        k1 = siegmund_key(o1.stop_index, o1.stopped.S, scheme.lower, scheme.upper)
        k2 = siegmund_key(o2.stop_index, o2.stopped.S, scheme.lower, scheme.upper)
        return _cmp(k1, k2)
    m = min(o1.stop_index, o2.stop_index)
    if len(o1.path) < m or len(o2.path) < m:
        raise ValueError(f"outcome path has no entry at analysis {m}")
    p1 = psi_path(o1, scheme.statistic)[m - 1]
    p2 = psi_path(o2, scheme.statistic)[m - 1]
    return _cmp(p1, p2)


# -- Cox model fitting ----------------------------------------------------------


def _partial_score_info(obs, ev, z, beta):
    order = np.argsort(obs, kind="stable")
    o, zs, es = obs[order], z[order], ev[order]
    r = np.exp(beta * zs)
    s0 = np.cumsum(r[::-1])[::-1]
    s1 = np.cumsum((r * zs)[::-1])[::-1]
    s2 = np.cumsum((r * zs * zs)[::-1])[::-1]
    first = np.searchsorted(o, o, side="left")[es]
    mean = s1[first] / s0[first]
    score = math.fsum(zs[es] - mean)
    info = math.fsum(np.maximum(s2[first] / s0[first] - mean**2, 0.0))
    return score, info


@dataclass(frozen=True)
class CoxFit:
    beta: float
    information: float
    iterations: int

    @property
    def se(self) -> float:
        return 1.0 / math.sqrt(self.information) if self.information > 0 else math.inf


def fit_cox(snap: TrialSnapshot, tol: float = 1e-10, max_iter: int = 50) -> CoxFit:
    """Maximise the partial likelihood by Newton steps, with a bisection fallback."""
    obs = np.asarray(snap.observed, dtype=float)
    ev = np.asarray(snap.event, dtype=bool)
    z = np.asarray(snap.covariate, dtype=float)
    if not ev.any():
        raise ValueError("no events: partial likelihood is flat")
    beta = 0.0
    for it in range(1, max_iter + 1):
        u, i = _partial_score_info(obs, ev, z, beta)
        if not i > 0 or not math.isfinite(u):
            break
        step = u / i
        beta += max(min(step, 2.0), -2.0)
        if abs(step) < tol:
            return CoxFit(beta, _partial_score_info(obs, ev, z, beta)[1], it)
    # bisection on the (decreasing) score
    lo, hi = -20.0, 20.0
    ulo, uhi = _partial_score_info(obs, ev, z, lo)[0], _partial_score_info(obs, ev, z, hi)[0]
    if not (ulo > 0 > uhi):
        raise ValueError("partial likelihood has no finite maximiser")
    it = 0
    while hi - lo > tol:
        it += 1
        mid = 0.5 * (lo + hi)
        if _partial_score_info(obs, ev, z, mid)[0] > 0:
            lo = mid
        else:
            hi = mid
    beta = 0.5 * (lo + hi)
    return CoxFit(beta, _partial_score_info(obs, ev, z, beta)[1], max_iter + it)


# -- nuisance model -------------------------------------------------------------


@dataclass(frozen=True)
class PiecewiseCumHaz:
    """Continuous cumulative hazard through (knots, values), linear in between.

    Beyond the last knot the hazard stays at ``tail_rate``.
    """

    knots: np.ndarray
    values: np.ndarray
    tail_rate: float

    @classmethod
    def from_step(cls, step: StepFunction) -> "PiecewiseCumHaz":
        if step.jumps.size == 0:
            raise ValueError("cumulative hazard has no jumps")
        knots = np.concatenate(([0.0], step.jumps))
        values = np.concatenate(([0.0], step.values))
        return cls(knots, values, float(values[-1] / knots[-1]))

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        inside = np.interp(s, self.knots, self.values)
        return np.where(s > self.knots[-1], self.values[-1] + self.tail_rate * (s - self.knots[-1]), inside)

    def inverse(self, h):
        h = np.asarray(h, dtype=float)
        inside = np.interp(h, self.values, self.knots)
        return np.where(h > self.values[-1], self.knots[-1] + (h - self.values[-1]) / self.tail_rate, inside)


def sample_from_distribution(dist: StepFunction, rng, shape) -> np.ndarray:
    """Draw from a (possibly defective) discrete distribution; residual mass is +inf."""
    u = rng.random(shape)
    if dist.jumps.size == 0:
        return np.full(shape, np.inf)
    idx = np.searchsorted(dist.values, u, side="right")
    out = np.full(shape, np.inf)
    ok = idx < dist.jumps.size
    out[ok] = dist.jumps[idx[ok]]
    return out


@dataclass(frozen=True)
class HybridModel:
    """Nuisance quantities fixed at their estimates from the observed trial."""

    observed: SequentialOutcome
    fit: CoxFit
    cumhaz: PiecewiseCumHaz
    censoring: StepFunction
    n: int
    allocation: float
    entry_sampler: Callable
    analysis_times: tuple[float, ...]
    boundary: Example18Boundary = EXAMPLE_18

    @property
    def beta_hat(self) -> float:
        return self.fit.beta


def fit_hybrid_model(data: TrialData, observed: SequentialOutcome, analysis_times: Sequence[float],
                     boundary: Example18Boundary = EXAMPLE_18, accrual=None, n: int | None = None,
                     allocation: float | None = None) -> HybridModel:
    """Estimate beta, the Breslow baseline and the censoring law at the stop time.

    ``accrual`` (an object with ``sample(rng, shape)``) regenerates entry
    times from the design; without it entry times are resampled from those
    observed by the stop time.
    """
    snap = snapshot(data, observed.stop_time)
    fit = fit_cox(snap)
    cumhaz = PiecewiseCumHaz.from_step(breslow_cumhaz(snap, fit.beta))
    entered = snap.follow_up > 0
    wd = snap.withdrawn()
    censoring = _product_limit(snap.observed[entered], wd[entered])
    if accrual is None:
        pool = np.asarray(data.entry[entered], dtype=float)

        def entry_sampler(rng, shape):
            return rng.choice(pool, size=shape, replace=True)
    else:
        def entry_sampler(rng, shape):
            return accrual.sample(rng, shape)

    return HybridModel(
        observed, fit, cumhaz, censoring,
        data.n if n is None else int(n),
        float(np.mean(data.is_x)) if allocation is None else float(allocation),
        entry_sampler, tuple(float(t) for t in analysis_times), boundary,
    )


def batch_cox_score_info(obs: np.ndarray, ev: np.ndarray, z: np.ndarray):
    """Row-wise Cox score and information at beta = 0 for (B, n) arrays."""
    B, n = obs.shape
    order = np.argsort(obs, axis=1, kind="stable")
    o = np.take_along_axis(obs, order, axis=1)
    zs = np.take_along_axis(z, order, axis=1)
    es = np.take_along_axis(ev, order, axis=1)
    cnt = np.arange(n, 0, -1, dtype=float)
    sz = np.cumsum(zs[:, ::-1], axis=1)[:, ::-1]
    sz2 = np.cumsum((zs * zs)[:, ::-1], axis=1)[:, ::-1]
    start = np.zeros((B, n), dtype=np.int64)
    start[:, 1:] = np.where(o[:, 1:] != o[:, :-1], np.arange(1, n), 0)
    first = np.maximum.accumulate(start, axis=1)
    c = cnt[first]
    mean = np.take_along_axis(sz, first, axis=1) / c
    var = np.maximum(np.take_along_axis(sz2, first, axis=1) / c - mean * mean, 0.0)
    score = np.where(es, zs - mean, 0.0).sum(axis=1)
    info = np.where(es, var, 0.0).sum(axis=1)
    return score, info


@dataclass
class SimulatedBatch:
    beta: float
    S: np.ndarray  # (B, k)
    V: np.ndarray
    stop: np.ndarray  # 0-based stop index
    reject: np.ndarray
    z_events: np.ndarray  # (B, k): sum of z over events seen at each analysis
    z_levels: np.ndarray
    cumhaz_by_level: np.ndarray  # (B, k, L): sum of cumhaz(observed) per covariate level

    def psi(self, statistic="estimate"):
        with np.errstate(invalid="ignore", divide="ignore"):
            if statistic == "estimate":
                return np.where(self.V > 0, self.S / np.where(self.V > 0, self.V, 1.0), 0.0)
            return np.where(self.V > 0, self.S / np.sqrt(np.where(self.V > 0, self.V, 1.0)), 0.0)


def simulate_batch(model: HybridModel, beta: float, B: int, rng: np.random.Generator) -> SimulatedBatch:
    """B trials from the proportional hazards model with the fixed nuisance estimates."""
    n = model.n
    entry = model.entry_sampler(rng, (B, n))
    z = (rng.random((B, n)) < model.allocation).astype(float)
    e = rng.standard_exponential((B, n))
    surv = model.cumhaz.inverse(e * np.exp(-beta * z))
    wd = sample_from_distribution(model.censoring, rng, (B, n))
    k = len(model.analysis_times)
    levels = np.unique(z)
    S = np.zeros((B, k))
    V = np.zeros((B, k))
    ze = np.zeros((B, k))
    lam = np.zeros((B, k, levels.size))
    cens = np.minimum(wd, surv)
    for j, t in enumerate(model.analysis_times):
        follow = np.maximum(t - entry, 0.0)
        obs = np.minimum(cens, follow)
        ev = (surv <= np.minimum(wd, follow)) & (follow > 0)
        S[:, j], V[:, j] = batch_cox_score_info(obs, ev, z)
        ze[:, j] = np.where(ev, z, 0.0).sum(axis=1)
        ch = model.cumhaz(obs)
        for li, lv in enumerate(levels):
            lam[:, j, li] = np.where(z == lv, ch, 0.0).sum(axis=1)
    stop, reject = model.boundary.batch(S, V)
    return SimulatedBatch(beta, S, V, stop, reject, ze, levels, lam)


def _comparison_index(batch: SimulatedBatch, observed: SequentialOutcome) -> np.ndarray:
    return np.minimum(batch.stop, observed.stop_index - 1)


def _exceeds(batch: SimulatedBatch, observed: SequentialOutcome, statistic: str) -> np.ndarray:
    psi_obs = psi_path(observed, statistic)
    m = _comparison_index(batch, observed)
    psi_rep = batch.psi(statistic)[np.arange(batch.S.shape[0]), m]
    return psi_rep > psi_obs[m]


def log_likelihood_ratio(batch: SimulatedBatch, beta: float, at: np.ndarray | None = None) -> np.ndarray:
    """log L(beta)/L(beta_sim) of each replicate's data up to analysis ``at``.

    ``at`` (0-based, one per replicate) defaults to the replicate's own stop.
    Any stopping index works for an event it determines; the earliest such
    index gives the least variable ratio.
    """
    rows = np.arange(batch.S.shape[0])
    at = batch.stop if at is None else np.asarray(at)
    b0 = batch.beta
    d = np.exp(beta * batch.z_levels) - np.exp(b0 * batch.z_levels)
    return (beta - b0) * batch.z_events[rows, at] - batch.cumhaz_by_level[rows, at] @ d


@dataclass(frozen=True)
class HybridConfig:
    B: int = 2000
    seed: int = 0
    stream: tuple[int, ...] = ()
    mode: str = "importance"
    ordering: OrderingScheme = field(default_factory=OrderingScheme)
    bracket_se: float = 5.0
    tol: float = 1e-4
    normalize: bool = True
    scan_steps: int = 20

    def __post_init__(self):
        if self.B < 1:
            raise ValueError("B must be >= 1")
        if self.mode not in ("importance", "direct"):
            raise ValueError("mode must be 'importance' or 'direct'")
        if self.ordering.kind != "psi-path":
            raise ValueError("hybrid resampling uses the psi-path ordering")

    def rng(self) -> np.random.Generator:
        return replicate_rng(self.seed, *self.stream)


@dataclass(frozen=True)
class PHatValue:
    value: float
    se: float
    excluded: int = 0
    ess: float = math.nan  # effective sample size of the likelihood-ratio weights


class HybridPValue:
    """p_hat(beta) = P_beta{(tau, Psi) > observed} under the nuisance estimates.

    In importance mode one batch is simulated at beta_hat and reweighted by
    likelihood ratios; in direct mode each beta gets a fresh batch from the
    same stream.
    """

    def __init__(self, model: HybridModel, cfg: HybridConfig):
        self.model = model
        self.cfg = cfg
        self._base = None

    def batch(self, beta: float) -> SimulatedBatch:
        return simulate_batch(self.model, beta, self.cfg.B, self.cfg.rng())

    @property
    def base(self) -> SimulatedBatch:
        if self._base is None:
            self._base = self.batch(self.model.beta_hat)
        return self._base

    def evaluate(self, beta: float, mode: str | None = None) -> PHatValue:
        mode = mode or self.cfg.mode
        stat = self.cfg.ordering.statistic
        if mode == "direct":
            ind = _exceeds(self.batch(beta), self.model.observed, stat).astype(float)
            se = float(ind.std(ddof=1) / math.sqrt(ind.size)) if ind.size > 1 else math.nan
            return PHatValue(float(ind.mean()), se, 0, float(ind.size))
        base = self.base
        ind = _exceeds(base, self.model.observed, stat)
        with np.errstate(over="ignore", invalid="ignore"):
            # the event {replicate > observed} is settled at the earlier stop
            log_lr = log_likelihood_ratio(base, beta, _comparison_index(base, self.model.observed))
        ok = np.isfinite(log_lr)
        lr = np.exp(log_lr[ok] - log_lr[ok].max()) if ok.any() else np.zeros(0)
        if lr.size == 0:
            return PHatValue(math.nan, math.nan, int(ind.size))
        hit = ind[ok]
        ess = float(lr.sum() ** 2 / np.sum(lr * lr))
        if self.cfg.normalize:
            # weighted fraction: sum w I / sum w, with a delta-method SE
            value = math.fsum(lr[hit]) / math.fsum(lr)
            w = lr / lr.sum()
            se = float(math.sqrt(np.sum(w * w * (hit - value) ** 2)))
        else:
            vals = np.where(hit, lr, 0.0) * math.exp(log_lr[ok].max())
            value = float(vals.mean())
            se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else math.nan
        return PHatValue(value, se, int(np.count_nonzero(~ok)), ess)

    def __call__(self, beta: float) -> float:
        return self.evaluate(beta).value


def p_hat(beta: float, model: HybridModel, cfg: HybridConfig) -> float:
    return HybridPValue(model, cfg)(beta)


@dataclass
class HybridInterval:
    beta_hat: float
    lower: float
    upper: float
    alpha: float
    mode: str
    B: int
    trace: list[tuple[float, float]]
    excluded: int = 0

    def to_dict(self) -> dict:
        return {
            "beta_hat": self.beta_hat,
            "interval": [self.lower, self.upper],
            "alpha": self.alpha,
            "mode": self.mode,
            "B": self.B,
            "diagnostics": {"trace": [{"beta": b, "p_hat": p} for b, p in self.trace],
                            "excluded_replicates": self.excluded},
        }


def _solve_monotone(f, target, start, edge, tol, trace, steps=1):
    """Root of f(beta) = target between ``start`` and ``edge``.

    The bracket is scanned from ``start`` towards ``edge`` in ``steps`` equal
    pieces; bisection runs on the first piece showing a sign change, so Monte
    Carlo wiggles far from ``start`` cannot hide the nearest crossing.
    """
    grid = np.linspace(start, edge, steps + 1)
    prev_b, prev_f = grid[0], f(grid[0])
    trace.append((float(prev_b), prev_f))
    for b in grid[1:]:
        fb = f(b)
        trace.append((float(b), fb))
        if (prev_f - target) * (fb - target) <= 0:
            break
        prev_b, prev_f = b, fb
    else:
        raise ValueError(f"no crossing of p_hat = {target} in [{min(start, edge):.4g}, {max(start, edge):.4g}]: "
                         f"p_hat = {trace[-len(grid)][1]:.4g} at {start:.4g}, {prev_f:.4g} at {edge:.4g}")
    lo, hi, flo = prev_b, b, prev_f
    while abs(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        trace.append((float(mid), fm))
        if (fm - target) * (flo - target) > 0:
            lo, flo = mid, fm
        else:
            hi = mid
    return float(0.5 * (lo + hi))


def hybrid_confidence_set(model: HybridModel, alpha: float, cfg: HybridConfig) -> HybridInterval:
    """The set {beta : alpha < p_hat(beta) < 1 - alpha}, solved by bisection."""
    pv = HybridPValue(model, cfg)
    bh, se = model.beta_hat, model.fit.se
    width = cfg.bracket_se * (se if math.isfinite(se) else 1.0)
    trace: list[tuple[float, float]] = []
    steps = cfg.scan_steps if cfg.mode == "importance" else 1
    lo = _solve_monotone(pv, alpha, bh, bh - width, cfg.tol, trace, steps)
    hi = _solve_monotone(pv, 1 - alpha, bh, bh + width, cfg.tol, trace, steps)
    excluded = pv.evaluate(bh).excluded if cfg.mode == "importance" else 0
    return HybridInterval(bh, lo, hi, alpha, cfg.mode, cfg.B, sorted(trace), excluded)


# -- space-time Brownian approximation with Siegmund's ordering -----------------


def _monitored(path, upto):
    """Indices with positive, strictly increasing information; the last is kept."""
    keep = []
    for j in range(upto - 1):
        v = path[j].V
        if v > 0 and (not keep or v > path[keep[-1]].V):
            keep.append(j)
    last = upto - 1
    while keep and path[keep[-1]].V >= path[last].V:
        keep.pop()
    return keep + [last]


def brownian_siegmund_pvalue(outcome: SequentialOutcome, beta: float,
                             boundary: Example18Boundary = EXAMPLE_18, n_nodes: int = be.N_NODES,
                             monitoring: str = "discrete", step: float = 0.25) -> float:
    """P_beta{(T, S_T) > observed} when S is Brownian motion with drift beta
    in information time.

    Equals the upper exits before the observed stop plus the mass that
    survives to it and lands above the observed score.

    Args:
        monitoring: ``"discrete"`` checks the boundary at the observed
            information levels. ``"continuous"`` checks it everywhere on
            [min_info, V_tau], using a grid of spacing ``step`` with the
            boundary pulled in by 0.583 * sqrt(step) (the usual overshoot
            correction).
    """
    if monitoring == "continuous":
        return _continuous_pvalue(outcome, beta, boundary, step)
    if monitoring != "discrete":
        raise ValueError(f"unknown monitoring {monitoring!r}")
    idx = _monitored(outcome.path, outcome.stop_index)
    if outcome.path[idx[-1]].V <= 0:
        return 0.5
    info = np.array([outcome.path[j].V for j in idx])
    lower = np.empty(info.size)
    upper = np.empty(info.size)
    for i, v in enumerate(info[:-1]):
        b = boundary.interim * math.sqrt(v) if v >= boundary.min_info else math.inf
        lower[i], upper[i] = -b, b
    lower[-1], upper[-1] = -math.inf, outcome.stopped.S
    ups, _ = be.boundary_exits(info, lower, upper, beta, n_nodes)
    return min(max(math.fsum(ups), 0.0), 1.0)


def _continuous_pvalue(outcome, beta, boundary, step, n_nodes=128):
    v_obs, s_obs = outcome.stopped.V, outcome.stopped.S
    if v_obs <= 0:
        return 0.5
    if v_obs <= boundary.min_info:
        return float(ndtr((beta * v_obs - s_obs) / math.sqrt(v_obs)))
    k = max(int(math.ceil((v_obs - boundary.min_info) / step)), 1)
    grid = np.linspace(boundary.min_info, v_obs, k + 1)
    b = boundary.interim * np.sqrt(grid) - 0.583 * math.sqrt(grid[1] - grid[0])
    lower, upper = -b, b.copy()
    lower[-1], upper[-1] = -math.inf, s_obs
    ups, _ = be.boundary_exits(grid, lower, upper, beta, n_nodes)
    return min(max(math.fsum(ups), 0.0), 1.0)


def siegmund_scheme(outcome: SequentialOutcome, boundary: Example18Boundary = EXAMPLE_18) -> OrderingScheme:
    """Siegmund ordering for Example-18 style rules on the S scale of ``outcome``'s path."""
    lo, up = [], []
    for p in outcome.path:
        b = boundary.interim * math.sqrt(p.V) if p.V >= boundary.min_info else math.inf
        lo.append(-b)
        up.append(b)
    return OrderingScheme("siegmund", lower=tuple(lo), upper=tuple(up))


def brownian_siegmund_interval(outcome: SequentialOutcome, alpha: float,
                               boundary: Example18Boundary = EXAMPLE_18, width: float = 3.0,
                               tol: float = 1e-6) -> tuple[float, float]:
    """Score-based confidence interval {beta : alpha < p(beta) < 1 - alpha}."""
    v = outcome.stopped.V
    center = outcome.stopped.S / v if v > 0 else 0.0
    f = lambda b: brownian_siegmund_pvalue(outcome, b, boundary)
    trace: list = []
    lo = _solve_monotone(f, alpha, center - width, center + width, tol, trace)
    hi = _solve_monotone(f, 1 - alpha, center - width, center + width, tol, trace)
    return lo, hi


# -- reproduction studies ----------------------------------------------------------

TABLE1_LEVELS = (0.005, 0.01, 0.025, 0.05, 0.1)


@dataclass(frozen=True)
class Table1Config:
    m: int = 30
    n: int = 25
    B: int = 500
    macro: int = 500
    median: float = 3.0
    levels: tuple[float, ...] = TABLE1_LEVELS


def table1_study(cfg: Table1Config, seed: int) -> list[dict]:
    """Direct and tilted bootstrap estimates of P(U* <= x | X, Y) at normal points.

    For each macro-replication fresh exponential samples are drawn, and for
    each level the tail point x is set so that x_tilde is the level's normal
    quantile. Columns mirror the table: mean and spread over replications of
    each estimator.
    """
    scale = cfg.median / math.log(2.0)
    est = np.zeros((cfg.macro, len(cfg.levels), 2))
    for r in range(cfg.macro):
        rng = replicate_rng(seed, r)
        x = rng.exponential(scale, cfg.m)
        y = rng.exponential(scale, cfg.n)
        u = y_scores(x, y)
        sd = math.sqrt(float(np.sum((u - u.mean()) ** 2)))
        for li, level in enumerate(cfg.levels):
            xp = cfg.n * u.mean() + float(ndtri(level)) * sd
            w_opt = optimal_weights(x, y, xp)
            est[r, li, 0] = importance_bootstrap_tail(x, y, xp, cfg.B, uniform_weights(x, y), replicate_rng(seed, r, li, 0)).estimate
            est[r, li, 1] = importance_bootstrap_tail(x, y, xp, cfg.B, w_opt, replicate_rng(seed, r, li, 1)).estimate
    rows = []
    for li, level in enumerate(cfg.levels):
        d, i = est[:, li, 0], est[:, li, 1]
        rows.append({"level": level, "direct_mean": float(d.mean()), "direct_sd": float(d.std(ddof=1)),
                     "importance_mean": float(i.mean()), "importance_sd": float(i.std(ddof=1))})
    return rows


@dataclass(frozen=True)
class Example2Config:
    n: int = 350
    accrual_years: float = 3.0
    analysis_times: tuple[float, ...] = tuple(1.0 + 0.5 * j for j in range(10))
    baseline_rate: float = 0.3
    alpha: float = 0.05
    B: int = 2000
    outer: int = 2000
    mode: str = "importance"
    entry: str = "design"
    boundary: Example18Boundary = EXAMPLE_18

    def scenario(self, beta: float):
        from .trial_sim import Exponential, ProportionalHazards, Scenario, UniformAccrual

        base = Exponential(self.baseline_rate)
        return Scenario(self.n, UniformAccrual(self.accrual_years), ProportionalHazards(base, beta), base,
                        self.analysis_times)


def example2_replicate(cfg: Example2Config, beta: float, seed: int, key: tuple[int, ...]) -> dict:
    """One outer replication: simulate a trial, then p-values at the true beta."""
    from .trial_sim import TestSpec, UniformAccrual, generate_trial, run_test

    sc = cfg.scenario(beta)
    data = generate_trial(sc, replicate_rng(seed, *key))
    spec = TestSpec("cox", boundary=cfg.boundary, alpha=cfg.alpha)
    outcome = run_test(data, spec, cfg.analysis_times)
    accrual = UniformAccrual(cfg.accrual_years) if cfg.entry == "design" else None
    model = fit_hybrid_model(data, outcome, cfg.analysis_times, cfg.boundary, accrual=accrual,
                             n=cfg.n, allocation=0.5 if cfg.entry == "design" else None)
    hcfg = HybridConfig(B=cfg.B, seed=seed, stream=key + (1,), mode=cfg.mode)
    ph = HybridPValue(model, hcfg).evaluate(beta)
    p_bm = brownian_siegmund_pvalue(outcome, beta, cfg.boundary)
    return {"stop_index": outcome.stop_index, "S": outcome.stopped.S, "V": outcome.stopped.V,
            "beta_hat": model.beta_hat, "p_hybrid": ph.value, "p_brownian": p_bm}


def coverage_errors(p_values, alpha: float) -> tuple[float, float]:
    """Lower error: true beta below the interval (p <= alpha); upper: p >= 1 - alpha."""
    p = np.asarray(p_values, dtype=float)
    return float(np.mean(p <= alpha)), float(np.mean(p >= 1 - alpha))


def example2_study(cfg: Example2Config, beta: float, seed: int, beta_index: int = 0,
                   progress: Callable[[int], None] | None = None) -> dict:
    rows = []
    for r in range(cfg.outer):
        rows.append(example2_replicate(cfg, beta, seed, (beta_index, r)))
        if progress is not None:
            progress(r)
    hl, hu = coverage_errors([r["p_hybrid"] for r in rows], cfg.alpha)
    bl, bu = coverage_errors([r["p_brownian"] for r in rows], cfg.alpha)
    return {"beta": beta, "outer": cfg.outer, "B": cfg.B, "hybrid_lower": hl, "hybrid_upper": hu,
            "brownian_lower": bl, "brownian_upper": bu, "replicates": rows}
