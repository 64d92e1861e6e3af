"""Synthetic time-sequential trials and their operating characteristics.

Randomness follows a counter-based contract: replicate ``r`` of a run with
master seed ``s`` draws from a Philox stream keyed by ``(s, r)``, so results
do not depend on execution order or on the number of workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property, lru_cache
from typing import Sequence

import numpy as np

from . import boundary_engine as be
from .rank_stats import LOGRANK, WeightFunction, cox_score_info, parse_weight, rank_statistic, variance_estimate
from .survival_core import TrialData, snapshot


def replicate_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent Philox stream for replicate ``key`` under master ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


# -- distributions ----------------------------------------------------------


@dataclass(frozen=True)
class Exponential:
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("exponential rate must be positive")

    def cumhaz(self, s):
        return self.rate * np.asarray(s, dtype=float)

    def inverse_cumhaz(self, h):
        return np.asarray(h, dtype=float) / self.rate

    def to_dict(self):
        return {"kind": "exponential", "rate": self.rate}


@dataclass(frozen=True)
class Weibull:
    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError("weibull parameters must be positive")

    def cumhaz(self, s):
        return (np.asarray(s, dtype=float) / self.scale) ** self.shape

    def inverse_cumhaz(self, h):
        return self.scale * np.asarray(h, dtype=float) ** (1.0 / self.shape)

    def to_dict(self):
        return {"kind": "weibull", "shape": self.shape, "scale": self.scale}


@dataclass(frozen=True)
class ProportionalHazards:
    baseline: object
    log_hr: float

    def cumhaz(self, s):
        return math.exp(self.log_hr) * self.baseline.cumhaz(s)

    def inverse_cumhaz(self, h):
        return self.baseline.inverse_cumhaz(np.asarray(h, dtype=float) * math.exp(-self.log_hr))

    def to_dict(self):
        return {"kind": "proportional-hazards", "baseline": self.baseline.to_dict(), "log_hr": self.log_hr}


def sample_times(dist, rng: np.random.Generator, size: int) -> np.ndarray:
    return np.asarray(dist.inverse_cumhaz(rng.standard_exponential(size)), dtype=float)


def dist_from_dict(d: dict | None):
    if d is None or d.get("kind") == "none":
        return None
    kind = d["kind"]
    if kind == "exponential":
        return Exponential(float(d["rate"]))
    if kind == "weibull":
        return Weibull(float(d["shape"]), float(d["scale"]))
    if kind == "proportional-hazards":
        return ProportionalHazards(dist_from_dict(d["baseline"]), float(d["log_hr"]))
    raise ValueError(f"unknown distribution kind {kind!r}")


@dataclass(frozen=True)
class UniformAccrual:
    length: float

    def sample(self, rng, n):
        return rng.uniform(0.0, self.length, n)

    def to_dict(self):
        return {"kind": "uniform", "length": self.length}


@dataclass(frozen=True)
class PoissonAccrual:
    rate: float

    def sample(self, rng, n):
        return np.cumsum(rng.exponential(1.0 / self.rate, n), axis=-1)

    def to_dict(self):
        return {"kind": "poisson", "rate": self.rate}


@dataclass(frozen=True)
class TableAccrual:
    times: tuple[float, ...]

    def sample(self, rng, n):
        t = np.asarray(self.times, dtype=float)
        if t.size == n:
            return t.copy()
        return rng.choice(t, size=n, replace=True)

    def to_dict(self):
        return {"kind": "table", "times": list(self.times)}


def accrual_from_dict(d: dict):
    kind = d["kind"]
    if kind == "uniform":
        return UniformAccrual(float(d["length"]))
    if kind in ("poisson", "poisson-rate"):
        return PoissonAccrual(float(d["rate"]))
    if kind == "table":
        return TableAccrual(tuple(float(x) for x in d["times"]))
    raise ValueError(f"unknown accrual kind {kind!r}")


# -- scenario and test specification ----------------------------------------


@dataclass(frozen=True)
class Scenario:
    n: int
    accrual: object
    survival_x: object
    survival_y: object
    analysis_times: tuple[float, ...]
    allocation: float = 0.5
    withdrawal: object = None

    def __post_init__(self):
        object.__setattr__(self, "analysis_times", tuple(float(t) for t in self.analysis_times))
        if self.n < 2:
            raise ValueError("a scenario needs n >= 2")
        if not 0 < self.allocation < 1:
            raise ValueError("allocation must be in (0, 1)")
        t = self.analysis_times
        if not t or any(b <= a for a, b in zip(t, t[1:])) or t[0] <= 0:
            raise ValueError("analysis times must be positive and strictly increasing")

    @property
    def horizon(self) -> float:
        return self.analysis_times[-1]

    @property
    def k(self) -> int:
        return len(self.analysis_times)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "allocation": self.allocation,
            "accrual": self.accrual.to_dict(),
            "survival_x": self.survival_x.to_dict(),
            "survival_y": self.survival_y.to_dict(),
            "withdrawal": None if self.withdrawal is None else self.withdrawal.to_dict(),
            "analysis_times": list(self.analysis_times),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        times = d.get("analysis_times")
        if times is None:
            raise ValueError("scenario.analysis_times is required")
        if "horizon" in d and abs(float(d["horizon"]) - float(times[-1])) > 1e-12:
            raise ValueError("scenario.horizon must equal the last analysis time")
        sy = dist_from_dict(d["survival_y"])
        sx = dist_from_dict(d["survival_x"]) if "survival_x" in d else sy
        return cls(
            int(d["n"]),
            accrual_from_dict(d["accrual"]),
            sx,
            sy,
            tuple(times),
            float(d.get("allocation", 0.5)),
            dist_from_dict(d.get("withdrawal")),
        )


def generate_trial(sc: Scenario, rng: np.random.Generator) -> TrialData:
    """Draw one trial. Draw order is fixed: entry, arm, survival, withdrawal."""
    n = sc.n
    entry = sc.accrual.sample(rng, n)
    is_x = rng.random(n) < sc.allocation
    e = rng.standard_exponential(n)
    surv = np.where(is_x, sc.survival_x.inverse_cumhaz(e), sc.survival_y.inverse_cumhaz(e))
    if sc.withdrawal is None:
        wd = np.full(n, np.inf)
    else:
        wd = sample_times(sc.withdrawal, rng, n)
    return TrialData.from_arrays(entry, surv, wd, is_x, is_x.astype(float))


# -- boundaries -------------------------------------------------------------


@dataclass(frozen=True)
class PathPoint:
    time: float
    S: float
    V: float
    events: int
    skipped: bool = False

    @property
    def Z(self) -> float:
        return self.S / math.sqrt(self.V) if self.V > 0 else 0.0

    @property
    def estimate(self) -> float:
        return self.S / self.V if self.V > 0 else 0.0


@dataclass(frozen=True)
class GridBoundary:
    """Two-sided standardized thresholds, one per analysis."""

    thresholds: tuple[float, ...]

    def check(self, j: int, times: Sequence[float], path: Sequence[PathPoint], alpha: float):
        k = len(times)
        p = path[-1]
        if p.skipped:
            return "accept" if j == k - 1 else None
        if abs(p.Z) >= self.thresholds[j]:
            return "reject"
        return "accept" if j == k - 1 else None

    def to_dict(self):
        return {"kind": "grid", "thresholds": [None if math.isinf(d) else d for d in self.thresholds]}


@dataclass(frozen=True)
class SpendingBoundary:
    """Slud-Wei thresholds from an error-spending function at planned fractions."""

    function: be.SpendingFunction
    fractions: tuple[float, ...] | None = None

    def thresholds(self, times: Sequence[float]) -> tuple[float, ...]:
        v = self.fractions or tuple(t / times[-1] for t in times)
        if len(v) != len(times):
            raise ValueError("one planned information fraction per analysis is required")
        return _spending_thresholds(self.function, tuple(v))

    def check(self, j, times, path, alpha):
        k = len(times)
        p = path[-1]
        if not p.skipped and abs(p.Z) >= self.thresholds(times)[j]:
            return "reject"
        return "accept" if j == k - 1 else None

    def to_dict(self):
        return {"kind": "spending", **self.function.to_dict(), "fractions": self.fractions}


@dataclass(frozen=True)
class HaybittlePetoBoundary:
    """Constant interim threshold b and terminal c solved on the observed information."""

    epsilon: float = 0.1

    def check(self, j, times, path, alpha):
        k = len(times)
        p = path[-1]
        b = be.equal_info_b(k, alpha, self.epsilon)
        if j < k - 1:
            if not p.skipped and abs(p.Z) >= b:
                return "reject"
            return None
        if p.skipped:
            return "accept"
        c = self.terminal(path, alpha)
        return "reject" if abs(p.Z) >= c else "accept"

    def terminal(self, path, alpha):
        k = len(path)
        b = be.equal_info_b(k, alpha, self.epsilon)
        info = _monitored_info(path)
        return be.terminal_threshold(info, b, alpha)

    def to_dict(self):
        return {"kind": "haybittle-peto", "epsilon": self.epsilon}


@lru_cache(maxsize=64)
def _spending_thresholds(sf, fractions):
    return be.spend_and_solve(sf, fractions).thresholds


def _monitored_info(path):
    """Strictly increasing information levels of the analyses actually monitored.

    The terminal analysis is always kept; an earlier level that it does not
    exceed is dropped.
    """
    info = []
    for p in path[:-1]:
        if not p.skipped and (not info or p.V > info[-1]):
            info.append(p.V)
    last = path[-1].V
    while info and info[-1] >= last:
        info.pop()
    return info + [last]


@dataclass(frozen=True)
class Example18Boundary:
    """Stop when V >= max_info, or V >= min_info and |Z| >= interim; final |Z| >= final."""

    max_info: float = 55.0
    min_info: float = 11.0
    interim: float = 2.85
    final: float = 2.05

    def check(self, j, times, path, alpha):
        k = len(times)
        p = path[-1]
        if p.V >= self.min_info and abs(p.Z) >= self.interim:
            return "reject"
        if p.V >= self.max_info or j == k - 1:
            return "reject" if p.V > 0 and abs(p.Z) >= self.final else "accept"
        return None

    def batch(self, S: np.ndarray, V: np.ndarray):
        """Vectorised stop index (0-based) and rejection flag for (B, k) paths."""
        with np.errstate(invalid="ignore", divide="ignore"):
            Z = np.where(V > 0, S / np.sqrt(np.where(V > 0, V, 1.0)), 0.0)
        k = S.shape[1]
        hit = (V >= self.min_info) & (np.abs(Z) >= self.interim)
        cap = V >= self.max_info
        cap[:, -1] = True
        stop_any = hit | cap
        idx = np.argmax(stop_any, axis=1)
        rows = np.arange(S.shape[0])
        reject = hit[rows, idx] | (np.abs(Z[rows, idx]) >= self.final)
        return idx, reject

    def to_dict(self):
        return {"kind": "example-18", "max_info": self.max_info, "min_info": self.min_info,
                "interim": self.interim, "final": self.final}


EXAMPLE_18 = Example18Boundary()


def boundary_from_dict(d: dict, alpha: float):
    kind = d["kind"]
    if kind == "grid":
        return GridBoundary(tuple(math.inf if x is None else float(x) for x in d["thresholds"]))
    if kind == "spending":
        sf = be.SpendingFunction.from_dict(d, alpha=alpha)
        fr = d.get("fractions")
        return SpendingBoundary(sf, None if fr is None else tuple(float(x) for x in fr))
    if kind == "haybittle-peto":
        return HaybittlePetoBoundary(float(d.get("epsilon", 0.1)))
    if kind == "example-18":
        return Example18Boundary(**{k: float(v) for k, v in d.items() if k != "kind"})
    raise ValueError(f"unknown boundary kind {kind!r}")


@dataclass(frozen=True)
class TestSpec:
    statistic: str = "logrank"  # weight spec understood by parse_weight, or "cox"
    variance: str = "A"
    boundary: object = field(default_factory=HaybittlePetoBoundary)
    alpha: float = 0.05

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if self.variance not in ("A", "B", "C"):
            raise ValueError("variance variant must be A, B or C")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")
        if self.statistic != "cox":
            parse_weight(self.statistic)

    @cached_property
    def weight(self) -> WeightFunction | None:
        return None if self.statistic == "cox" else parse_weight(self.statistic)

    def to_dict(self):
        return {"statistic": self.statistic, "variance": self.variance,
                "boundary": self.boundary.to_dict(), "alpha": self.alpha}

    @classmethod
    def from_dict(cls, d: dict) -> "TestSpec":
        alpha = float(d.get("alpha", 0.05))
        return cls(d.get("statistic", "logrank"), d.get("variance", "A"),
                   boundary_from_dict(d.get("boundary", {"kind": "haybittle-peto"}), alpha), alpha)


# -- running a test ---------------------------------------------------------


@dataclass(frozen=True)
class SequentialOutcome:
    stop_index: int  # 1-based analysis at which the trial stopped
    path: tuple[PathPoint, ...]
    decision: str
    seed: tuple | None = None

    @property
    def stop_time(self) -> float:
        return self.path[self.stop_index - 1].time

    @property
    def stopped(self) -> PathPoint:
        return self.path[self.stop_index - 1]

    @property
    def reject(self) -> bool:
        return self.decision == "reject"


def compute_statistic(snap, spec: TestSpec) -> tuple[float, float]:
    if spec.statistic == "cox":
        return cox_score_info(snap)
    w = spec.weight
    return rank_statistic(snap, w), variance_estimate(snap, w, spec.variance)


def run_test(data: TrialData, spec: TestSpec, analysis_times: Sequence[float], seed=None,
             full_path: bool = False) -> SequentialOutcome:
    """Monitor ``data`` at each analysis time and apply the boundary in order.

    With ``full_path`` the statistic is still computed after stopping (the
    decision is unaffected); simulation studies use this to inspect the
    information path.
    """
    times = [float(t) for t in analysis_times]
    k = len(times)
    path: list[PathPoint] = []
    stop, decision = None, None
    for j, t in enumerate(times):
        snap = snapshot(data, t)
        if snap.n_x and snap.n_y:
            S, V = compute_statistic(snap, spec)
        else:
            S, V = 0.0, 0.0
        path.append(PathPoint(t, S, V, snap.n_events, skipped=not V > 0))
        if stop is None:
            action = spec.boundary.check(j, times, path, spec.alpha)
            if action is not None:
                stop, decision = j + 1, action
                if not full_path:
                    break
    return SequentialOutcome(stop, tuple(path), decision, seed)


def replay_path(boundary, times: Sequence[float], S: Sequence[float], V: Sequence[float],
                alpha: float = 0.05) -> tuple[int | None, str | None]:
    """Apply ``boundary`` to a given statistic path; returns (stop index, decision).

    The stop index is 1-based, and None when the supplied path ends before
    the boundary acts.
    """
    times = [float(t) for t in times]
    path: list[PathPoint] = []
    for j, (t, s, v) in enumerate(zip(times, S, V)):
        path.append(PathPoint(t, float(s), float(v), 0, skipped=not v > 0))
        action = boundary.check(j, times, path, alpha)
        if action is not None:
            return j + 1, action
    return None, None


# -- operating characteristics ----------------------------------------------


@dataclass
class OCReport:
    n_sims: int
    seed: int
    rejection_rate: float
    rejection_se: float
    expected_stop_time: float
    expected_events: float
    stage_histogram: list[int]
    outcomes: list[SequentialOutcome] = field(repr=False, default_factory=list)

    def to_dict(self, include_replicates: bool = False) -> dict:
        d = {
            "n_sims": self.n_sims,
            "seed": self.seed,
            "rejection_rate": self.rejection_rate,
            "rejection_se": self.rejection_se,
            "expected_stop_time": self.expected_stop_time,
            "expected_events": self.expected_events,
            "stage_histogram": self.stage_histogram,
        }
        if include_replicates:
            d["replicates"] = replicate_rows(self.outcomes)
        return d


def replicate_rows(outcomes: Sequence[SequentialOutcome]) -> list[dict]:
    rows = []
    for r, o in enumerate(outcomes):
        p = o.stopped
        rows.append({"replicate": r, "stop_index": o.stop_index, "stop_time": p.time,
                     "S": p.S, "V": p.V, "decision": o.decision})
    return rows


def _simulate_one(args):
    sc, spec, seed, r, full_path = args
    data = generate_trial(sc, replicate_rng(seed, r))
    return run_test(data, spec, sc.analysis_times, seed=(seed, r), full_path=full_path)


def _simulate_chunk(args):
    sc, spec, seed, lo, hi, full_path = args
    return [_simulate_one((sc, spec, seed, r, full_path)) for r in range(lo, hi)]


def simulate_outcomes(sc: Scenario, spec: TestSpec, n_sims: int, seed: int, workers: int = 1,
                      full_path: bool = False) -> list[SequentialOutcome]:
    if n_sims < 1:
        raise ValueError("n_sims must be >= 1")
    if workers <= 1:
        return _simulate_chunk((sc, spec, seed, 0, n_sims, full_path))
    edges = np.linspace(0, n_sims, workers * 4 + 1).astype(int)
    jobs = [(sc, spec, seed, int(a), int(b), full_path) for a, b in zip(edges, edges[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        chunks = list(ex.map(_simulate_chunk, jobs))
    return [o for c in chunks for o in c]


def summarize(outcomes: Sequence[SequentialOutcome], k: int, seed: int) -> OCReport:
    n = len(outcomes)
    rej = [1.0 if o.reject else 0.0 for o in outcomes]
    rate = math.fsum(rej) / n
    se = math.sqrt(rate * (1 - rate) / n)
    hist = [0] * k
    for o in outcomes:
        hist[o.stop_index - 1] += 1
    return OCReport(
        n, seed, rate, se,
        math.fsum(o.stop_time for o in outcomes) / n,
        math.fsum(o.stopped.events for o in outcomes) / n,
        hist, list(outcomes),
    )


def operating_characteristics(sc: Scenario, spec: TestSpec, n_sims: int, seed: int, workers: int = 1,
                              full_path: bool = False) -> OCReport:
    """Rejection rate, expected duration and events, and stop-stage histogram."""
    outcomes = simulate_outcomes(sc, spec, n_sims, seed, workers, full_path)
    return summarize(outcomes, sc.k, seed)


# -- sample size ------------------------------------------------------------


class SampleSizeError(RuntimeError):
    pass


@dataclass
class SampleSizeResult:
    n: int
    power: float
    se: float
    trace: list[dict]


def with_effect(sc: Scenario, n: int, log_hr: float) -> Scenario:
    """Template scenario with ``n`` subjects and X-arm hazard ratio exp(log_hr) vs Y."""
    return replace(sc, n=int(n), survival_x=ProportionalHazards(sc.survival_y, log_hr))


def sample_size_search(template: Scenario, spec: TestSpec, target_power: float, log_hr: float,
                       n_sims: int = 2000, seed: int = 0, n_min: int = 20, n_cap: int = 20000,
                       confirm_sims: int | None = 10000, workers: int = 1) -> SampleSizeResult:
    """Smallest n whose estimated power reaches ``target_power`` minus one SE.

    Probes double n from ``n_min`` until the target is met, then bisect.
    Every probe reuses the same replicate streams.
    """
    if not spec.alpha <= target_power < 1:
        raise ValueError("target power must be in [alpha, 1)")
    trace = []

    def probe(n, sims=n_sims):
        rep = operating_characteristics(with_effect(template, n, log_hr), spec, sims, seed, workers)
        trace.append({"n": n, "n_sims": sims, "power": rep.rejection_rate, "se": rep.rejection_se})
        return rep.rejection_rate >= target_power - rep.rejection_se, rep

    n = n_min
    ok, rep = probe(n)
    lo = None
    while not ok:
        lo = n
        if n >= n_cap:
            raise SampleSizeError(f"power {rep.rejection_rate:.4f} at the cap n={n_cap} is below {target_power}")
        n = min(2 * n, n_cap)
        ok, rep = probe(n)
    hi, hi_rep = n, rep
    if lo is not None:
        while hi - lo > max(1, int(0.01 * hi)):
            mid = (lo + hi) // 2
            ok, rep = probe(mid)
            if ok:
                hi, hi_rep = mid, rep
            else:
                lo = mid
    if confirm_sims and confirm_sims > n_sims:
        _, hi_rep = probe(hi, confirm_sims)
    return SampleSizeResult(hi, hi_rep.rejection_rate, hi_rep.rejection_se, trace)


def schoenfeld_n(log_hr: float, alpha: float, power: float, event_prob: float, allocation: float = 0.5) -> float:
    """Closed-form fixed-sample logrank sample size (two-sided alpha)."""
    z = be.z_quantile(alpha / 2) + be.z_quantile(1 - power)
    events = z * z / (allocation * (1 - allocation) * log_hr**2)
    return events / event_prob
