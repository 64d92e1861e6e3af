"""Group-sequential stopping boundaries for discretely monitored Brownian motion.

Exit probabilities are computed by the recursive numerical integration scheme
of Armitage, McPherson and Rowe: the sub-density of the not-yet-stopped
process is carried on a quadrature grid from one analysis to the next, and the
exit mass at each analysis is an exact Gaussian tail integral against it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri, xlogy

N_NODES = 512
SPAN_SD = 8.0
MAX_NODES = 4096
PROB_TOL = 1e-8
THRESH_TOL = 1e-7

SIDES = ("two-sided", "one-sided")


class InfeasibleDesign(ValueError):
    """The requested error allocation cannot be met."""


def _norm_sf(x):
    return ndtr(-x)


def z_quantile(p: float) -> float:
    """Upper-tail standard normal quantile: P(Z >= z) = p."""
    return float(-ndtri(p))


# -- core recursion ---------------------------------------------------------


@dataclass
class _State:
    nodes: np.ndarray
    mass: np.ndarray  # density times quadrature weight
    info: float


def _grid(lo, hi, center, sd, n_nodes):
    lo = max(lo, center - SPAN_SD * sd)
    hi = min(hi, center + SPAN_SD * sd)
    if not hi > lo:
        return None
    x = np.linspace(lo, hi, n_nodes)
    w = np.full(n_nodes, (hi - lo) / (n_nodes - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    return x, w


def _nodes_for(lo, hi, center, sd, next_step, n_nodes):
    # node spacing must resolve the next transition kernel
    width = min(hi, center + SPAN_SD * sd) - max(lo, center - SPAN_SD * sd)
    if next_step is not None and width > 0:
        need = int(math.ceil(width / (0.25 * math.sqrt(next_step)))) + 1
        n_nodes = max(n_nodes, min(need, MAX_NODES))
    return n_nodes


def _first_stage(a, lo, hi, drift, next_step, n_nodes):
    mu, sd = drift * a, math.sqrt(a)
    up = float(_norm_sf((hi - mu) / sd)) if math.isfinite(hi) else 0.0
    dn = float(ndtr((lo - mu) / sd)) if math.isfinite(lo) else 0.0
    g = _grid(lo, hi, mu, sd, _nodes_for(lo, hi, mu, sd, next_step, n_nodes))
    if g is None:
        return up, dn, _State(np.zeros(0), np.zeros(0), a)
    x, w = g
    dens = np.exp(-0.5 * ((x - mu) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
    return up, dn, _State(x, dens * w, a)


def _exits(state: _State, a, lo, hi, drift):
    step = a - state.info
    sd = math.sqrt(step)
    shift = state.nodes + drift * step
    up = float(np.dot(state.mass, _norm_sf((hi - shift) / sd))) if math.isfinite(hi) else 0.0
    dn = float(np.dot(state.mass, ndtr((lo - shift) / sd))) if math.isfinite(lo) else 0.0
    return up, dn


def _advance(state: _State, a, lo, hi, drift, next_step, n_nodes):
    up, dn = _exits(state, a, lo, hi, drift)
    step = a - state.info
    sd_step = math.sqrt(step)
    mu, sd = drift * a, math.sqrt(a)
    g = _grid(lo, hi, mu, sd, _nodes_for(lo, hi, mu, sd, next_step, n_nodes)) if state.mass.size else None
    if g is None:
        return up, dn, _State(np.zeros(0), np.zeros(0), a)
    y, w = g
    kern = np.subtract.outer(y, state.nodes + drift * step)
    np.multiply(kern, kern, out=kern)
    kern *= -0.5 / step
    np.exp(kern, out=kern)
    dens = kern @ state.mass / (sd_step * math.sqrt(2 * math.pi))
    return up, dn, _State(y, dens * w, a)


def _check_info(info):
    info = np.asarray(info, dtype=float)
    if info.ndim != 1 or info.size == 0:
        raise ValueError("information values must be a nonempty sequence")
    if info[0] <= 0 or np.any(np.diff(info) <= 0):
        raise ValueError("information values must be positive and strictly increasing")
    return info


def _propagate(info, lower, upper, drift, n_nodes, stop=None):
    """Run the recursion; returns per-stage (upper, lower) exits and final state."""
    k = len(info) if stop is None else stop
    ups, dns = np.zeros(k), np.zeros(k)
    state = None
    for j in range(k):
        nxt = info[j + 1] - info[j] if j + 1 < len(info) else None
        if j == 0:
            ups[j], dns[j], state = _first_stage(info[0], lower[0], upper[0], drift, nxt, n_nodes)
        else:
            ups[j], dns[j], state = _advance(state, info[j], lower[j], upper[j], drift, nxt, n_nodes)
    return ups, dns, state


def boundary_exits(info, lower, upper, drift: float = 0.0, n_nodes: int = N_NODES):
    """First-exit probabilities through arbitrary lower/upper boundaries.

    Boundaries are on the scale of the process W(a) itself (not standardized)
    and may be infinite. Returns ``(upper_exits, lower_exits)`` per analysis.
    """
    info = _check_info(info)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if lower.shape != info.shape or upper.shape != info.shape:
        raise ValueError("boundaries must match the information values")
    if np.any(lower >= upper):
        raise ValueError("lower boundary must lie below the upper boundary")
    ups, dns, _ = _propagate(info, lower, upper, drift, n_nodes)
    return ups, dns


# -- monitoring grids -------------------------------------------------------


@dataclass(frozen=True)
class MonitoringGrid:
    info: tuple[float, ...]
    thresholds: tuple[float, ...]
    sided: str = "two-sided"
    alpha: float | None = None
    spending: dict | None = None

    def __post_init__(self):
        object.__setattr__(self, "info", tuple(float(a) for a in self.info))
        object.__setattr__(self, "thresholds", tuple(float(d) for d in self.thresholds))
        _check_info(self.info)
        if len(self.thresholds) != len(self.info):
            raise ValueError("one threshold per analysis is required")
        if any(not d > 0 for d in self.thresholds):
            raise ValueError("thresholds must be positive (or +inf)")
        if self.sided not in SIDES:
            raise ValueError(f"sided must be one of {SIDES}")

    @property
    def k(self) -> int:
        return len(self.info)

    def bounds(self):
        a = np.asarray(self.info)
        up = np.asarray(self.thresholds) * np.sqrt(a)
        lo = -up if self.sided == "two-sided" else np.full_like(up, -np.inf)
        return lo, up

    def to_dict(self) -> dict:
        return {
            "analyses": [
                {"info": a, "threshold": (None if math.isinf(d) else d)} for a, d in zip(self.info, self.thresholds)
            ],
            "alpha": self.alpha,
            "sided": self.sided,
            "spending": self.spending,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MonitoringGrid":
        rows = d["analyses"]
        return cls(
            tuple(r["info"] for r in rows),
            tuple(math.inf if r.get("threshold") is None else r["threshold"] for r in rows),
            d.get("sided", "two-sided"),
            d.get("alpha"),
            d.get("spending"),
        )

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


@dataclass(frozen=True)
class CrossingResult:
    per_analysis: np.ndarray
    upper: np.ndarray
    lower: np.ndarray

    @property
    def total(self) -> float:
        return math.fsum(self.per_analysis)


def crossing_probability(grid: MonitoringGrid, drift: float = 0.0, n_nodes: int = N_NODES) -> CrossingResult:
    """First-exit probabilities of W with the given drift against the grid."""
    lo, up = grid.bounds()
    ups, dns = boundary_exits(grid.info, lo, up, drift, n_nodes)
    return CrossingResult(ups + dns, ups, dns)


# -- root finding -----------------------------------------------------------


def _solve_decreasing(f, target, lo=0.0, hi=4.0, ptol=PROB_TOL, xtol=THRESH_TOL, max_hi=60.0):
    """Bisection for f(x) = target with f decreasing; expands the upper bracket."""
    while f(hi) > target:
        if hi >= max_hi:
            raise InfeasibleDesign(f"no threshold below {max_hi} attains probability {target}")
        hi = min(2 * hi, max_hi)
    flo = f(lo)
    if flo < target:
        raise InfeasibleDesign(f"target probability {target} exceeds the attainable {flo}")
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm - target) < ptol * 1e-2:
            return mid
        if fm > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# -- error spending ---------------------------------------------------------

SPENDING_KINDS = ("obrien-fleming", "pocock", "power", "table")


@dataclass(frozen=True)
class SpendingFunction:
    kind: str
    alpha: float = 0.05
    theta: float = 1.0
    table: tuple[tuple[float, float], ...] | None = None
    sided: str = "two-sided"

    def __post_init__(self):
        if self.kind not in SPENDING_KINDS:
            raise ValueError(f"spending kind must be one of {SPENDING_KINDS}")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")
        if self.kind == "power" and self.theta <= 0:
            raise ValueError("power spending needs theta > 0")
        if self.kind == "table":
            v = [p[0] for p in self.table or ()]
            if not v or any(b <= a for a, b in zip(v, v[1:])):
                raise ValueError("spending table needs increasing information fractions")

    def __call__(self, v: float) -> float:
        v = min(max(float(v), 0.0), 1.0)
        if v == 0:
            return 0.0
        a = self.alpha
        if self.kind == "obrien-fleming":
            z = z_quantile(a / 2) if self.sided == "two-sided" else z_quantile(a)
            scale = 2.0 if self.sided == "two-sided" else 1.0
            return min(a, scale * float(_norm_sf(z / math.sqrt(v))))
        if self.kind == "pocock":
            return a * math.log1p((math.e - 1) * v)
        if self.kind == "power":
            return a * v**self.theta
        xs = [0.0] + [p[0] for p in self.table] + [1.0]
        ys = [0.0] + [p[1] for p in self.table] + [1.0]
        return a * float(np.interp(v, xs, np.maximum.accumulate(ys)))

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "alpha": self.alpha}
        if self.kind == "power":
            d["theta"] = self.theta
        if self.kind == "table":
            d["table"] = [list(p) for p in self.table]
        return d

    @classmethod
    def from_dict(cls, d: dict, alpha: float | None = None, sided: str = "two-sided") -> "SpendingFunction":
        table = d.get("table")
        return cls(
            d["kind"],
            alpha if alpha is not None else d.get("alpha", 0.05),
            d.get("theta", 1.0),
            None if table is None else tuple(tuple(p) for p in table),
            sided,
        )


def _stage_exit_fn(state, a, sided, drift):
    def total(d):
        hi = d * math.sqrt(a)
        lo = -hi if sided == "two-sided" else -math.inf
        if state is None:
            mu, sd = drift * a, math.sqrt(a)
            p = float(_norm_sf((hi - mu) / sd))
            return p + (float(ndtr((lo - mu) / sd)) if math.isfinite(lo) else 0.0)
        up, dn = _exits(state, a, lo, hi, drift)
        return up + dn

    return total


def spend_and_solve(sf: SpendingFunction, info: Sequence[float], n_nodes: int = N_NODES) -> MonitoringGrid:
    """Slud-Wei thresholds from an error-spending allocation."""
    info = _check_info(info)
    v = info / info[-1]
    cum = np.array([sf(x) for x in v])
    cum[-1] = sf(1.0)
    alloc = np.diff(np.concatenate(([0.0], cum)))
    thresholds = []
    state = None
    for j, a in enumerate(info):
        nxt = info[j + 1] - a if j + 1 < len(info) else None
        if alloc[j] <= 0:
            d = math.inf
        else:
            f = _stage_exit_fn(state, a, sf.sided, 0.0)
            try:
                d = _solve_decreasing(f, alloc[j], lo=1e-6)
            except InfeasibleDesign as exc:
                raise InfeasibleDesign(f"analysis {j + 1}: {exc}") from None
        thresholds.append(d)
        lo_b = -d * math.sqrt(a) if sf.sided == "two-sided" else -math.inf
        hi_b = d * math.sqrt(a)
        if j == 0:
            _, _, state = _first_stage(a, lo_b, hi_b, 0.0, nxt, n_nodes)
        else:
            _, _, state = _advance(state, a, lo_b, hi_b, 0.0, nxt, n_nodes)
    return MonitoringGrid(tuple(info), tuple(thresholds), sf.sided, sf.alpha, sf.to_dict())


# -- modified Haybittle-Peto ------------------------------------------------


def _interim_exit(info, b, n_nodes):
    k1 = len(info) - 1
    hi = b * np.sqrt(info[:k1])
    ups, dns, _ = _propagate(info[:k1], -hi, hi, 0.0, n_nodes)
    return math.fsum(ups) + math.fsum(dns)


def haybittle_peto_b(info, alpha: float, epsilon: float, n_nodes: int = N_NODES) -> float:
    """Interim threshold b with P0(exit at some interim analysis) = epsilon * alpha."""
    info = _check_info(info)
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must be in (0, 1)")
    if len(info) == 1:
        return math.inf
    return _solve_decreasing(lambda b: _interim_exit(info, b, n_nodes), epsilon * alpha, lo=1e-6)


def terminal_threshold(info, b: float, alpha: float, n_nodes: int = N_NODES) -> float:
    """c such that P0(interim exit through b, or |W(a_k)| >= c sqrt(a_k)) = alpha."""
    info = _check_info(info)
    k = len(info)
    if k == 1:
        return z_quantile(alpha / 2)
    hi = b * np.sqrt(info[: k - 1])
    ups, dns, state = _propagate(info, np.concatenate((-hi, [-np.inf])), np.concatenate((hi, [np.inf])), 0.0, n_nodes, stop=k - 1)
    spent = math.fsum(ups) + math.fsum(dns)
    if spent >= alpha:
        raise InfeasibleDesign(f"interim boundary already spends {spent:.6g} >= alpha")
    f = _stage_exit_fn(state, info[-1], "two-sided", 0.0)
    return _solve_decreasing(f, alpha - spent, lo=1e-6)


def haybittle_peto_thresholds(k: int, info, alpha: float = 0.05, epsilon: float = 0.1, n_nodes: int = N_NODES):
    """(b, c) for the modified Haybittle-Peto test on observed information values."""
    info = _check_info(info)
    if len(info) != k:
        raise ValueError(f"expected {k} information values, got {len(info)}")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must be in (0, 1)")
    if k == 1:
        return math.inf, z_quantile(alpha / 2)
    b = haybittle_peto_b(info, alpha, epsilon, n_nodes)
    return b, terminal_threshold(info, b, alpha, n_nodes)


@lru_cache(maxsize=128)
def equal_info_b(k: int, alpha: float, epsilon: float) -> float:
    """b for k equally spaced looks, the normal-increment design of the interim boundary."""
    return haybittle_peto_b(np.arange(1.0, k + 1), alpha, epsilon)


# -- exponential-family group sequential test --------------------------------

FAMILIES = ("normal-mean", "bernoulli", "exponential-rate")


def kl_information(theta: float, lam: float, family: str = "normal-mean") -> float:
    """Kullback-Leibler information I(theta, lambda) = E_theta log(f_theta / f_lambda)."""
    if family == "normal-mean":
        return 0.5 * (theta - lam) ** 2
    if family == "bernoulli":
        if not (0 <= theta <= 1 and 0 < lam < 1):
            raise ValueError("bernoulli needs theta in [0, 1] and lambda in (0, 1)")
        return float(xlogy(theta, theta / lam) + xlogy(1 - theta, (1 - theta) / (1 - lam)))
    if family == "exponential-rate":
        if not (theta > 0 and lam > 0):
            raise ValueError("exponential rates must be positive")
        return math.log(theta / lam) + lam / theta - 1.0
    raise ValueError(f"unknown family {family!r}")


def mle(total: float, n: int, family: str) -> float:
    mean = total / n
    if family in ("normal-mean", "bernoulli"):
        if family == "bernoulli" and not 0 <= mean <= 1:
            raise ValueError("bernoulli sample mean outside [0, 1]")
        return mean
    if family == "exponential-rate":
        return 1.0 / mean
    raise ValueError(f"unknown family {family!r}")


@dataclass(frozen=True)
class ExpFamilySpec:
    theta0: float
    theta_alt: float
    sizes: tuple[int, ...]
    alpha: float = 0.05
    alpha_tilde: float = 0.05
    family: str = "normal-mean"
    b: float | None = None
    b_tilde: float | None = None
    c: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(n) for n in self.sizes))
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        if not self.theta0 < self.theta_alt:
            raise ValueError("one-sided test needs theta0 < theta(M)")
        if any(b <= a for a, b in zip(self.sizes, self.sizes[1:])) or self.sizes[0] < 1:
            raise ValueError("group sizes must be positive and increasing")

    @property
    def M(self) -> int:
        return self.sizes[-1]

    def with_thresholds(self, b, b_tilde, c) -> "ExpFamilySpec":
        return ExpFamilySpec(self.theta0, self.theta_alt, self.sizes, self.alpha, self.alpha_tilde, self.family, b, b_tilde, c)


@dataclass(frozen=True)
class GroupTestDecision:
    action: str  # "reject" or "accept"
    analysis: int  # 1-based
    early: bool

    def __str__(self):
        return f"{self.action}-early({self.analysis})" if self.early else f"{self.action}-final"


def exp_family_group_test(spec: ExpFamilySpec, sums: Sequence[float]) -> GroupTestDecision:
    """Apply the modified Haybittle-Peto exponential-family test to cumulative sums."""
    if len(sums) < 1:
        raise ValueError("at least one analysis is required")
    if spec.c is None or spec.b is None or spec.b_tilde is None:
        raise ValueError("spec has no thresholds; see exp_family_thresholds")
    k = len(spec.sizes)
    for i, (n, s) in enumerate(zip(spec.sizes, sums), start=1):
        if i == k:
            return GroupTestDecision("reject" if s >= spec.c else "accept", k, False)
        th = mle(s, n, spec.family)
        if th > spec.theta0 and n * kl_information(th, spec.theta0, spec.family) >= spec.b:
            return GroupTestDecision("reject", i, True)
        if th < spec.theta_alt and n * kl_information(th, spec.theta_alt, spec.family) >= spec.b_tilde:
            return GroupTestDecision("accept", i, True)
    raise ValueError(f"test continues past the {len(sums)} supplied analyses; {k} are planned")


def _normal_bounds(spec: ExpFamilySpec, b, b_tilde):
    n = np.asarray(spec.sizes[:-1], dtype=float)
    up = np.sqrt(2 * b * n) if math.isfinite(b) else np.full(n.size, np.inf)
    lo = n * (spec.theta_alt - spec.theta0) - np.sqrt(2 * b_tilde * n) if math.isfinite(b_tilde) else np.full(n.size, -np.inf)
    return lo, up


def exp_family_thresholds(spec: ExpFamilySpec, epsilon: float = 1 / 3, epsilon_tilde: float | None = None,
                          n_nodes: int = N_NODES):
    """Calibrate (b, b_tilde, c) for the normal-mean family.

    Works on W(n) = S_n - n*theta0, a Brownian motion in n with drift 0 under
    theta0 and theta(M) - theta0 under the implied alternative.
    """
    if spec.family != "normal-mean":
        raise ValueError("threshold calibration is implemented for the normal-mean family")
    eps_t = epsilon if epsilon_tilde is None else epsilon_tilde
    if not (0 < epsilon < 1 and 0 < eps_t < 1):
        raise ValueError("epsilon must be in (0, 1)")
    info = np.asarray(spec.sizes, dtype=float)
    k = info.size
    M = spec.M
    delta = spec.theta_alt - spec.theta0
    if k == 1:
        return math.inf, math.inf, spec.theta0 * M + z_quantile(spec.alpha) * math.sqrt(M)
    interim = info[:-1]
    inf_v = np.full(k - 1, np.inf)

    def reject_early(b):
        ups, _ = boundary_exits(interim, -inf_v, np.sqrt(2 * b * interim), 0.0, n_nodes)
        return math.fsum(ups)

    def accept_early(bt):
        _, dns = boundary_exits(interim, interim * delta - np.sqrt(2 * bt * interim), inf_v, delta, n_nodes)
        return math.fsum(dns)

    # thresholds solved on the sqrt(2 b) scale, which is the standardized one
    r = _solve_decreasing(lambda x: reject_early(x * x / 2), epsilon * spec.alpha, lo=1e-6)
    rt = _solve_decreasing(lambda x: accept_early(x * x / 2), eps_t * spec.alpha_tilde, lo=1e-6)
    b, bt = r * r / 2, rt * rt / 2
    lo, up = _normal_bounds(spec, b, bt)
    ups, dns, state = _propagate(
        info, np.concatenate((lo, [-np.inf])), np.concatenate((up, [np.inf])), 0.0, n_nodes, stop=k - 1
    )
    spent = math.fsum(ups)
    if spent >= spec.alpha:
        raise InfeasibleDesign("interim rejection already exhausts alpha")
    a = info[-1]

    def final_reject(x):
        u, _ = _exits(state, a, -math.inf, x * math.sqrt(a), 0.0)
        return u

    x = _solve_decreasing(final_reject, spec.alpha - spent, lo=-10.0)
    return b, bt, spec.theta0 * M + x * math.sqrt(a)
