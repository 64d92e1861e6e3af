"""Time-sequential censored rank statistics and their moments."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate

from .survival_core import StepFunction, TrialSnapshot, pooled_product_limit

QUAD_TOL = 1e-10


class QuadratureError(RuntimeError):
    pass


def _phi_wilcoxon(u):
    return 2.0 * u - 1.0


def _phi_savage(u):
    return -math.log1p(-u) - 1.0


PHI_BUILTINS: dict[str, Callable[[float], float]] = {
    "wilcoxon": _phi_wilcoxon,
    "savage": _phi_savage,
    "logrank": _phi_savage,
}


@dataclass(frozen=True, eq=False)
class WeightFunction:
    """Score weight psi on [0, 1).

    ``kind`` is one of ``"grho"``, ``"table"``, ``"phi"`` or ``"callable"``.
    Weights derived from a score function phi are clamped at ``1 - 1/(2n)``
    when evaluated for a trial of size ``n``.
    """

    kind: str
    rho: float = 0.0
    grid: np.ndarray | None = None
    table: np.ndarray | None = None
    func: Callable[[float], float] | None = None
    name: str = ""

    def __call__(self, u, n: int | None = None):
        u = np.asarray(u, dtype=float)
        if self.kind == "grho":
            out = np.power(1.0 - u, self.rho) if self.rho else np.ones_like(u)
        elif self.kind == "table":
            out = np.interp(u, self.grid, self.table)
        elif self.kind == "phi":
            if n is not None:
                u = np.minimum(u, 1.0 - 0.5 / n)
            out = np.vectorize(self._psi_from_phi, otypes=[float])(u)
        elif self.kind == "callable":
            out = np.vectorize(self.func, otypes=[float])(u)
        else:
            raise ValueError(f"unknown weight kind {self.kind!r}")
        return float(out) if out.ndim == 0 else out

    def _psi_from_phi(self, u: float) -> float:
        return _psi_from_phi(self.func, float(u))

    @property
    def is_logrank(self) -> bool:
        return self.kind == "grho" and self.rho == 0

    def __str__(self):
        return self.name or self.kind


LOGRANK = WeightFunction("grho", rho=0.0, name="logrank")


def g_rho(rho: float) -> WeightFunction:
    if rho < 0:
        raise ValueError("rho must be >= 0")
    return WeightFunction("grho", rho=float(rho), name=f"grho:{rho:g}")


def tabulated(grid, psi, name: str = "table") -> WeightFunction:
    grid = np.asarray(grid, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if grid.ndim != 1 or grid.shape != psi.shape or np.any(np.diff(grid) <= 0):
        raise ValueError("table needs a strictly increasing u grid and matching psi values")
    return WeightFunction("table", grid=grid, table=psi, name=name)


def from_callable(psi: Callable[[float], float], name: str = "callable") -> WeightFunction:
    return WeightFunction("callable", func=psi, name=name)


def _psi_from_phi(phi, u: float) -> float:
    # int_u^1 phi(t) dt / (1-u) == int_0^1 phi(u + (1-u) v) dv; avoids amplifying
    # quadrature error by 1/(1-u) near u = 1
    if not 0.0 <= u < 1.0:
        raise ValueError(f"psi is defined on [0, 1), got u={u}")
    g = lambda v: phi(u + (1.0 - u) * v)
    val, err, *rest = integrate.quad(g, 0.0, 1.0, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200, full_output=1)
    if len(rest) > 1 and err > 1e-8:
        raise QuadratureError(f"quadrature did not converge at u={u}: {rest[1]}")
    return phi(u) - val


def score_to_weight(phi: Callable[[float], float], name: str = "phi") -> WeightFunction:
    """Convert a rank score function phi into the censored-data weight psi.

    psi(u) = phi(u) - (1-u)^{-1} int_u^1 phi(t) dt.
    """
    return WeightFunction("phi", func=phi, name=name)


def parse_weight(spec: str) -> WeightFunction:
    """Parse ``logrank``, ``grho:<rho>``, ``table:<path>`` or ``phi:<builtin>``."""
    spec = spec.strip()
    if spec == "logrank":
        return LOGRANK
    kind, _, arg = spec.partition(":")
    if kind == "grho" and arg:
        return g_rho(float(arg))
    if kind == "table" and arg:
        with open(arg, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return tabulated([float(r["u"]) for r in rows], [float(r["psi"]) for r in rows], name=spec)
    if kind == "phi" and arg in PHI_BUILTINS:
        return score_to_weight(PHI_BUILTINS[arg], name=spec)
    raise ValueError(f"unrecognised weight function {spec!r}")


@dataclass(frozen=True)
class _RiskTable:
    times: np.ndarray  # distinct event times
    d_x: np.ndarray
    d_y: np.ndarray
    m_x: np.ndarray
    m_y: np.ndarray
    q: np.ndarray  # psi(H(s-)) at each event time


def _check_groups(snap: TrialSnapshot):
    if snap.n_x == 0 or snap.n_y == 0:
        raise ValueError("two-sample statistic needs both groups nonempty")


def _risk_table(snap: TrialSnapshot, w: WeightFunction) -> _RiskTable:
    _check_groups(snap)
    ev = snap.event
    times = np.unique(snap.observed[ev])
    obs_x = np.sort(snap.observed[snap.is_x])
    obs_y = np.sort(snap.observed[~snap.is_x])
    m_x = obs_x.size - np.searchsorted(obs_x, times, side="left")
    m_y = obs_y.size - np.searchsorted(obs_y, times, side="left")
    ex = np.sort(snap.observed[ev & snap.is_x])
    ey = np.sort(snap.observed[ev & ~snap.is_x])
    d_x = np.searchsorted(ex, times, side="right") - np.searchsorted(ex, times, side="left")
    d_y = np.searchsorted(ey, times, side="right") - np.searchsorted(ey, times, side="left")
    if times.size == 0:
        q = np.zeros(0)
    elif w.is_logrank:
        q = np.ones(times.size)
    else:
        h = pooled_product_limit(snap)
        q = np.atleast_1d(w(h.left_limit(times), n=snap.n))
    return _RiskTable(times, d_x, d_y, m_x.astype(float), m_y.astype(float), q)


def rank_statistic(snap: TrialSnapshot, w: WeightFunction = LOGRANK) -> float:
    """S_n(t): X-group events count positively against their risk-set share."""
    rt = _risk_table(snap, w)
    m = rt.m_x + rt.m_y
    terms = rt.q * (rt.d_x * rt.m_y - rt.d_y * rt.m_x) / m
    return math.fsum(terms)


def variance_estimate(snap: TrialSnapshot, w: WeightFunction = LOGRANK, variant: str = "A") -> float:
    """Null variance estimate V_n(t); variant C is the average of A and B."""
    rt = _risk_table(snap, w)
    m2 = (rt.m_x + rt.m_y) ** 2
    q2 = rt.q**2
    if variant == "A":
        return math.fsum(q2 * rt.m_x * rt.m_y / m2 * (rt.d_x + rt.d_y))
    if variant == "B":
        return math.fsum(q2 / m2 * (rt.m_y**2 * rt.d_x + rt.m_x**2 * rt.d_y))
    if variant == "C":
        a = math.fsum(q2 * rt.m_x * rt.m_y / m2 * (rt.d_x + rt.d_y))
        b = math.fsum(q2 / m2 * (rt.m_y**2 * rt.d_x + rt.m_x**2 * rt.d_y))
        return (a + b) / 2
    raise ValueError(f"variance variant must be 'A', 'B' or 'C', got {variant!r}")


def cox_score_info(snap: TrialSnapshot) -> tuple[float, float]:
    """Cox partial-likelihood score and observed information at beta = 0."""
    z = np.asarray(snap.covariate, dtype=float)
    if z.shape[0] != snap.n:
        raise ValueError("snapshot has no covariates")
    if snap.n_events == 0:
        return 0.0, 0.0
    order = np.argsort(snap.observed, kind="stable")
    obs = snap.observed[order]
    zs = z[order]
    cnt = np.arange(obs.size, 0, -1, dtype=float)
    sz = np.cumsum(zs[::-1])[::-1]
    sz2 = np.cumsum((zs**2)[::-1])[::-1]
    # first index of each tie block so tied subjects share the risk set
    first = np.searchsorted(obs, obs, side="left")
    ev = snap.event[order]
    r = first[ev]
    mean = sz[r] / cnt[r]
    score = math.fsum(zs[ev] - mean)
    info = math.fsum(np.maximum(sz2[r] / cnt[r] - mean**2, 0.0))
    return score, info


@dataclass(frozen=True)
class ContiguousAlternative:
    """Cumulative hazards of both groups, optionally with a local drift g."""

    cumhaz_x: Callable
    cumhaz_y: Callable
    drift: Callable | None = None


def limit_mean(snap: TrialSnapshot, w: WeightFunction, alt: ContiguousAlternative) -> float:
    """Centering term mu_n(t) of the rank statistic under an alternative.

    The at-risk counts and H(s-) are constant on each interval between
    consecutive observed times, so the Stieltjes integral is an exact sum of
    cumulative-hazard increments.
    """
    _check_groups(snap)
    pts = np.unique(snap.observed[snap.observed > 0])
    if pts.size == 0:
        return 0.0
    left = np.concatenate(([0.0], pts[:-1]))
    obs_x = np.sort(snap.observed[snap.is_x])
    obs_y = np.sort(snap.observed[~snap.is_x])
    m_x = (obs_x.size - np.searchsorted(obs_x, pts, side="left")).astype(float)
    m_y = (obs_y.size - np.searchsorted(obs_y, pts, side="left")).astype(float)
    if w.is_logrank:
        q = np.ones(pts.size)
    else:
        h = pooled_product_limit(snap)
        q = np.atleast_1d(w(h(left), n=snap.n))
    lx = np.asarray(alt.cumhaz_x(pts), dtype=float) - np.asarray(alt.cumhaz_x(left), dtype=float)
    ly = np.asarray(alt.cumhaz_y(pts), dtype=float) - np.asarray(alt.cumhaz_y(left), dtype=float)
    m = m_x + m_y
    with np.errstate(invalid="ignore", divide="ignore"):
        prod = np.where(m > 0, m_x * m_y / m, 0.0)
    return math.fsum(q * prod * (lx - ly))


@dataclass(frozen=True)
class DesignCurves:
    """Limiting design quantities: X fraction, at-risk surfaces and null F.

    ``dist`` needs ``cdf`` and ``pdf`` (a frozen scipy distribution works).
    ``b_x(t, s)`` and ``b_y(t, s)`` are the limiting probabilities of being
    under observation at time ``s`` after entry at calendar time ``t``.
    """

    gamma: float
    b_x: Callable[[float, float], float]
    b_y: Callable[[float, float], float]
    dist: object

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must be in (0, 1)")

    @classmethod
    def uniform_accrual(cls, gamma: float, accrual_length: float, dist, withdrawal_rate: float = 0.0):
        """Uniform entry on [0, L] and exponential withdrawal in both groups."""

        def b(t, s):
            p_entry = min(max((t - s) / accrual_length, 0.0), 1.0) if accrual_length > 0 else float(t >= s)
            return p_entry * math.exp(-withdrawal_rate * s)

        return cls(gamma, b, b, dist)


def _mix(dc: DesignCurves, t: float, s: float) -> float:
    bx, by = dc.b_x(t, s), dc.b_y(t, s)
    den = dc.gamma * bx + (1 - dc.gamma) * by
    return bx * by / den if den > 0 else 0.0


def _quad(f, a, b, what):
    val, err, *rest = integrate.quad(f, a, b, epsabs=QUAD_TOL, epsrel=1e-10, limit=400, full_output=1)
    if len(rest) > 1 and err > 1e-7:
        raise QuadratureError(f"{what}: quadrature did not converge ({rest[1]})")
    return val


def asymptotic_moments(dc: DesignCurves, w: WeightFunction, alt: ContiguousAlternative | None, t: float):
    """Limiting (mean, variance) of S_n(t)/sqrt(n)."""
    gg = dc.gamma * (1 - dc.gamma)
    F = dc.dist

    def v_integrand(s):
        return w(F.cdf(s)) ** 2 * _mix(dc, t, s) * F.pdf(s)

    variance = gg * _quad(v_integrand, 0.0, t, "variance integral")
    if alt is None or alt.drift is None:
        return 0.0, variance

    def m_integrand(s):
        return w(F.cdf(s)) * alt.drift(s) * _mix(dc, t, s) * F.pdf(s)

    mean = -gg * _quad(m_integrand, 0.0, t, "mean integral")
    return mean, variance
