"""Survival data model for time-sequential trials.

Subjects enter at staggered calendar times. At calendar time ``t`` each
subject's follow-up is truncated at ``(t - entry)^+`` in addition to the
withdrawal time, which gives the censored *snapshot* every statistic in this
package is computed from.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

GROUPS = ("X", "Y")


@dataclass(frozen=True)
class SubjectRecord:
    entry_time: float
    survival_time: float
    withdrawal_time: float = math.inf
    group: str = "X"
    covariate: float | None = None

    def __post_init__(self):
        if not self.entry_time >= 0:
            raise ValueError(f"entry_time must be >= 0, got {self.entry_time}")
        if not self.survival_time > 0:
            raise ValueError(f"survival_time must be > 0, got {self.survival_time}")
        if not self.withdrawal_time > 0:
            raise ValueError(f"withdrawal_time must be > 0, got {self.withdrawal_time}")
        if self.group not in GROUPS:
            raise ValueError(f"group must be 'X' or 'Y', got {self.group!r}")


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TrialData:
    """Raw staggered-entry records stored column-wise.

    ``is_x`` marks membership of treatment group X. ``covariate`` defaults to
    the binary arm indicator (1 for X, 0 for Y), which is the two-arm Cox
    encoding.
    """

    entry: np.ndarray
    survival: np.ndarray
    withdrawal: np.ndarray
    is_x: np.ndarray
    covariate: np.ndarray

    def __post_init__(self):
        n = len(self.entry)
        for name in ("survival", "withdrawal", "is_x", "covariate"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name!r} has length {len(getattr(self, name))}, expected {n}")
        if np.any(self.entry < 0):
            raise ValueError("entry times must be >= 0")
        if np.any(self.survival <= 0):
            raise ValueError("survival times must be > 0")
        if np.any(self.withdrawal <= 0):
            raise ValueError("withdrawal times must be > 0")

    @classmethod
    def from_arrays(cls, entry, survival, withdrawal=None, is_x=None, covariate=None) -> "TrialData":
        entry = np.asarray(entry, dtype=float)
        n = entry.shape[0]
        withdrawal = np.full(n, np.inf) if withdrawal is None else withdrawal
        is_x = np.ones(n, dtype=bool) if is_x is None else np.asarray(is_x, dtype=bool)
        covariate = is_x.astype(float) if covariate is None else covariate
        return cls(
            _frozen(entry),
            _frozen(survival),
            _frozen(withdrawal),
            _frozen(is_x, dtype=bool),
            _frozen(covariate),
        )

    @classmethod
    def from_records(cls, subjects: Iterable[SubjectRecord]) -> "TrialData":
        subjects = list(subjects)
        is_x = [s.group == "X" for s in subjects]
        cov = [float(x) if s.covariate is None else s.covariate for s, x in zip(subjects, is_x)]
        return cls.from_arrays(
            [s.entry_time for s in subjects],
            [s.survival_time for s in subjects],
            [s.withdrawal_time for s in subjects],
            is_x,
            cov,
        )

    @property
    def subjects(self) -> list[SubjectRecord]:
        return [
            SubjectRecord(float(e), float(x), float(w), "X" if g else "Y", float(z))
            for e, x, w, g, z in zip(self.entry, self.survival, self.withdrawal, self.is_x, self.covariate)
        ]

    @property
    def n(self) -> int:
        return int(self.entry.shape[0])

    @property
    def n_x(self) -> int:
        return int(np.count_nonzero(self.is_x))

    @property
    def n_y(self) -> int:
        return self.n - self.n_x


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous piecewise-constant function.

    ``values[k]`` holds on ``[jumps[k], jumps[k+1])``; ``initial`` holds
    before the first jump.
    """

    jumps: np.ndarray
    values: np.ndarray
    initial: float = 0.0

    def __post_init__(self):
        if self.jumps.shape != self.values.shape:
            raise ValueError("jumps and values must have equal length")
        if self.jumps.size > 1 and np.any(np.diff(self.jumps) <= 0):
            raise ValueError("jump locations must be strictly increasing")

    @classmethod
    def from_arrays(cls, jumps, values, initial: float = 0.0) -> "StepFunction":
        return cls(_frozen(jumps), _frozen(values), float(initial))

    def _lookup(self, idx):
        padded = np.concatenate(([self.initial], self.values))
        return padded[idx + 1]

    def __call__(self, s):
        idx = np.searchsorted(self.jumps, s, side="right") - 1
        out = self._lookup(idx)
        return float(out) if np.ndim(out) == 0 else out

    def left_limit(self, s):
        idx = np.searchsorted(self.jumps, s, side="left") - 1
        out = self._lookup(idx)
        return float(out) if np.ndim(out) == 0 else out

    @property
    def final(self) -> float:
        return float(self.values[-1]) if self.values.size else self.initial


@dataclass(frozen=True)
class TrialSnapshot:
    """The censored view of a trial at calendar time ``calendar_time``."""

    calendar_time: float
    observed: np.ndarray
    event: np.ndarray
    is_x: np.ndarray
    covariate: np.ndarray
    follow_up: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return int(self.observed.shape[0])

    @property
    def n_x(self) -> int:
        return int(np.count_nonzero(self.is_x))

    @property
    def n_y(self) -> int:
        return self.n - self.n_x

    @property
    def n_events(self) -> int:
        return int(np.count_nonzero(self.event))

    def _mask(self, group: str | None):
        if group is None:
            return np.ones(self.n, dtype=bool)
        if group not in GROUPS:
            raise ValueError(f"unknown group {group!r}")
        return self.is_x if group == "X" else ~self.is_x

    def at_risk(self, s, group: str | None = None):
        """m_{n,t}(s): number of subjects with observed time >= s."""
        obs = np.sort(self.observed[self._mask(group)])
        out = obs.size - np.searchsorted(obs, s, side="left")
        return int(out) if np.ndim(out) == 0 else out

    def counting(self, s, group: str | None = None):
        """N_{n,t}(s): number of observed events at or before s."""
        m = self._mask(group) & self.event
        ev = np.sort(self.observed[m])
        out = np.searchsorted(ev, s, side="right")
        return int(out) if np.ndim(out) == 0 else out

    def withdrawn(self) -> np.ndarray:
        """Subjects censored by withdrawal rather than by the analysis time."""
        return (~self.event) & (self.observed < self.follow_up)


def snapshot(data: TrialData, t: float) -> TrialSnapshot:
    if not t >= 0:
        raise ValueError(f"calendar time must be >= 0, got {t}")
    follow = np.maximum(t - data.entry, 0.0)
    obs = np.minimum(np.minimum(data.survival, data.withdrawal), follow)
    # exact comparison is safe: np.minimum returns one of its inputs unchanged
    event = (obs == data.survival) & (follow > 0)
    return TrialSnapshot(float(t), _frozen(obs), _frozen(event, bool), data.is_x, data.covariate, _frozen(follow))


def _product_limit(times: np.ndarray, events: np.ndarray) -> StepFunction:
    """Distribution estimate 1 - prod(1 - d/m) over distinct event times.

    Subjects tied with an event time stay in the risk set for that time, so
    censorings at an event time are removed after the events.
    """
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=bool)
    srt = np.sort(times)
    ev_times, d = np.unique(times[events], return_counts=True)
    if ev_times.size == 0:
        return StepFunction.from_arrays([], [])
    m = srt.size - np.searchsorted(srt, ev_times, side="left")
    surv = np.cumprod(1.0 - d / m)
    return StepFunction.from_arrays(ev_times, 1.0 - surv)


def pooled_product_limit(snap: TrialSnapshot) -> StepFunction:
    """H_{n,t}: pooled product-limit distribution estimate of both groups."""
    pos = snap.observed > 0
    if not np.any(pos):
        raise ValueError("degenerate snapshot: no subject has positive observed time")
    return _product_limit(snap.observed[pos], snap.event[pos])


def kaplan_meier(times: Sequence[tuple[float, bool]]) -> StepFunction:
    """Kaplan-Meier estimate, returned as a distribution function 1 - S(s)."""
    if len(times) == 0:
        raise ValueError("kaplan_meier needs at least one observation")
    arr = np.asarray([float(t) for t, _ in times])
    ev = np.asarray([bool(e) for _, e in times])
    if np.any(arr <= 0):
        raise ValueError("times must be > 0")
    return _product_limit(arr, ev)


def breslow_cumhaz(snap: TrialSnapshot, beta: float) -> StepFunction:
    """Breslow cumulative baseline hazard at regression parameter ``beta``.

    Risk sets are ``{j : observed_j >= observed_i}`` so tied subjects share a
    denominator. With ``beta = 0`` this is the Nelson-Aalen estimator.
    """
    z = np.asarray(snap.covariate, dtype=float)
    if z.shape[0] != snap.n:
        raise ValueError("snapshot has no covariates")
    if snap.n_events == 0:
        warnings.warn("no events in snapshot; Breslow estimate is identically zero", RuntimeWarning, stacklevel=2)
        return StepFunction.from_arrays([], [])
    order = np.argsort(snap.observed, kind="stable")
    obs = snap.observed[order]
    risk = np.exp(beta * z[order])
    tail = np.cumsum(risk[::-1])[::-1]
    ev_times, d = np.unique(snap.observed[snap.event], return_counts=True)
    denom = tail[np.searchsorted(obs, ev_times, side="left")]
    return StepFunction.from_arrays(ev_times, np.cumsum(d / denom))


CSV_HEADER = ("entry_time", "survival_time", "withdrawal_time", "group", "covariate")


def read_subjects_csv(path: str | Path) -> TrialData:
    """Read the subject CSV ingestion format into :class:`TrialData`."""
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_HEADER[:4]) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                cov = row.get("covariate", "")
                records.append(
                    SubjectRecord(
                        float(row["entry_time"]),
                        float(row["survival_time"]),
                        float(row["withdrawal_time"]),  # float("inf") parses the literal 'inf'
                        row["group"].strip(),
                        None if cov in (None, "") else float(cov),
                    )
                )
            except (ValueError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return TrialData.from_records(records)


def write_subjects_csv(data: TrialData, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for s in data.subjects:
            wd = "inf" if math.isinf(s.withdrawal_time) else repr(s.withdrawal_time)
            w.writerow([repr(s.entry_time), repr(s.survival_time), wd, s.group, repr(s.covariate)])
