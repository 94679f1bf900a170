"""Learning-rate schedule for the discrete forward process.

``beta_1 = T**-c0`` and, for ``t >= 2``::

    beta_t = (c1 log T / T) * min(beta_1 * (1 + c1 log T / T)**t, 1)

with ``alpha_t = 1 - beta_t`` and ``alpha_bar_t = prod_{k<=t} alpha_k``.  Indices
are 1-based everywhere in the public API; ``alpha_bar(0)`` is defined as 1.
``log`` is the natural logarithm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .reports import FAIL, PASS, REPORT_ONLY, CheckReport

DEFAULT_C0 = 2.0
DEFAULT_C1 = 4.0


class ScheduleError(ValueError):
    """Raised for inadmissible (T, c0, c1); ``index`` is the first bad step."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Schedule:
    """Immutable (beta, alpha, alpha_bar) sequences; arrays are stored 0-based."""

    T: int
    c0: float
    c1: float
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def rate(self) -> float:
        """The common factor ``c1 log T / T``."""
        return self.c1 * math.log(self.T) / self.T

    def _check_index(self, t: int, lo: int = 1) -> int:
        t = int(t)
        if not lo <= t <= self.T:
            raise IndexError(f"step index {t} outside [{lo}, {self.T}]")
        return t

    def beta_at(self, t: int) -> float:
        return float(self.beta[self._check_index(t) - 1])

    def alpha_at(self, t: int) -> float:
        return float(self.alpha[self._check_index(t) - 1])

    def alpha_bar_at(self, t: int) -> float:
        """``alpha_bar_t`` for ``0 <= t <= T`` (``alpha_bar_0 = 1``)."""
        t = self._check_index(t, lo=0)
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    @property
    def terminal_exponent(self) -> float:
        """Achieved ``log(1/alpha_bar_T) / log T``."""
        return -math.log(self.alpha_bar[-1]) / math.log(self.T)

    def params(self) -> dict:
        return {"T": self.T, "c0": self.c0, "c1": self.c1}

    def rows(self) -> list[dict]:
        return [
            {"t": t, "beta": float(b), "alpha": float(a), "alpha_bar": float(ab)}
            for t, (b, a, ab) in enumerate(zip(self.beta, self.alpha, self.alpha_bar), start=1)
        ]


def build_schedule(T: int, c0: float = DEFAULT_C0, c1: float = DEFAULT_C1) -> Schedule:
    """Construct the schedule, rejecting any step with ``beta_t >= 1`` or ``alpha_t < 1/2``."""
    if int(T) != T or T < 2:
        raise ScheduleError(f"T must be an integer >= 2, got {T!r}")
    T = int(T)
    if not (c0 > 0 and c1 > 0):
        raise ScheduleError(f"c0 and c1 must be positive, got c0={c0!r}, c1={c1!r}")
    c0 = float(c0)
    c1 = float(c1)

    rate = c1 * math.log(T) / T
    beta1 = float(T) ** (-c0)
    t = np.arange(1, T + 1, dtype=float)
    # (1 + rate)**t can overflow for extreme inputs; the min() caps it anyway
    with np.errstate(over="ignore"):
        growth = np.exp(t * math.log1p(rate) + math.log(beta1))
    beta = rate * np.minimum(growth, 1.0)
    beta[0] = beta1

    bad = np.flatnonzero((beta > 0.5) | ~(beta > 0.0))
    if bad.size:
        i = int(bad[0]) + 1
        raise ScheduleError(
            f"inadmissible schedule (T={T}, c0={c0}, c1={c1}): beta_{i} = {beta[i - 1]:.6g} "
            f"gives alpha_{i} = {1.0 - beta[i - 1]:.6g} < 1/2",
            index=i,
        )

    alpha = 1.0 - beta
    alpha_bar = np.exp(np.cumsum(np.log1p(-beta)))
    return Schedule(T, c0, c1, _frozen(beta), _frozen(alpha), _frozen(alpha_bar))


def _property_row(name, t_idx, lhs, rhs, rel_tol):
    """Row for an inequality ``lhs <= rhs`` checked elementwise over ``t_idx``."""
    slack = rel_tol * np.maximum(np.abs(rhs), 1.0)
    margin = rhs - lhs
    worst = int(np.argmin(margin))
    return {
        "property": name,
        "first_t": int(t_idx[0]),
        "last_t": int(t_idx[-1]),
        "n_checked": int(t_idx.size),
        "worst_t": int(t_idx[worst]),
        "lhs": float(lhs[worst]),
        "rhs": float(rhs[worst]),
        "margin": float(margin[worst]),
        "passed": bool(np.all(margin >= -slack)),
    }


def verify_schedule_properties(
    s: Schedule, terminal_exponent: float = 2.0, rel_tol: float = 1e-12
) -> CheckReport:
    """Evaluate the four step-size properties over every applicable index.

    Each chained inequality becomes its own row (``lhs <= rhs``) with the
    worst-case index and margin.  ``rel_tol`` only absorbs rounding where a
    bound is attained with equality (the capped region of ``beta_t``).
    """
    T = s.T
    rate = s.rate
    alpha, alpha_bar = s.alpha, s.alpha_bar
    ab_prev = np.concatenate(([1.0], alpha_bar[:-1]))
    t_all = np.arange(1, T + 1)
    rows = [
        _property_row("P1a: alpha_t >= 1 - c1 logT/T", t_all, np.full(T, 1.0 - rate), alpha, rel_tol),
        _property_row("P1b: 1 - c1 logT/T >= 1/2", t_all[:1], np.array([0.5]), np.array([1.0 - rate]), rel_tol),
    ]

    t2 = t_all[1:]
    a, abt, abp = alpha[1:], alpha_bar[1:], ab_prev[1:]
    q1 = 0.5 * (1 - a) / (1 - abt)
    q2 = 0.5 * (1 - a) / (a - abt)
    q3 = (1 - a) / (1 - abp)
    ratio = (1 - abt) / (1 - abp)
    if t2.size:
        rows += [
            _property_row("P2a: (1-a_t)/(2(1-ab_t)) <= (1-a_t)/(2(a_t-ab_t))", t2, q1, q2, rel_tol),
            _property_row("P2b: (1-a_t)/(2(a_t-ab_t)) <= (1-a_t)/(1-ab_{t-1})", t2, q2, q3, rel_tol),
            _property_row("P2c: (1-a_t)/(1-ab_{t-1}) <= 4 c1 logT/T", t2, q3, np.full(t2.size, 4 * rate), rel_tol),
            _property_row("P3a: 1 <= (1-ab_t)/(1-ab_{t-1})", t2, np.ones(t2.size), ratio, rel_tol),
            _property_row("P3b: (1-ab_t)/(1-ab_{t-1}) <= 1 + 4 c1 logT/T", t2, ratio, np.full(t2.size, 1 + 4 * rate), rel_tol),
        ]
    rows.append(
        _property_row(
            f"P4: alpha_bar_T <= T^-{terminal_exponent:g}",
            t_all[-1:],
            alpha_bar[-1:],
            np.array([float(T) ** (-terminal_exponent)]),
            0.0,
        )
    )
    verdict = PASS if all(r["passed"] for r in rows) else FAIL
    rows.append(
        {
            "property": "achieved terminal exponent log(1/ab_T)/log T",
            "first_t": T,
            "last_t": T,
            "n_checked": 1,
            "worst_t": T,
            "lhs": s.terminal_exponent,
            "rhs": terminal_exponent,
            "margin": s.terminal_exponent - terminal_exponent,
            "passed": REPORT_ONLY,
        }
    )
    notes = [f"T={T}, c0={s.c0:g}, c1={s.c1:g}; achieved terminal exponent {s.terminal_exponent:.4f}"]
    if T == 2:
        notes.append("degenerate T=2: chain properties evaluated at t=2 only")
    return CheckReport(
        name="schedule_properties",
        columns=["property", "first_t", "last_t", "n_checked", "worst_t", "lhs", "rhs", "margin", "passed"],
        rows=rows,
        verdict=verdict,
        tolerances={"rel_tol": rel_tol, "terminal_exponent": terminal_exponent},
        notes=notes,
    )
