"""Probability-flow ODE in the ``alpha_bar`` parametrisation.

``g_t(x, ab)`` solves ``dg/dab = (g + s_ab(g)) / (2 ab)`` with ``g_t(x, ab_t) = x``.
We integrate the equivalent form in ``u = g / sqrt(ab)``::

    du/dab = s_ab(sqrt(ab) u) / (2 ab^{3/2})

which drops the linear ``g / (2 ab)`` term.  The flow runs toward larger
``ab`` (toward the data end).  ``flow(t, k)`` is always the step-by-step
composition ``phi_{k+1} o ... o phi_t`` so every intermediate state lands on a
schedule node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .score import score
from .targets import _as_points

INTEGRATORS = ("rk4", "heun", "euler")


class FlowError(RuntimeError):
    pass


@dataclass(frozen=True)
class FlowConfig:
    substeps: int = 8
    integrator: str = "rk4"

    def __post_init__(self):
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ValueError("substeps must be a positive integer")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}, got {self.integrator!r}")

    def describe(self) -> str:
        return f"{self.integrator}x{self.substeps}"


@dataclass(frozen=True, eq=False)
class FlowSolution:
    t: int
    k: int
    x: np.ndarray
    y: np.ndarray
    config: FlowConfig
    jacobian: np.ndarray | None = None


def _step(f, a, h, y, method):
    if method == "euler":
        return y + h * f(a, y)
    if method == "heun":
        k1 = f(a, y)
        k2 = f(a + h, y + h * k1)
        return y + 0.5 * h * (k1 + k2)
    k1 = f(a, y)
    k2 = f(a + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(a + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(a + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _integrate(f, y0, a0, a1, n_steps, method):
    """Fixed-step integration of ``dy/da = f(a, y)`` on a uniform grid from ``a0`` to ``a1``."""
    grid = np.linspace(a0, a1, n_steps + 1)
    y = y0
    for a, b in zip(grid[:-1], grid[1:]):
        y = _step(f, a, b - a, y, method)
    return y


def _u_drift(target):
    def f(ab, u):
        return score(target, ab, math.sqrt(ab) * u) / (2.0 * ab**1.5)

    return f


def integrate_between(target, x, ab_start: float, ab_end: float, cfg: FlowConfig) -> np.ndarray:
    """Transport points from noise level ``ab_start`` to ``ab_end`` along the flow."""
    pts, single = _as_points(x, target.dim)
    if not 0.0 < ab_start <= ab_end < 1.0:
        raise ValueError(f"need 0 < ab_start <= ab_end < 1, got {ab_start!r}, {ab_end!r}")
    if ab_end == ab_start:
        out = pts.copy()
    else:
        with np.errstate(over="ignore", invalid="ignore"):
            u = _integrate(_u_drift(target), pts / math.sqrt(ab_start), ab_start, ab_end, cfg.substeps, cfg.integrator)
        out = math.sqrt(ab_end) * u
        if not np.all(np.isfinite(out)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(out), axis=1))[0])
            raise FlowError(
                f"non-finite flow state integrating ab {ab_start:.6g} -> {ab_end:.6g} "
                f"({cfg.describe()}); first bad input point {pts[bad].tolist()}"
            )
    return out[0] if single else out


def integrate_g(target, schedule, t: int, x, alpha_bar_end: float, cfg: FlowConfig = FlowConfig()):
    """``g_t(x, alpha_bar_end)``.

    The span is cut at every schedule node it crosses and each piece gets
    ``cfg.substeps`` uniform steps in ``alpha_bar``, so a span ending on
    ``alpha_bar_k`` is integrated exactly like the composition down to ``k``.
    """
    t = int(t)
    if not 1 <= t <= schedule.T:
        raise IndexError(f"integrate_g needs 1 <= t <= T, got t={t}")
    ab_t = schedule.alpha_bar_at(t)
    if not ab_t <= alpha_bar_end < 1.0:
        raise ValueError(f"need alpha_bar_t <= alpha_bar_end < 1, got {ab_t!r}, {alpha_bar_end!r}")
    nodes = [schedule.alpha_bar_at(k) for k in range(t - 1, 0, -1)]
    cuts = [ab_t] + [a for a in nodes if a < alpha_bar_end] + [alpha_bar_end]
    y = np.array(x, dtype=float, copy=True)
    for a, b in zip(cuts[:-1], cuts[1:]):
        y = integrate_between(target, y, a, b, cfg)
    return y


def phi_step(target, schedule, t: int, x, cfg: FlowConfig = FlowConfig()):
    """``phi_t = Phi_{t -> t-1}``."""
    t = int(t)
    if not 2 <= t <= schedule.T:
        raise IndexError(f"phi_t needs 2 <= t <= T, got t={t}")
    return integrate_between(target, x, schedule.alpha_bar_at(t), schedule.alpha_bar_at(t - 1), cfg)


def flow(target, schedule, t: int, k: int, x, cfg: FlowConfig = FlowConfig()):
    """``Phi_{t -> k}(x)`` as the composition ``phi_{k+1}(... phi_t(x) ...)``."""
    t, k = int(t), int(k)
    if not 1 <= k <= t <= schedule.T:
        raise IndexError(f"flow needs 1 <= k <= t <= T, got t={t}, k={k}")
    y = np.array(x, dtype=float, copy=True)
    for s in range(t, k, -1):
        y = phi_step(target, schedule, s, y, cfg)
    return y


def flow_jacobian_fd(target, schedule, t: int, k: int, x, cfg: FlowConfig = FlowConfig(), rel_step: float = 1e-5):
    """Central finite-difference Jacobian of ``Phi_{t -> k}`` at a single point ``x``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    d = x.size
    h = rel_step * (1.0 + np.linalg.norm(x))
    probes = np.concatenate([x + h * np.eye(d), x - h * np.eye(d)])
    vals = flow(target, schedule, t, k, probes, cfg)
    return ((vals[:d] - vals[d:]) / (2 * h)).T


def solve(target, schedule, t: int, k: int, x, cfg: FlowConfig = FlowConfig(), jacobian: bool = False) -> FlowSolution:
    x = np.asarray(x, dtype=float)
    y = flow(target, schedule, t, k, x, cfg)
    jac = flow_jacobian_fd(target, schedule, t, k, x, cfg) if jacobian else None
    return FlowSolution(int(t), int(k), x, y, cfg, jac)


def discretization_integral(target, schedule, t: int, x, substeps: int = 64, integrator: str = "rk4") -> np.ndarray:
    """``int_{ab_t}^{ab_{t-1}} sqrt(ab_t / ab^3) (s_ab(g_t(x, ab)) - s_t(x)) d ab`` per point.

    The integral is carried as an extra state alongside ``u`` so it is evaluated
    on the same trajectory the integrator produces.
    """
    pts, single = _as_points(x, target.dim)
    ab_t = schedule.alpha_bar_at(t)
    ab_prev = schedule.alpha_bar_at(t - 1)
    s_t = score(target, ab_t, pts)
    d = target.dim

    def f(ab, state):
        u = state[:, :d]
        s = score(target, ab, math.sqrt(ab) * u)
        du = s / (2.0 * ab**1.5)
        dI = math.sqrt(ab_t / ab**3) * (s - s_t)
        return np.concatenate([du, dI], axis=1)

    state0 = np.concatenate([pts / math.sqrt(ab_t), np.zeros_like(pts)], axis=1)
    state = _integrate(f, state0, ab_t, ab_prev, substeps, integrator)
    out = state[:, d:]
    return out[0] if single else out
