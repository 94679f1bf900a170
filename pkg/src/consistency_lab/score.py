"""Smoothed score ``s_ab(x) = grad log p_{X(ab)}(x)``, its Jacobian and the matrix ``J_t``.

Two independent routes are kept on purpose:

* :func:`score_jacobian` differentiates the mixture score directly
  (``sum_k w_k grad s_k + Cov_w[s_k]``);
* :func:`j_matrix` is built from conditional moments of ``v = x - sqrt(ab) X0``.

They must agree through ``J = -(1 - ab) grad s``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .targets import _as_points, _check_alpha_bar, _check_finite


@dataclass(frozen=True)
class ScoreEvaluation:
    value: np.ndarray
    jacobian: np.ndarray | None = None
    j_matrix: np.ndarray | None = None


def _component_scores(target, alpha_bar, pts):
    log_terms, centers, tau2, diff = target._component_log_terms(alpha_bar, pts)
    w = np.exp(log_terms - logsumexp(log_terms, axis=1, keepdims=True))
    g = -diff / tau2[None, :, None]
    return w, g, tau2


def score(target, alpha_bar: float, x):
    """Closed-form score of the smoothed law at ``x`` (``(d,)`` or ``(n, d)``)."""
    ab = _check_alpha_bar(alpha_bar)
    pts, single = _as_points(x, target.dim)
    _check_finite(pts)
    w, g, _ = _component_scores(target, ab, pts)
    out = np.einsum("nm,nmd->nd", w, g)
    return out[0] if single else out


def score_jacobian(target, alpha_bar: float, x):
    """``grad s_ab(x)``: mixture of component Hessians plus the covariance of component scores."""
    ab = _check_alpha_bar(alpha_bar)
    pts, single = _as_points(x, target.dim)
    _check_finite(pts)
    w, g, tau2 = _component_scores(target, ab, pts)
    s = np.einsum("nm,nmd->nd", w, g)
    d = target.dim
    jac = -(w @ (1.0 / tau2))[:, None, None] * np.eye(d)[None]
    jac += np.einsum("nm,nmi,nmj->nij", w, g, g) - np.einsum("ni,nj->nij", s, s)
    jac = 0.5 * (jac + np.swapaxes(jac, 1, 2))
    return jac[0] if single else jac


def j_matrix_at(target, alpha_bar: float, x):
    """``I + (E[v]E[v]^T - E[v v^T]) / (1 - ab)`` from conditional moments of ``v``."""
    ab = _check_alpha_bar(alpha_bar)
    pts, single = _as_points(x, target.dim)
    mean, second = target.v_moments(ab, pts)
    out = np.eye(target.dim)[None] + (np.einsum("ni,nj->nij", mean, mean) - second) / (1.0 - ab)
    return out[0] if single else out


def j_matrix(target, schedule, t: int, x):
    """``J_t(x)`` at the schedule node ``alpha_bar_t``."""
    return j_matrix_at(target, schedule.alpha_bar_at(t), x)


def evaluate(target, alpha_bar: float, x, jacobian: bool = True, with_j: bool = True) -> ScoreEvaluation:
    return ScoreEvaluation(
        value=score(target, alpha_bar, x),
        jacobian=score_jacobian(target, alpha_bar, x) if jacobian else None,
        j_matrix=j_matrix_at(target, alpha_bar, x) if with_j else None,
    )


def score_jacobian_fd(target, alpha_bar: float, x: np.ndarray, rel_step: float = 1e-5) -> np.ndarray:
    """Central finite-difference Jacobian of the score at a single point."""
    x = np.asarray(x, dtype=float)
    d = x.size
    h = rel_step * (1.0 + np.linalg.norm(x))
    probes = np.concatenate([x + h * np.eye(d), x - h * np.eye(d)])
    vals = score(target, alpha_bar, probes)
    # column j holds d s / d x_j
    return ((vals[:d] - vals[d:]) / (2 * h)).T


@dataclass(frozen=True)
class ScoreMCEstimate:
    estimate: np.ndarray
    stderr: np.ndarray
    ess: float
    degenerate: bool


def score_mc_estimate(target, alpha_bar: float, x, N: int, rng: np.random.Generator, min_ess: float = 10.0) -> ScoreMCEstimate:
    """Self-normalised importance estimate of ``E[-Z / sqrt(1-ab) | X(ab) = x]``.

    Draws ``X0`` from the prior, weights each draw by the Gaussian kernel
    ``N(x; sqrt(ab) X0, (1-ab) I)`` and averages the implied ``-Z / sqrt(1-ab)``.
    The standard error is the delta-method error of the ratio estimator.
    """
    ab = _check_alpha_bar(alpha_bar)
    if N < 1:
        raise ValueError("N must be >= 1")
    x = np.asarray(x, dtype=float).reshape(-1)
    x0 = target.sample_x0(N, rng)
    v = x[None, :] - math.sqrt(ab) * x0
    logk = -0.5 * np.einsum("nd,nd->n", v, v) / (1.0 - ab)
    top = logk.max()
    # every unshifted kernel weight underflows: the estimate rests on rounding luck
    underflow = top < np.log(np.finfo(float).tiny)
    if not np.isfinite(top):
        return ScoreMCEstimate(np.full(x.size, np.nan), np.full(x.size, np.inf), 0.0, True)
    w = np.exp(logk - top)
    w_sum = w.sum()
    wn = w / w_sum
    ess = float(1.0 / np.sum(wn**2))
    h = -v / (1.0 - ab)  # -Z / sqrt(1-ab) with Z = v / sqrt(1-ab)
    est = wn @ h
    se = np.sqrt(np.sum(wn[:, None] ** 2 * (h - est) ** 2, axis=0))
    return ScoreMCEstimate(est, se, ess, bool(ess < min_ess or underflow))
