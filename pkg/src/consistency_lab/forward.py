"""Forward-process sampling: marginals and the two couplings of ``(X_t, X_{t-1})``.

The two couplings are deliberately separate:

``sample_shared_noise_pair``
    one ``(X0, Z)`` draw plugged into both marginal formulas.  This is the law
    inside the consistency-training objective and the conditional-mean identity.
``sample_markov_pair``
    ``X_{t-1}`` from its marginal, then one forward step
    ``X_t = sqrt(alpha_t) X_{t-1} + sqrt(beta_t) W``.  Used for the typical event.

They share the ``t``-marginal but have different conditional laws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class CoupledPair:
    """A batch of coupled draws; every field has shape ``(n, d)``.

    For the shared-noise coupling ``z`` is the common Gaussian draw; for the
    Markov coupling it is the fresh innovation of the last forward step.
    """

    t: int
    x_t: np.ndarray
    x_tm1: np.ndarray
    x0: np.ndarray
    z: np.ndarray

    def __len__(self) -> int:
        return self.x_t.shape[0]


def _check_t(schedule, t: int, lo: int) -> int:
    t = int(t)
    if not lo <= t <= schedule.T:
        raise IndexError(f"step index {t} outside [{lo}, {schedule.T}]")
    return t


def marginal_from(schedule, t: int, x0: np.ndarray, z: np.ndarray) -> np.ndarray:
    """``sqrt(ab_t) x0 + sqrt(1 - ab_t) z`` (``t = 0`` returns ``x0``)."""
    ab = schedule.alpha_bar_at(t)
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * z


def sample_marginal(target, schedule, t: int, n: int, rng: np.random.Generator) -> np.ndarray:
    t = _check_t(schedule, t, 1)
    x0 = target.sample_x0(n, rng)
    z = rng.standard_normal(x0.shape)
    return marginal_from(schedule, t, x0, z)


def sample_shared_noise_pair(target, schedule, t: int, n: int, rng: np.random.Generator) -> CoupledPair:
    t = _check_t(schedule, t, 2)
    x0 = target.sample_x0(n, rng)
    z = rng.standard_normal(x0.shape)
    return CoupledPair(t, marginal_from(schedule, t, x0, z), marginal_from(schedule, t - 1, x0, z), x0, z)


def sample_markov_pair(target, schedule, t: int, n: int, rng: np.random.Generator) -> CoupledPair:
    t = _check_t(schedule, t, 2)
    x0 = target.sample_x0(n, rng)
    z_prev = rng.standard_normal(x0.shape)
    x_tm1 = marginal_from(schedule, t - 1, x0, z_prev)
    w = rng.standard_normal(x0.shape)
    x_t = math.sqrt(schedule.alpha_at(t)) * x_tm1 + math.sqrt(schedule.beta_at(t)) * w
    return CoupledPair(t, x_t, x_tm1, x0, w)
