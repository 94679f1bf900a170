"""Target data laws with exact oracles for the smoothed variable.

For a target ``X0`` the smoothed variable is ``X(ab) = sqrt(ab) X0 + sqrt(1-ab) Z``.
Both target families here are isotropic Gaussian mixtures in disguise (an atom
is a component of variance zero), so ``X(ab)`` is again a mixture with centres
``sqrt(ab) m_k`` and variances ``tau_k^2 = ab sigma_k^2 + 1 - ab``.  Everything
below (density, posterior weights, conditional moments) is evaluated in closed
form from that representation, in the log domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml
from scipy import stats
from scipy.special import logsumexp

_WEIGHT_TOL = 1e-9


def _as_points(x, d: int) -> tuple[np.ndarray, bool]:
    """Return ``x`` as an ``(n, d)`` float array and whether the input was a single point."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.ndim != 2 or arr.shape[1] != d:
        raise ValueError(f"expected points of dimension {d}, got shape {np.shape(x)}")
    return arr, single


def _check_alpha_bar(alpha_bar: float) -> float:
    ab = float(alpha_bar)
    if not 0.0 < ab < 1.0:
        raise ValueError(f"alpha_bar must lie in (0, 1), got {alpha_bar!r}")
    return ab


def _check_finite(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise ValueError("query points must be finite")


def _simplex(weights, n: int, what: str) -> np.ndarray:
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.size != n:
        raise ValueError(f"{what}: expected {n} weights, got {w.size}")
    if np.any(~(w > 0)):
        raise ValueError(f"{what}: weights must be strictly positive")
    if abs(w.sum() - 1.0) > _WEIGHT_TOL:
        raise ValueError(f"{what}: weights sum to {w.sum():.12g}, not 1")
    return w / w.sum()


@dataclass(frozen=True, eq=False)
class SmoothedPosterior:
    """Posterior over mixture components of ``X0`` given ``X(ab) = x``.

    ``weights[i, k]`` is the weight of component ``k`` at query point ``i``;
    ``centers`` are the smoothed component centres ``sqrt(ab) m_k``.
    """

    x: np.ndarray
    alpha_bar: float
    weights: np.ndarray
    centers: np.ndarray
    variances: np.ndarray


class _MixtureTarget:
    """Shared machinery; subclasses provide ``means``, ``variances``, ``weights``."""

    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray
    radius: float

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def is_atomic(self) -> bool:
        return bool(np.all(self.variances == 0.0))

    @property
    def affine_posterior(self) -> bool:
        """True when ``E[X0 | X(ab) = x]`` is affine in ``x`` (single component)."""
        return self.n_components == 1

    # ------------------------------------------------------------------ sampling
    def sample_x0(self, n: int, rng: np.random.Generator) -> np.ndarray:
        n = int(n)
        if n < 0:
            raise ValueError("n must be non-negative")
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        out = self.means[comp].copy()
        sd = np.sqrt(self.variances[comp])
        if np.any(sd > 0):
            out += sd[:, None] * rng.standard_normal((n, self.dim))
        return out

    # ---------------------------------------------------------- smoothed mixture
    def smoothed_components(self, alpha_bar: float):
        """Centres ``(m, d)`` and variances ``(m,)`` of the law of ``X(ab)``."""
        ab = _check_alpha_bar(alpha_bar)
        return math.sqrt(ab) * self.means, ab * self.variances + (1.0 - ab)

    def _component_log_terms(self, alpha_bar: float, x: np.ndarray):
        centers, tau2 = self.smoothed_components(alpha_bar)
        diff = x[:, None, :] - centers[None, :, :]
        sq = np.einsum("nmd,nmd->nm", diff, diff)
        d = self.dim
        log_terms = np.log(self.weights)[None, :] - 0.5 * d * np.log(2 * np.pi * tau2)[None, :] - 0.5 * sq / tau2[None, :]
        return log_terms, centers, tau2, diff

    def smoothed_log_density(self, alpha_bar: float, x):
        pts, single = _as_points(x, self.dim)
        _check_finite(pts)
        log_terms, *_ = self._component_log_terms(alpha_bar, pts)
        out = logsumexp(log_terms, axis=1)
        return float(out[0]) if single else out

    def posterior(self, alpha_bar: float, x) -> SmoothedPosterior:
        pts, _ = _as_points(x, self.dim)
        _check_finite(pts)
        log_terms, centers, tau2, _ = self._component_log_terms(alpha_bar, pts)
        log_w = log_terms - logsumexp(log_terms, axis=1, keepdims=True)
        return SmoothedPosterior(pts, float(alpha_bar), np.exp(log_w), centers, tau2)

    def _posterior_pieces(self, alpha_bar: float, x: np.ndarray):
        """Posterior weights plus per-component conditional means of ``v = x - sqrt(ab) X0``.

        Within component ``k``: ``E[v | x, k] = (1-ab)(x - c_k)/tau_k^2`` and
        ``Cov[v | x, k] = ab sigma_k^2 (1-ab)/tau_k^2 I``.
        """
        log_terms, centers, tau2, diff = self._component_log_terms(alpha_bar, x)
        log_w = log_terms - logsumexp(log_terms, axis=1, keepdims=True)
        w = np.exp(log_w)
        ab = float(alpha_bar)
        v_mean_k = (1.0 - ab) * diff / tau2[None, :, None]
        v_var_k = ab * self.variances * (1.0 - ab) / tau2
        return w, v_mean_k, v_var_k

    def posterior_mean_x0(self, alpha_bar: float, x):
        """``E[X0 | X(ab) = x]``."""
        pts, single = _as_points(x, self.dim)
        _check_finite(pts)
        ab = _check_alpha_bar(alpha_bar)
        w, v_mean_k, _ = self._posterior_pieces(ab, pts)
        # X0 = (x - v) / sqrt(ab) componentwise
        x0_k = (pts[:, None, :] - v_mean_k) / math.sqrt(ab)
        out = np.einsum("nm,nmd->nd", w, x0_k)
        return out[0] if single else out

    def v_moments(self, alpha_bar: float, x: np.ndarray):
        """First and second conditional moments of ``v = x - sqrt(ab) X0`` given ``X(ab) = x``.

        Returns ``(mean (n, d), second (n, d, d))``.
        """
        pts, _ = _as_points(x, self.dim)
        _check_finite(pts)
        ab = _check_alpha_bar(alpha_bar)
        w, v_mean_k, v_var_k = self._posterior_pieces(ab, pts)
        mean = np.einsum("nm,nmd->nd", w, v_mean_k)
        second = np.einsum("nm,nmi,nmj->nij", w, v_mean_k, v_mean_k)
        iso = w @ v_var_k
        second += iso[:, None, None] * np.eye(self.dim)[None, :, :]
        return mean, second

    def sample_posterior_x0(self, alpha_bar: float, x: np.ndarray, normals: np.ndarray, uniforms: np.ndarray):
        """Draw ``X0 | X(ab) = x`` for each point from supplied standard normals / uniforms.

        ``normals`` has shape ``(n, s, d)`` and ``uniforms`` ``(n, s)``; returns ``(n, s, d)``.
        """
        ab = _check_alpha_bar(alpha_bar)
        w, v_mean_k, v_var_k = self._posterior_pieces(ab, x)
        cdf = np.cumsum(w, axis=1)
        comp = (uniforms[:, :, None] > cdf[:, None, :]).sum(axis=2)
        comp = np.minimum(comp, self.n_components - 1)
        rows = np.arange(x.shape[0])[:, None]
        v_mean = v_mean_k[rows, comp]
        v_sd = np.sqrt(v_var_k[comp])
        v = v_mean + v_sd[..., None] * normals
        return (x[:, None, :] - v) / math.sqrt(ab)

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class AtomicTarget(_MixtureTarget):
    """Finite atomic law: ``P(X0 = atoms[i]) = weights[i]``, all atoms inside ``radius``."""

    atoms: np.ndarray
    weights: np.ndarray
    radius: float

    def __init__(self, atoms, weights=None, radius: float | None = None):
        atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
        if atoms.ndim != 2 or atoms.shape[0] == 0:
            raise ValueError("atoms must be a non-empty (n, d) array")
        n = atoms.shape[0]
        w = np.full(n, 1.0 / n) if weights is None else _simplex(weights, n, "AtomicTarget")
        norms = np.linalg.norm(atoms, axis=1)
        if radius is None:
            radius = float(norms.max())
        if np.any(norms > radius * (1 + 1e-12) + 1e-300):
            raise ValueError(f"atom norm {norms.max():.6g} exceeds radius {radius:.6g}")
        for arr in (atoms, w):
            arr.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "radius", float(radius))

    @property
    def means(self) -> np.ndarray:
        return self.atoms

    @property
    def variances(self) -> np.ndarray:
        return np.zeros(self.atoms.shape[0])

    def to_dict(self) -> dict:
        return {
            "kind": "atomic",
            "atoms": self.atoms.tolist(),
            "weights": self.weights.tolist(),
            "radius": self.radius,
        }


@dataclass(frozen=True, eq=False)
class GaussianMixtureTarget(_MixtureTarget):
    """Isotropic Gaussian mixture ``sum_k w_k N(means[k], variances[k] I)``.

    Boundedness holds only approximately; :meth:`mass_outside_radius` reports it.
    """

    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray
    radius: float

    def __init__(self, means, variances, weights=None, radius: float | None = None):
        means = np.atleast_2d(np.asarray(means, dtype=float))
        m = means.shape[0]
        var = np.broadcast_to(np.asarray(variances, dtype=float), (m,)).copy()
        if np.any(~(var > 0)):
            raise ValueError("GaussianMixtureTarget variances must be positive")
        w = np.full(m, 1.0 / m) if weights is None else _simplex(weights, m, "GaussianMixtureTarget")
        if radius is None:
            radius = float(np.max(np.linalg.norm(means, axis=1) + 4.0 * np.sqrt(var * means.shape[1])))
        for arr in (means, var, w):
            arr.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", var)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "radius", float(radius))

    def mass_outside_radius(self) -> float:
        """Exact ``P(||X0|| > radius)`` via the non-central chi-square law of each component."""
        nc = np.sum(self.means**2, axis=1) / self.variances
        tail = stats.ncx2.sf(self.radius**2 / self.variances, self.dim, nc)
        return float(self.weights @ tail)

    def boundedness_note(self) -> str:
        return f"approximate (mass outside R={self.radius:g} is {100 * self.mass_outside_radius():.3g}%)"

    def to_dict(self) -> dict:
        return {
            "kind": "gaussian_mixture",
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "weights": self.weights.tolist(),
            "radius": self.radius,
        }


Target = AtomicTarget | GaussianMixtureTarget


def point_mass(point) -> AtomicTarget:
    return AtomicTarget(np.atleast_2d(point), [1.0])


def target_from_dict(spec: dict) -> Target:
    """Build a target from the documented keys (kind, atoms/means, weights, variances, radius)."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValueError("target definition needs a 'kind' key")
    kind = str(spec["kind"]).lower()
    allowed = {"kind", "atoms", "means", "weights", "variances", "radius"}
    unknown = set(spec) - allowed
    if unknown:
        raise ValueError(f"unknown target keys: {sorted(unknown)}")
    if kind == "atomic":
        if "atoms" not in spec:
            raise ValueError("atomic target needs 'atoms'")
        return AtomicTarget(spec["atoms"], spec.get("weights"), spec.get("radius"))
    if kind in ("gaussian_mixture", "gmm"):
        if "means" not in spec or "variances" not in spec:
            raise ValueError("gaussian_mixture target needs 'means' and 'variances'")
        return GaussianMixtureTarget(spec["means"], spec["variances"], spec.get("weights"), spec.get("radius"))
    raise ValueError(f"unknown target kind {kind!r} (expected 'atomic' or 'gaussian_mixture')")


def load_target(path) -> Target:
    """Load a target definition file (YAML/JSON mapping)."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"target file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        spec = yaml.safe_load(fh)
    return target_from_dict(spec)


# Module-level aliases matching the operation names used across the package.
def sample_x0(target: Target, n: int, rng: np.random.Generator) -> np.ndarray:
    return target.sample_x0(n, rng)


def smoothed_log_density(target: Target, alpha_bar: float, x):
    return target.smoothed_log_density(alpha_bar, x)


def posterior(target: Target, alpha_bar: float, x) -> SmoothedPosterior:
    return target.posterior(alpha_bar, x)


def posterior_mean_x0(target: Target, alpha_bar: float, x):
    return target.posterior_mean_x0(alpha_bar, x)
