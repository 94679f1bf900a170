"""Iterative consistency training and one-shot sampling.

``f_1`` is the identity and, for ``t = 2, ..., T`` in order, ``f_t`` is fitted to
minimise ``E || f(X_t) - f_{t-1}(X_{t-1}) ||^2`` over shared-noise pairs.  The
population minimiser is the conditional mean ``f_t^*(x) = E[f_{t-1}(X_{t-1}) | X_t = x]``.

Function classes (:class:`RegressorSpec.kind`):

``exact_oracle``
    ``f_t = f_t^*`` computed from the closed-form posterior.  For targets with an
    affine posterior mean (one component) the stack stays affine.  For atomic
    targets the conditional mean is exact but a chain of exact steps branches
    over atoms at every level; ``grid_size > 0`` materialises each step as a
    table on the span of the atoms (the orthogonal complement is only rescaled),
    which keeps the cost linear in ``T``.
``knn_kernel``
    k-nearest-neighbour (optionally Gaussian-kernel weighted) regression.
``linear_features``
    least squares on the features ``(1, x)``.
"""

from __future__ import annotations

import io
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.spatial import cKDTree

from .forward import CoupledPair, sample_marginal, sample_shared_noise_pair
from .rng import make_rng
from .schedule import Schedule, build_schedule
from .targets import _as_points, target_from_dict

STACK_FORMAT = "consistency-lab-stack"
STACK_VERSION = 1
KINDS = ("exact_oracle", "knn_kernel", "linear_features")


class TrainingError(RuntimeError):
    def __init__(self, t: int, cause: Exception):
        super().__init__(f"training failed at step t={t}: {cause}")
        self.t = t


class OracleBudgetError(RuntimeError):
    pass


@dataclass(frozen=True)
class RegressorSpec:
    kind: str = "exact_oracle"
    k: int = 32
    bandwidth: float | None = None
    training_batch: int = 10_000
    ridge: float = 0.0
    grid_size: int = 0
    grid_margin: float = 10.0
    mc_samples: int = 256
    max_oracle_points: int = 20_000_000

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"regressor kind must be one of {KINDS}, got {self.kind!r}")
        if self.training_batch < 1:
            raise ValueError("training_batch must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")
        if self.grid_size < 0 or self.grid_size == 1:
            raise ValueError("grid_size must be 0 (off) or >= 2")

    def describe(self) -> str:
        if self.kind == "exact_oracle":
            return f"exact_oracle(grid={self.grid_size})" if self.grid_size else "exact_oracle"
        if self.kind == "knn_kernel":
            bw = "uniform" if self.bandwidth is None else f"h={self.bandwidth:g}"
            return f"knn_kernel(k={self.k},{bw},batch={self.training_batch})"
        return f"linear_features(ridge={self.ridge:g},batch={self.training_batch})"


# --------------------------------------------------------------------------- maps
class AffineMap:
    """``x -> A x + b``."""

    is_affine = True

    def __init__(self, A, b):
        self.A = np.asarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)

    @classmethod
    def identity(cls, d: int) -> "AffineMap":
        return cls(np.eye(d), np.zeros(d))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.A.T + self.b

    def arrays(self):
        return {"A": self.A, "b": self.b}


class OracleStep:
    """``x -> f_t^*(x)`` evaluated exactly over a previous map ``prev``."""

    is_affine = False

    def __init__(self, target, schedule, t, prev, spec: RegressorSpec = RegressorSpec()):
        self.target, self.schedule, self.t, self.prev, self.spec = target, schedule, t, prev, spec

    def __call__(self, x):
        return f_star(self.target, self.schedule, self.t, self.prev, x, max_points=self.spec.max_oracle_points,
                      mc_samples=self.spec.mc_samples)

    def arrays(self):
        return {}


class TabulatedMap:
    """``x -> rho * P_perp x + U h(U^T x)`` with ``h`` tabulated on a regular grid.

    Points outside the grid box are handed to ``fallback``.
    """

    is_affine = False

    def __init__(self, basis, rho, axes, values, fallback=None):
        self.basis = np.asarray(basis, dtype=float)
        self.rho = float(rho)
        self.axes = [np.asarray(a, dtype=float) for a in axes]
        self.values = np.asarray(values, dtype=float)
        self.fallback = fallback
        m = self.basis.shape[1]
        if m == 1:
            self._interp = None
        else:
            self._interp = RegularGridInterpolator(tuple(self.axes), self.values, method="linear")

    def _h(self, s):
        if self._interp is None:
            return np.interp(s[:, 0], self.axes[0], self.values[:, 0])[:, None]
        return self._interp(s)

    def __call__(self, x):
        pts, single = _as_points(x, self.basis.shape[0])
        s = pts @ self.basis
        out = self.rho * (pts - s @ self.basis.T)
        lo = np.array([a[0] for a in self.axes])
        hi = np.array([a[-1] for a in self.axes])
        inside = np.all((s >= lo) & (s <= hi), axis=1)
        if np.any(inside):
            out[inside] += self._h(s[inside]) @ self.basis.T
        if not np.all(inside):
            if self.fallback is None:
                raise ValueError("query outside the tabulated box and no fallback is set")
            out[~inside] = self.fallback(pts[~inside])
        return out[0] if single else out

    def arrays(self):
        out = {"basis": self.basis, "rho": np.array(self.rho), "values": self.values}
        for i, a in enumerate(self.axes):
            out[f"axis{i}"] = a
        return out


class KnnKernelMap:
    """Nadaraya-Watson regression over the ``k`` nearest training inputs."""

    is_affine = False

    def __init__(self, train_x, train_y, k: int, bandwidth: float | None = None):
        self.train_x = np.asarray(train_x, dtype=float)
        self.train_y = np.asarray(train_y, dtype=float)
        self.k = int(min(k, self.train_x.shape[0]))
        self.bandwidth = bandwidth
        self._tree = cKDTree(self.train_x)

    def __call__(self, x):
        pts, single = _as_points(x, self.train_x.shape[1])
        dist, idx = self._tree.query(pts, k=self.k)
        if self.k == 1:
            dist, idx = dist[:, None], idx[:, None]
        if self.bandwidth is None:
            w = np.full(dist.shape, 1.0 / self.k)
        else:
            logw = -0.5 * (dist**2 - dist[:, :1] ** 2) / self.bandwidth**2
            w = np.exp(logw)
            w /= w.sum(axis=1, keepdims=True)
        out = np.einsum("nk,nkd->nd", w, self.train_y[idx])
        return out[0] if single else out

    def arrays(self):
        return {"train_x": self.train_x, "train_y": self.train_y}


# ------------------------------------------------------------------ the target f*
def _step_coefficients(schedule, t):
    ab_t, ab_p = schedule.alpha_bar_at(t), schedule.alpha_bar_at(t - 1)
    r = math.sqrt((1.0 - ab_p) / (1.0 - ab_t))
    c = math.sqrt(ab_p) - r * math.sqrt(ab_t)
    return ab_t, r, c


def conditional_mean_prev(target, schedule, t: int, x):
    """``E[X_{t-1} | X_t = x]`` under the shared-noise coupling.

    Eliminating ``Z`` gives ``X_{t-1} = r x + c X0`` with
    ``r = sqrt((1-ab_{t-1})/(1-ab_t))`` and ``c = sqrt(ab_{t-1}) - r sqrt(ab_t)``.
    """
    ab_t, r, c = _step_coefficients(schedule, t)
    return r * np.asarray(x, dtype=float) + c * target.posterior_mean_x0(ab_t, x)


def f_star(target, schedule, t: int, f_prev, x, *, rng=None, mc_samples: int = 256,
           max_points: int = 20_000_000, prune: float = 1e-18):
    """``E[f_prev(X_{t-1}) | X_t = x]`` under the shared-noise coupling.

    * affine ``f_prev``: exact for every target via the posterior mean;
    * atomic target: exact finite sum over atoms (weights below ``prune`` are
      skipped; their contribution is below double precision);
    * Gaussian mixture with non-affine ``f_prev``: Monte-Carlo over exact
      posterior draws of ``X0`` (seeded, so the map is deterministic).
    """
    t = int(t)
    if not 2 <= t <= schedule.T:
        raise IndexError(f"f_star needs 2 <= t <= T, got t={t}")
    pts, single = _as_points(x, target.dim)
    if not np.all(np.isfinite(pts)):
        raise ValueError("f_star: query points must be finite")
    ab_t, r, c = _step_coefficients(schedule, t)

    if getattr(f_prev, "is_affine", False):
        out = f_prev(conditional_mean_prev(target, schedule, t, pts))
    elif target.is_atomic:
        post = target.posterior(ab_t, pts)
        w = post.weights
        active = w > prune
        n_eval = int(active.sum())
        if n_eval > max_points:
            raise OracleBudgetError(
                f"exact oracle at t={t} needs {n_eval} evaluations of f_{t - 1} (budget {max_points}); "
                "set grid_size > 0 to tabulate the stack"
            )
        rows, comps = np.nonzero(active)
        pre = r * pts[rows] + c * target.atoms[comps]
        vals = f_prev(pre)
        out = np.zeros_like(pts)
        np.add.at(out, rows, w[rows, comps][:, None] * vals)
        out /= np.bincount(rows, weights=w[rows, comps], minlength=pts.shape[0])[:, None]
    else:
        if pts.shape[0] * mc_samples > max_points:
            raise OracleBudgetError(f"Monte-Carlo oracle at t={t} exceeds budget {max_points}")
        rng = make_rng(0, "f_star", t) if rng is None else rng
        n = pts.shape[0]
        normals = rng.standard_normal((n, mc_samples, target.dim))
        uniforms = rng.random((n, mc_samples))
        x0 = target.sample_posterior_x0(ab_t, pts, normals, uniforms)
        pre = r * pts[:, None, :] + c * x0
        vals = f_prev(pre.reshape(-1, target.dim)).reshape(n, mc_samples, target.dim)
        out = vals.mean(axis=1)
    return out[0] if single else out


# ------------------------------------------------------------------- fitting
def _affine_from_samples(fn, d):
    """Recover ``A, b`` of an exactly affine ``fn`` from ``d + 1`` evaluations."""
    probes = np.vstack([np.zeros(d), np.eye(d)])
    vals = fn(probes)
    b = vals[0]
    A = (vals[1:] - b).T
    return AffineMap(A, b)


def atom_span_basis(target, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis ``(d, m)`` of the linear span of the atoms."""
    atoms = target.atoms
    if atoms.shape[0] == 0:
        return np.zeros((target.dim, 0))
    u, sv, _ = np.linalg.svd(atoms.T, full_matrices=False)
    rank = int(np.sum(sv > tol * max(sv.max(), 1.0)))
    return u[:, :rank]


def _tabulate(target, schedule, t, prev, spec, rho_prev):
    basis = atom_span_basis(target)
    m = basis.shape[1]
    if m == 0 or m > 2:
        raise ValueError(f"tabulation supports atom spans of dimension 1 or 2, got {m}")
    _, r, _ = _step_coefficients(schedule, t)
    half = target.radius + spec.grid_margin
    n = spec.grid_size
    axes = [np.linspace(-half, half, n) for _ in range(m)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
    oracle = OracleStep(target, schedule, t, prev, spec)
    vals = oracle(mesh @ basis.T) @ basis
    values = vals.reshape(*([n] * m), m)
    return TabulatedMap(basis, r * rho_prev, axes, values, fallback=oracle)


def _fit_linear(x, y, ridge):
    n, d = x.shape
    feats = np.hstack([np.ones((n, 1)), x])
    gram = feats.T @ feats
    penalty = np.eye(d + 1)
    penalty[0, 0] = 0.0
    gram_r = gram + ridge * penalty
    if np.linalg.cond(gram_r) > 1e12:
        lam = max(ridge, 1e-8 * max(np.trace(gram) / (d + 1), 1.0))
        warnings.warn(f"singular normal equations (n={n}); using ridge {lam:.3g}", RuntimeWarning, stacklevel=3)
        gram_r = gram + lam * np.eye(d + 1)
    coef = np.linalg.solve(gram_r, feats.T @ y)
    return AffineMap(coef[1:].T, coef[0])


def fit_step(target, schedule, t: int, f_prev, spec: RegressorSpec, rng: np.random.Generator, rho_prev: float = 1.0):
    """Fit ``f_t`` against the already-fitted ``f_prev``."""
    t = int(t)
    if not 2 <= t <= schedule.T:
        raise IndexError(f"fit_step needs 2 <= t <= T, got t={t}")
    if spec.kind == "exact_oracle":
        if getattr(f_prev, "is_affine", False) and target.affine_posterior:
            return _affine_from_samples(lambda z: f_star(target, schedule, t, f_prev, z), target.dim)
        if spec.grid_size and target.is_atomic:
            return _tabulate(target, schedule, t, f_prev, spec, rho_prev)
        return OracleStep(target, schedule, t, f_prev, spec)

    batch = sample_shared_noise_pair(target, schedule, t, spec.training_batch, rng)
    y = f_prev(batch.x_tm1)
    if spec.kind == "knn_kernel":
        model = KnnKernelMap(batch.x_t, y, spec.k, spec.bandwidth)
    else:
        model = _fit_linear(batch.x_t, y, spec.ridge)
    model.batch = batch
    return model


# ------------------------------------------------------------------- the stack
@dataclass(eq=False)
class ConsistencyStack:
    """``models[t]`` for ``t = 1..T`` (``models[0]`` unused, ``models[1]`` the identity)."""

    target: object
    schedule: Schedule
    spec: RegressorSpec
    models: list = field(default_factory=list)

    @property
    def T(self) -> int:
        return self.schedule.T

    def __call__(self, x, t: int | None = None):
        return self.models[self.T if t is None else int(t)](x)

    def describe(self) -> str:
        return self.spec.describe()


def train_stack(target, schedule, spec: RegressorSpec, rng: np.random.Generator, progress=None) -> ConsistencyStack:
    """Fit ``f_2, ..., f_T`` strictly in order, each against the previous fitted map."""
    models = [None, AffineMap.identity(target.dim)]
    rho = 1.0
    for t in range(2, schedule.T + 1):
        try:
            model = fit_step(target, schedule, t, models[t - 1], spec, rng, rho_prev=rho)
        except (OracleBudgetError, ValueError, np.linalg.LinAlgError) as exc:
            raise TrainingError(t, exc) from exc
        rho = getattr(model, "rho", rho)
        models.append(model)
        if progress is not None:
            progress(t)
    return ConsistencyStack(target, schedule, spec, models)


def one_shot_sample(stack: ConsistencyStack, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``X_T ~ N(0, I)`` and return ``f_T(X_T)``."""
    d = stack.target.dim
    x_T = rng.standard_normal((int(n), d))
    if n == 0:
        return x_T
    return np.asarray(stack(x_T))


@dataclass(frozen=True)
class ErrorReport:
    per_step: dict
    total: float

    def rows(self):
        return [{"t": t, "mean_distance": v} for t, v in sorted(self.per_step.items())]


def estimation_error(stack: ConsistencyStack, target, schedule, n_eval: int, rng: np.random.Generator) -> ErrorReport:
    """Per-step mean ``|| f_t(X_t) - f_t^*(X_t) ||`` on fresh marginal draws, and their sum."""
    per_step = {}
    for t in range(2, schedule.T + 1):
        x = sample_marginal(target, schedule, t, n_eval, rng)
        got = stack.models[t](x)
        want = f_star(target, schedule, t, stack.models[t - 1], x, mc_samples=stack.spec.mc_samples,
                      max_points=stack.spec.max_oracle_points)
        per_step[t] = float(np.mean(np.linalg.norm(got - want, axis=1)))
    return ErrorReport(per_step, float(sum(per_step.values())))


# ------------------------------------------------------------- persistence
def _model_kind(model) -> str:
    return {AffineMap: "affine", OracleStep: "oracle", TabulatedMap: "table", KnnKernelMap: "knn"}[type(model)]


def save_stack(stack: ConsistencyStack, path) -> None:
    """Write a versioned ``.npz`` container (JSON header + per-step arrays)."""
    header = {
        "format": STACK_FORMAT,
        "version": STACK_VERSION,
        "schedule": stack.schedule.params(),
        "target": stack.target.to_dict(),
        "spec": asdict(stack.spec),
        "models": [],
    }
    arrays = {}
    for t in range(1, stack.T + 1):
        model = stack.models[t]
        entry = {"t": t, "kind": _model_kind(model), "arrays": []}
        if isinstance(model, KnnKernelMap):
            entry.update(k=model.k, bandwidth=model.bandwidth)
        for name, arr in model.arrays().items():
            arrays[f"m{t}_{name}"] = arr
            entry["arrays"].append(name)
        header["models"].append(entry)
    buf = io.BytesIO()
    np.savez(buf, header=np.array(json.dumps(header, sort_keys=True)), **arrays)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(buf.getvalue())


def load_stack(path) -> ConsistencyStack:
    with np.load(path, allow_pickle=False) as data:
        try:
            header = json.loads(str(data["header"]))
        except KeyError:
            raise ValueError(f"{path}: not a stack container (no header)") from None
        if header.get("format") != STACK_FORMAT:
            raise ValueError(f"{path}: unknown container format {header.get('format')!r}")
        if header.get("version") != STACK_VERSION:
            raise ValueError(f"{path}: stack version {header.get('version')!r} != supported {STACK_VERSION}")
        arrays = {k: data[k] for k in data.files if k != "header"}
    target = target_from_dict(header["target"])
    sp = header["schedule"]
    schedule = build_schedule(sp["T"], sp["c0"], sp["c1"])
    spec = RegressorSpec(**header["spec"])
    models = [None]
    for entry in header["models"]:
        t = entry["t"]
        a = {name: arrays[f"m{t}_{name}"] for name in entry["arrays"]}
        kind = entry["kind"]
        if kind == "affine":
            model = AffineMap(a["A"], a["b"])
        elif kind == "oracle":
            model = OracleStep(target, schedule, t, models[t - 1], spec)
        elif kind == "table":
            axes = [a[f"axis{i}"] for i in range(a["basis"].shape[1])]
            model = TabulatedMap(a["basis"], float(a["rho"]), axes, a["values"],
                                 fallback=OracleStep(target, schedule, t, models[t - 1], spec))
        elif kind == "knn":
            model = KnnKernelMap(a["train_x"], a["train_y"], entry["k"], entry["bandwidth"])
        else:
            raise ValueError(f"{path}: unknown model kind {kind!r}")
        models.append(model)
    return ConsistencyStack(target, schedule, spec, models)
