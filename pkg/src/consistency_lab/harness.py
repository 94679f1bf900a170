"""Experiment drivers behind the command line.

Every driver takes an :class:`ExperimentConfig`, writes CSV files under
``cfg.out`` and returns an exit status (0 ok, 1 an asserted check failed).
CSV output is a pure function of the config and seed; wall-clock timings only
go to the console.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy import stats

from .checks import (
    TypicalEventConfig,
    check_conditional_mean,
    check_discretization_shape,
    check_jacobian_identity,
    check_marginal_preservation,
    check_one_step_jacobian,
    check_score_moment,
    estimate_lipschitz,
    global_lipschitz,
    typical_event_probability,
)
from .config import ExperimentConfig
from .consistency import estimation_error, load_stack, one_shot_sample, save_stack, train_stack
from .flow import FlowConfig
from .forward import sample_marginal
from .reports import FAIL, PASS, REPORT_ONLY, CheckReport, write_csv
from .rng import make_rng
from .schedule import build_schedule, verify_schedule_properties
from .targets import load_target
from .transport import sliced_w1, w1_assignment, w1_exact_1d

SCALING_COLUMNS = [
    "T", "d", "c0", "c1", "terminal_exponent", "regressor", "integrator", "lipschitz", "eps_hat",
    "w1", "w1_se", "floor", "estimator", "n", "w1_assignment", "floor_assignment", "assignment_n", "seed",
]


def _log(msg: str, quiet: bool) -> None:
    if not quiet:
        print(msg, flush=True)


def _out(cfg: ExperimentConfig) -> Path:
    path = Path(cfg.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _merge(name: str, reports: list[CheckReport]) -> CheckReport:
    rows = [r for rep in reports for r in rep.rows]
    verdicts = {rep.verdict for rep in reports}
    verdict = FAIL if FAIL in verdicts else PASS if PASS in verdicts else REPORT_ONLY
    out = CheckReport(name, reports[0].columns, rows, verdict, reports[0].tolerances)
    for rep in reports:
        out.notes.extend(rep.notes)
    return out


# ------------------------------------------------------------------ schedule
def run_schedule(cfg: ExperimentConfig, quiet: bool = False) -> int:
    s = build_schedule(cfg.T, cfg.c0, cfg.c1)
    out = _out(cfg)
    write_csv(out / "schedule.csv", ["t", "beta", "alpha", "alpha_bar"], s.rows())
    rep = verify_schedule_properties(s)
    rep.to_csv(out / "schedule_properties.csv")
    _log(rep.summary(), quiet)
    return 0 if rep.passed else 1


# ------------------------------------------------------------------ verify
def _verify_reports(cfg: ExperimentConfig):
    target = load_target(cfg.target)
    s = build_schedule(cfg.T, cfg.c0, cfg.c1)
    T = s.T
    t_list = sorted({2, max(2, T // 4), max(2, T // 2), T})
    seed = cfg.seed
    check_cfg = FlowConfig(cfg.check_substeps, cfg.integrator)

    yield verify_schedule_properties(s)
    yield check_score_moment(target, s, t_list, cfg.check_n, make_rng(seed, "verify", "score_moment"))

    rng = make_rng(seed, "verify", "jacobian")
    jac = []
    for t in t_list:
        q = sample_marginal(target, s, t, 1000, rng)
        jac.append(check_jacobian_identity(target, s, t, q))
    yield _merge("jacobian_identity", jac)

    if target.is_atomic:
        rng = make_rng(seed, "verify", "conditional_mean")
        q = 2.0 * rng.standard_normal((1000, target.dim))
        yield check_conditional_mean(target, s, range(2, T + 1), q)
        yield check_discretization_shape(target, s, 200, FlowConfig(64, cfg.integrator),
                                         make_rng(seed, "verify", "discretization"))

    yield check_marginal_preservation(target, s, [(T, 1)], cfg.check_n, check_cfg, make_rng(seed, "verify", "marginal"),
                                      n_projections=cfg.n_projections, floor_replicates=cfg.floor_replicates)
    yield estimate_lipschitz(target, s, [(T, 1), (max(2, T // 2), 1)], cfg.lipschitz_points, cfg.flow_config(),
                             make_rng(seed, "verify", "lipschitz"))
    yield check_one_step_jacobian(target, s, t_list, cfg.lipschitz_points, cfg.flow_config(),
                                  make_rng(seed, "verify", "one_step_jacobian"))
    ev = TypicalEventConfig(cfg.c3, cfg.c4)
    rng = make_rng(seed, "verify", "typical_event")
    yield _merge("typical_event", [typical_event_probability(target, s, t, cfg.check_n, ev, rng) for t in t_list])


def run_verify(cfg: ExperimentConfig, quiet: bool = False) -> tuple[int, list[CheckReport]]:
    out = _out(cfg) / "verify"
    reports = []
    for rep in _verify_reports(cfg):
        rep.to_csv(out / f"{rep.name}.csv")
        _log(rep.summary(), quiet)
        reports.append(rep)
    failed = [r.name for r in reports if not r.passed]
    _log("all asserted checks passed" if not failed else f"failed: {', '.join(failed)}", quiet)
    return (1 if failed else 0), reports


# ------------------------------------------------------------------ train / sample
def run_train(cfg: ExperimentConfig, quiet: bool = False) -> int:
    target = load_target(cfg.target)
    s = build_schedule(cfg.T, cfg.c0, cfg.c1)
    spec = cfg.regressor_spec()
    start = time.perf_counter()
    stack = train_stack(target, s, spec, make_rng(cfg.seed, "train"))
    path = cfg.stack_path()
    save_stack(stack, path)
    rows = [{"t": t, "model": type(stack.models[t]).__name__, "regressor": spec.describe(), "seed": cfg.seed}
            for t in range(1, s.T + 1)]
    write_csv(_out(cfg) / "train.csv", ["t", "model", "regressor", "seed"], rows)
    _log(f"trained {spec.describe()} stack, T={s.T}, in {time.perf_counter() - start:.2f}s -> {path}", quiet)
    return 0


def run_sample(cfg: ExperimentConfig, quiet: bool = False) -> int:
    stack = load_stack(cfg.stack_path())
    n = cfg.n_samples
    pts = one_shot_sample(stack, n, make_rng(cfg.seed, "sample"))
    d = stack.target.dim
    cols = ["index"] + [f"coord_{i}" for i in range(d)] + ["seed"]
    rows = [{"index": i, **{f"coord_{j}": float(p[j]) for j in range(d)}, "seed": cfg.seed} for i, p in enumerate(pts)]
    write_csv(_out(cfg) / "samples.csv", cols, rows)
    _log(f"wrote {n} one-shot samples from {cfg.stack_path()}", quiet)
    return 0


# ------------------------------------------------------------------ scaling
def _floor(draw, estimator, replicates):
    return float(np.mean([estimator(draw(), draw()) for _ in range(replicates)]))


def scaling_cell(cfg: ExperimentConfig, T: int) -> dict:
    """One row of the scaling study: train at ``T``, sample once, measure ``W1`` to fresh ``X_1``.

    With ``common_random_numbers`` the random streams are keyed by role only, so
    every ``T`` reuses the same Gaussian inputs; otherwise they are keyed by ``T`` too.
    """
    target = load_target(cfg.target)
    s = build_schedule(T, cfg.c0, cfg.c1)
    key = () if cfg.common_random_numbers else (T,)

    def rng(role):
        return make_rng(cfg.seed, "scaling", role, *key)

    stack = train_stack(target, s, cfg.regressor_spec(), rng("train"))
    n = cfg.n_samples
    gen = one_shot_sample(stack, n, rng("noise"))
    fresh = sample_marginal(target, s, 1, n, rng("fresh"))
    floor_rng = rng("floor")

    def draw():
        return sample_marginal(target, s, 1, n, floor_rng)

    proj_rng = rng("projections")
    sw, sw_se = sliced_w1(gen, fresh, cfg.n_projections, proj_rng)
    sw_floor = _floor(draw, lambda a, b: sliced_w1(a, b, cfg.n_projections, proj_rng)[0], cfg.floor_replicates)

    m = min(cfg.assignment_n, n)
    exact = w1_exact_1d if target.dim == 1 else w1_assignment
    wa = exact(gen[:m], fresh[:m])
    fa_rng = rng("floor_assignment")
    wa_floor = float(np.mean([exact(sample_marginal(target, s, 1, m, fa_rng), sample_marginal(target, s, 1, m, fa_rng))
                              for _ in range(cfg.floor_replicates)]))

    if cfg.metric == "assignment" or (cfg.metric == "auto" and target.dim == 1):
        w1, w1_se, floor, est, n_used = wa, 0.0, wa_floor, "exact_1d" if target.dim == 1 else "assignment", m
    else:
        w1, w1_se, floor, est, n_used = sw, sw_se, sw_floor, "sliced", n

    eps = estimation_error(stack, target, s, cfg.eps_eval_n, rng("eps")).total
    lip = global_lipschitz(estimate_lipschitz(target, s, [(T, 1)], cfg.lipschitz_points, cfg.flow_config(), rng("lipschitz")))
    return {
        "T": T, "d": target.dim, "c0": cfg.c0, "c1": cfg.c1, "terminal_exponent": s.terminal_exponent,
        "regressor": cfg.regressor_spec().describe(),
        "integrator": cfg.flow_config().describe(), "lipschitz": lip, "eps_hat": eps, "w1": w1, "w1_se": w1_se,
        "floor": floor, "estimator": est, "n": n_used, "w1_assignment": wa, "floor_assignment": wa_floor,
        "assignment_n": m, "seed": cfg.seed,
    }


def _cell_entry(args):
    cfg, T = args
    start = time.perf_counter()
    row = scaling_cell(cfg, T)
    write_csv(Path(cfg.out) / "scaling_cells" / f"T{T}.csv", SCALING_COLUMNS, [row])
    return row, time.perf_counter() - start


def fit_slope(rows, eps_fraction: float = 0.5, confidence: float = 0.95) -> dict:
    """Log-log least-squares slope of ``w1`` against ``T``.

    Rows whose ``eps_hat`` exceeds ``eps_fraction * w1`` are dominated by the
    estimation error and are left out of the fit.
    """
    used = [r for r in rows if r["eps_hat"] <= eps_fraction * r["w1"]]
    w = [r["w1"] for r in rows]
    summary = {
        "rows": len(rows), "rows_fit": len(used),
        "strictly_decreasing": all(b < a for a, b in zip(w, w[1:])),
        "slope": math.nan, "slope_se": math.nan, "ci_low": math.nan, "ci_high": math.nan,
        "confidence": confidence, "flag": "",
    }
    if len(used) < 3:
        summary["flag"] = "too few rows for a slope fit"
        return summary
    fit = stats.linregress(np.log([r["T"] for r in used]), np.log([r["w1"] for r in used]))
    half = stats.t.ppf(0.5 + confidence / 2, len(used) - 2) * fit.stderr
    summary.update(slope=float(fit.slope), slope_se=float(fit.stderr), ci_low=float(fit.slope - half),
                   ci_high=float(fit.slope + half))
    if summary["ci_low"] <= 0.0 <= summary["ci_high"]:
        summary["flag"] = "rate masked by statistical floor"
    return summary


def run_scaling(cfg: ExperimentConfig, quiet: bool = False) -> tuple[int, list[dict], dict]:
    if len(cfg.T_list) < 3:
        raise ValueError("scaling needs a T_list with at least 3 entries")
    out = _out(cfg)
    jobs = [(cfg, T) for T in cfg.T_list]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_cell_entry, jobs))
    else:
        results = [_cell_entry(job) for job in jobs]
    rows = sorted((r for r, _ in results), key=lambda r: r["T"])
    for (row, secs) in sorted(results, key=lambda rs: rs[0]["T"]):
        _log(f"T={row['T']:>5}  W1={row['w1']:.5f} ({row['estimator']}, floor {row['floor']:.5f})  "
             f"W1_assign={row['w1_assignment']:.5f} (floor {row['floor_assignment']:.5f})  "
             f"eps={row['eps_hat']:.2e}  L={row['lipschitz']:.3f}  [{secs:.1f}s]", quiet)
    write_csv(out / "scaling.csv", SCALING_COLUMNS, rows)
    summary = fit_slope(rows, cfg.eps_fraction)
    write_csv(out / "scaling_summary.csv", ["key", "value"], [{"key": k, "value": v} for k, v in summary.items()])
    _log(f"log-log slope {summary['slope']:.3f} "
         f"[{summary['ci_low']:.3f}, {summary['ci_high']:.3f}] {summary['flag']}".rstrip(), quiet)
    return 0, rows, summary
