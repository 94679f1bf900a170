"""Acceptance criteria 1 to 11.

Each test prints one ``PASS``/``FAIL`` line (outside pytest's capture) and then
asserts the criterion as stated. Criterion 9 is known to fail on two of its three
parts; the reasons are measured and printed rather than hidden.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from consistency_lab import (
    AtomicTarget,
    GaussianMixtureTarget,
    RegressorSpec,
    build_schedule,
    flow,
    phi_step,
    train_stack,
    verify_schedule_properties,
)
from consistency_lab.checks import check_conditional_mean, check_jacobian_identity, check_marginal_preservation, check_score_moment
from consistency_lab.cli import main
from consistency_lab.config import DEFAULT_CONFIG, load_config
from consistency_lab.consistency import estimation_error
from consistency_lab.flow import FlowConfig
from consistency_lab.forward import sample_marginal
from consistency_lab.harness import fit_slope, run_scaling
from consistency_lab.rng import make_rng
from consistency_lab.score import score, score_jacobian, score_jacobian_fd, score_mc_estimate
from consistency_lab.targets import load_target, point_mass

DATA = Path(DEFAULT_CONFIG).parent


@pytest.fixture
def verdict(capsys):
    def emit(n, passed, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if passed else 'FAIL'} criterion {n}: {detail}")
        return passed

    return emit


def random_target(rng, gaussian_share=0.0):
    d = int(rng.integers(1, 4))
    m = int(rng.integers(1, 5))
    means = 1.5 * rng.standard_normal((m, d))
    w = rng.dirichlet(np.ones(m))
    if rng.random() < gaussian_share:
        return GaussianMixtureTarget(means, rng.uniform(0.2, 1.5, m), w)
    return AtomicTarget(means, w)


def test_criterion_01_schedule_properties(verdict):
    start = time.perf_counter()
    reports = {T: verify_schedule_properties(build_schedule(T, 2.0, 4.0), terminal_exponent=2.0) for T in (100, 1000, 10_000)}
    secs = time.perf_counter() - start
    ok = all(r.passed for r in reports.values()) and secs < 1.0
    failed = [(T, row["property"]) for T, r in reports.items() for row in r.rows if row["passed"] is False]
    verdict(1, ok, f"T in {{1e2, 1e3, 1e4}}, c0=2, c1=4: failing rows {failed or 'none'}; {secs:.3f}s (< 1s)")
    assert ok


def test_criterion_02_score_oracle(verdict):
    rng = make_rng(11, "acceptance", "score")
    worst_z, worst_fd, worst_sym = 0.0, 0.0, 0.0
    for _ in range(50):
        target = random_target(rng)
        ab = float(rng.uniform(0.05, 0.95))
        x = math.sqrt(ab) * target.sample_x0(1, rng)[0] + math.sqrt(1 - ab) * rng.standard_normal(target.dim)
        exact = score(target, ab, x)
        mc = score_mc_estimate(target, ab, x, 1_000_000, rng)
        assert not mc.degenerate
        # a posterior concentrated on one atom makes the MC average deterministic, so SE is
        # pure roundoff; the 1e-9 floor keeps that case from reading as a disagreement
        allowed = 3.0 * mc.stderr + 1e-9 * (1.0 + np.abs(exact))
        worst_z = max(worst_z, float(np.max(3.0 * np.abs(mc.estimate - exact) / allowed)))
        jac = score_jacobian(target, ab, x)
        fd = score_jacobian_fd(target, ab, x)
        worst_fd = max(worst_fd, float(np.linalg.norm(jac - fd) / np.linalg.norm(jac)))
        worst_sym = max(worst_sym, float(np.max(np.abs(jac - jac.T))))
    ok = worst_z <= 3.0 and worst_fd < 1e-4 and worst_sym <= 1e-8
    verdict(2, ok, f"50 configs, N=1e6: max |MC - exact| in SE units (1e-9 roundoff floor) = {worst_z:.2f} (<= 3); "
                   f"FD rel err {worst_fd:.2e} (< 1e-4); asymmetry {worst_sym:.1e} (<= 1e-8)")
    assert ok


def test_criterion_03_jacobian_identity(verdict):
    rng = make_rng(11, "acceptance", "jacobian")
    s = build_schedule(64, 2.0, 4.0)
    worst, n_points = 0.0, 0
    for i in range(10):
        target = random_target(rng, gaussian_share=0.3)
        t = int(rng.integers(1, 65))
        q = sample_marginal(target, s, t, 100, rng)
        rep = check_jacobian_identity(target, s, t, q, tol=1e-8)
        worst = max(worst, rep.rows[0]["max_deviation"])
        n_points += q.shape[0]
    ok = worst < 1e-8
    verdict(3, ok, f"{n_points} points over 10 targets: max ||J_t + (1 - ab_t) grad s_t|| = {worst:.2e} (< 1e-8)")
    assert ok


def test_criterion_04_score_second_moment(verdict):
    rng = make_rng(11, "acceptance", "moment")
    s = build_schedule(64, 2.0, 4.0)
    failures, worst_ratio = 0, 0.0
    for _ in range(200):
        target = random_target(rng, gaussian_share=0.3)
        t = int(rng.integers(1, 65))
        rep = check_score_moment(target, s, [t], 2000, rng, n_se=5.0)
        failures += not rep.passed
        worst_ratio = max(worst_ratio, rep.rows[0]["ratio"])
    pm = check_score_moment(point_mass([0.0, 0.0, 0.0]), s, [2, 16, 64], 100_000, rng)
    pm_dev = max(abs(r["ratio"] - 1.0) for r in pm.rows)
    ok = failures == 0 and pm_dev < 0.02
    verdict(4, ok, f"200 configs: {failures} violations beyond 5 SE, max ratio {worst_ratio:.3f}; "
                   f"point mass |ratio - 1| = {pm_dev:.4f} (< 0.02)")
    assert ok


def test_criterion_05_conditional_mean(verdict):
    rng = make_rng(11, "acceptance", "conditional")
    s = build_schedule(64, 2.0, 4.0)
    worst = 0.0
    for _ in range(4):
        target = random_target(rng)
        q = np.concatenate([sample_marginal(target, s, t, 4, rng) for t in range(1, 65)])[:250]
        q = np.concatenate([q, 3.0 * rng.standard_normal((250 - q.shape[0], target.dim))]) if q.shape[0] < 250 else q
        rep = check_conditional_mean(target, s, range(2, 65), q)
        worst = max(worst, max(r["max_deviation"] for r in rep.rows))
    ok = worst < 1e-8
    verdict(5, ok, f"1000 points, 4 atomic targets, t = 2..64 at T=64: max deviation {worst:.2e} (< 1e-8)")
    assert ok


def _closed_form_flow(kind, s, t, k, x, anchor):
    ab_t, ab_k = s.alpha_bar_at(t), s.alpha_bar_at(k)
    if kind == "gaussian":
        return x + (math.sqrt(ab_k) - math.sqrt(ab_t)) * anchor
    r = math.sqrt((1 - ab_k) / (1 - ab_t))
    return math.sqrt(ab_k) * anchor + r * (x - math.sqrt(ab_t) * anchor)


def test_criterion_06_flow_correctness(verdict):
    rng = make_rng(11, "acceptance", "flow")
    s = build_schedule(64, 2.0, 4.0)
    mu, atom = np.array([1.0, -0.5]), np.array([0.7, 0.2])
    cases = {"gaussian": (GaussianMixtureTarget([mu], 1.0), mu), "point_mass": (point_mass(atom), atom)}
    endpoint, absolute, ratios, semigroup, full = {}, {}, [], 0.0, {}
    for name, (target, anchor) in cases.items():
        errs = {m: 0.0 for m in (4, 8, 16)}
        scaled = 0.0
        for t in range(2, 65):
            x = sample_marginal(target, s, t, 64, rng)
            want = _closed_form_flow(name, s, t, t - 1, x, anchor)
            for m in errs:
                diff = np.linalg.norm(phi_step(target, s, t, x, FlowConfig(m)) - want, axis=1)
                errs[m] = max(errs[m], float(diff.max()))
                if m == 8:
                    # rk4 error grows linearly with |x|: absolute for O(1) points, relative beyond
                    scaled = max(scaled, float(np.max(diff / np.maximum(1.0, np.linalg.norm(want, axis=1)))))
        endpoint[name], absolute[name] = scaled, errs[8]
        ratios += [errs[4] / errs[8], errs[8] / errs[16]]
        x = sample_marginal(target, s, 64, 64, rng)
        whole = flow(target, s, 64, 1, x)
        split = flow(target, s, 20, 1, flow(target, s, 64, 20, x))
        semigroup = max(semigroup, float(np.max(np.abs(whole - split))))
        full[name] = float(np.max(np.abs(whole - _closed_form_flow(name, s, 64, 1, x, anchor))))
    ok = max(endpoint.values()) < 1e-8 and all(12.0 <= r <= 20.0 for r in ratios) and semigroup < 1e-8
    verdict(6, ok, f"rk4x8 one-interval endpoint error |dy|/max(1, |y|) gaussian {endpoint['gaussian']:.1e}, point mass "
                   f"{endpoint['point_mass']:.1e} (< 1e-8), absolute {absolute['gaussian']:.1e} / {absolute['point_mass']:.1e}; contraction {', '.join(f'{r:.1f}' for r in ratios)} (16 +- 4); "
                   f"semigroup {semigroup:.1e} (< 1e-8); full T->1 composition error gaussian {full['gaussian']:.1e}, "
                   f"point mass {full['point_mass']:.1e} (reported)")
    assert ok


def test_criterion_07_marginal_preservation(verdict):
    target = load_target(DATA / "two_atoms.yaml")
    s = build_schedule(64, 2.0, 4.0)
    start = time.perf_counter()
    rep = check_marginal_preservation(target, s, [(64, 1)], 10_000, FlowConfig(32), make_rng(11, "acceptance", "marginal"))
    secs = time.perf_counter() - start
    row = rep.rows[0]
    ok = rep.passed and secs < 120
    verdict(7, ok, f"two atoms, T=64, n=1e4, rk4x32: sliced W1 {row['distance']:.4f} vs 2 x floor "
                   f"{row['limit']:.4f}; {secs:.0f}s (< 120s)")
    assert ok


def test_criterion_08_transport_cross_oracle(verdict):
    from consistency_lab.transport import sliced_w1, w1_assignment, w1_exact_1d

    rng = make_rng(11, "acceptance", "transport")
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 129))
        a, b = rng.standard_normal((n, 1)) * rng.uniform(0.1, 3), rng.standard_normal((n, 1)) + rng.normal()
        worst = max(worst, abs(w1_exact_1d(a, b) - w1_assignment(a, b)))
    v = np.array([0.3, -0.4])
    cloud = rng.standard_normal((2000, 2))
    sw, se = sliced_w1(cloud, cloud + v, 512, rng)
    want = 2 * np.linalg.norm(v) / math.pi
    z = abs(sw - want) / se
    ok = worst <= 1e-12 and z <= 3.0
    verdict(8, ok, f"200 instances: max |exact_1d - assignment| = {worst:.1e} (<= 1e-12); "
                   f"translated cloud sliced W1 {sw:.5f} vs 2|v|/pi {want:.5f}, {z:.2f} SE (<= 3)")
    assert ok


def test_criterion_09_consistency_training(verdict):
    gauss = load_target(DATA / "gaussian.yaml")
    mu = gauss.means[0]
    s = build_schedule(64, 2.0, 4.0)
    rng = make_rng(11, "acceptance", "training")

    stack = train_stack(gauss, s, RegressorSpec(), rng)
    x = sample_marginal(gauss, s, 64, 1000, rng)
    closed = x + mu * (math.sqrt(s.alpha_bar_at(1)) - math.sqrt(s.alpha_bar_at(64)))
    dev = float(np.max(np.abs(stack.models[64](x) - closed)))

    linear = train_stack(gauss, s, RegressorSpec(kind="linear_features", training_batch=100_000), rng)
    eps_linear = estimation_error(linear, gauss, s, 1000, rng).total

    eps_exact = {
        "gaussian": estimation_error(stack, gauss, s, 1000, rng).total,
        "three atoms": _exact_oracle_eps(rng),
    }
    parts = [dev < 1e-6, eps_linear < 1e-3, all(v < 1e-12 for v in eps_exact.values())]
    verdict(9, all(parts),
            f"exact_oracle f_T vs x + mu(sqrt(ab_1) - sqrt(ab_T)): max dev {dev:.3f} (< 1e-6) "
            f"[{'ok' if parts[0] else 'FAIL'}]; linear eps_hat at batch 1e5 {eps_linear:.2e} (< 1e-3) "
            f"[{'ok' if parts[1] else 'FAIL'}]; exact_oracle eps_hat "
            f"{', '.join(f'{k} {v:.1e}' for k, v in eps_exact.items())} (0 to floating point, < 1e-12) [{'ok' if parts[2] else 'FAIL'}]")
    # the population regression target is E[f_{t-1}(X_{t-1}) | X_t], which for N(mu, I) is an affine
    # contraction toward the mean rather than the translation the flow performs
    assert parts[0], "the exact regression stack is a contraction, not the flow translation"
    # eps_hat sums T-1 per-step errors of order 1e-4 each (sampling error of a 1e5-point fit)
    assert parts[1], "summed per-step linear regression error exceeds the bound"
    assert parts[2]


def _exact_oracle_eps(rng):
    target = AtomicTarget([[1.0, 0.0], [-0.5, 0.8], [0.0, -1.0]], [0.5, 0.3, 0.2])
    s = build_schedule(8, 1.0, 1.0)
    stack = train_stack(target, s, RegressorSpec(grid_size=0), rng)
    return estimation_error(stack, target, s, 200, rng).total


def test_criterion_10_scaling_trend(verdict, tmp_path):
    cfg = load_config(DATA / "scaling.yaml", {"out": str(tmp_path / "scaling"), "workers": 4})
    assert cfg.T_list == [16, 32, 64, 128] and cfg.n_samples == 20_000 and cfg.regressor == "exact_oracle"
    start = time.perf_counter()
    _, rows, summary = run_scaling(cfg, quiet=True)
    secs = time.perf_counter() - start
    assigned = fit_slope([dict(r, w1=r["w1_assignment"]) for r in rows], cfg.eps_fraction)
    sliced_ok = summary["strictly_decreasing"] and -1.5 <= summary["slope"] <= -0.3
    assign_ok = assigned["strictly_decreasing"] and -1.5 <= assigned["slope"] <= -0.3
    ok = sliced_ok and assign_ok and secs < 1800
    sliced = ", ".join(f"{r['w1']:.4f}" for r in rows)
    exact = ", ".join(f"{r['w1_assignment']:.4f}" for r in rows)
    verdict(10, ok,
            f"sliced W1 {sliced} slope {summary['slope']:.3f}; "
            f"assignment (n=512) W1 {exact} slope {assigned['slope']:.3f}; "
            f"band [-1.5, -0.3], strictly decreasing; {secs:.0f}s (< 1800s)")
    assert ok


SMALL = """\
target: {target}
T: 16
T_list: [16, 32, 64]
c0: 1.0
c1: 2.5
grid_size: 2049
n_samples: 2000
assignment_n: 128
n_projections: 64
floor_replicates: 2
check_n: 1000
check_substeps: 8
eps_eval_n: 100
seed: 5
"""


def test_criterion_11_determinism(verdict, tmp_path):
    config = tmp_path / "small.yaml"
    config.write_text(SMALL.format(target=DATA / "two_atoms.yaml"))
    commands = ["schedule", "verify", "train", "sample", "scaling"]
    runs = []
    for run in ("a", "b"):
        out = tmp_path / run
        codes = [main([c, "--config", str(config), "--out", str(out), "--quiet"]) for c in commands]
        assert codes == [0] * len(commands)
        runs.append(out)
    files = sorted(p.relative_to(runs[0]) for p in runs[0].rglob("*.csv"))
    differing = [str(f) for f in files if (runs[0] / f).read_bytes() != (runs[1] / f).read_bytes()]
    ok = bool(files) and not differing
    verdict(11, ok, f"{len(files)} CSV files from {', '.join(commands)}: {len(differing)} differ between runs")
    assert ok
