"""Acceptance criteria, each checked at its stated tolerance and runtime budget.

Every test records one PASS/FAIL line; the lines are echoed at the end of the
pytest run (and printed directly when this file is run as a script).
"""

import math
import time

import numpy as np
import pytest

from eikograph.graph import build_graph, calibrate_K1, mark_boundary
from eikograph.harness import (SweepConfig, header_line, mc_cover_probability, run_convergence,
                               write_errors_csv)
from eikograph.kernel import cfl_bound, kernel_constants, make_kernel
from eikograph.manifold import BoundarySpec, ManifoldSpec, PointCloud, _extrinsic, sample_points
from eikograph.solver import (Field, SolverConfig, audit_barriers, audit_regularity, euler_step,
                              nonlocal_gradient, solve)

from conftest import ACCEPTANCE_LINES

pytestmark = pytest.mark.slow

S2 = ManifoldSpec.sphere(2, 1.0)
CAP = BoundarySpec.cap([0.0, 0.0, 1.0], 0.3)
# flat torus with the sphere's area, cap of the same radius in its middle
SIDE = math.sqrt(4 * math.pi)
T2 = ManifoldSpec.torus([SIDE, SIDE])
TORUS_CAP = BoundarySpec.cap([SIDE / 2, SIDE / 2], 0.3)

KERNEL = make_kernel("triangular", a=0.5)
CONSTS = kernel_constants(KERNEL)
CALIBRATION = {"n_pilot": 2000, "trials": 100, "target": 0.99, "seed_base": 10_000}


def record(num, ok, detail):
    line = f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def dense_gradient(spec, coords, f, eps):
    """Full max over all vertex pairs, y = x included, from a dense weight matrix."""
    n = len(coords)
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    d = _extrinsic(spec, coords[i], coords[j])
    t = d / eps
    eta = np.where(d <= eps * KERNEL.r_eta, np.maximum(1.0 - t, 0.0), 0.0)
    J = eta / (eps * CONSTS.C_eta)
    return np.max(J * (f[:, None] - f[None, :]), axis=1)  # diagonal term is 0


def random_instance(rng, seed, n_max=200):
    spec = [S2, ManifoldSpec.torus([1.0, 1.0]), ManifoldSpec.box([0, 0], [1, 1])][seed % 3]
    n = int(rng.integers(20, n_max + 1))
    eps = float(rng.uniform(0.1, 0.6))
    cloud = sample_points(spec, n, seed=seed)
    mask = rng.uniform(size=n) < 0.1
    return build_graph(cloud, KERNEL, CONSTS, eps, mask)


def test_criterion_1_operator_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    exact = True
    for seed in range(20):
        g = random_instance(rng, seed)
        f = rng.normal(size=g.n)
        exact &= np.array_equal(nonlocal_gradient(g, f), dense_gradient(g.spec, g.coords, f,
                                                                        g.epsilon))
    dt = time.perf_counter() - t0
    assert record(1, exact and dt < 5, f"20 graphs exact={exact} runtime={dt:.2f}s (<5s)")


def test_criterion_2_monotonicity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    violations = 0
    for trial in range(1000):
        if trial % 50 == 0:
            g = random_instance(rng, 1000 + trial // 50)
            dt = cfl_bound(CONSTS, g.epsilon)
        lo = rng.normal(size=g.n)
        hi = lo + rng.exponential(size=g.n) * (rng.uniform(size=g.n) < 0.5)
        P = rng.uniform(0, 2, g.n)
        f0 = rng.normal(size=g.n)
        a = euler_step(g, Field(lo), P, dt, f0).values
        b = euler_step(g, Field(hi), P, dt, f0).values
        violations += int(np.sum(a > b))
    # 10x the bound: two close vertices, the upper one overshoots below the lower one
    pair = PointCloud(np.array([[0.0], [1e-3]]), 0, ManifoldSpec.box([0], [1]))
    line = build_graph(pair, KERNEL, CONSTS, 0.1)
    big = 10 * cfl_bound(CONSTS, 0.1)
    lo, hi = np.zeros(2), np.array([0.0, 1.0])
    a = euler_step(line, Field(lo), 0.0, big, lo, check_cfl=False).values
    b = euler_step(line, Field(hi), 0.0, big, lo, check_cfl=False).values
    broken = bool(np.any(a > b))
    dt_total = time.perf_counter() - t0
    ok = violations == 0 and broken and dt_total < 10
    assert record(2, ok, f"1000 pairs violations={violations}; 10x CFL breaks order={broken}; "
                         f"runtime={dt_total:.2f}s (<10s)")


@pytest.mark.parametrize("name,spec,gamma,eps", [
    ("sphere", S2, CAP, 0.2),
    ("torus", ManifoldSpec.torus([1.0, 1.0]), BoundarySpec.cap([0.5, 0.5], 0.2), 0.06),
    ("box", ManifoldSpec.box([0, 0], [1, 1]), BoundarySpec.cap([0.5, 0.5], 0.2), 0.06),
])
def test_criterion_3_time_lipschitz(name, spec, gamma, eps):
    t0 = time.perf_counter()
    cloud = sample_points(spec, 2000, seed=303)
    g = build_graph(cloud, KERNEL, CONSTS, eps, mark_boundary(cloud, spec, gamma, 0.5, eps, 0.5))
    sol = solve(g, SolverConfig(dt=eps ** 1.5, T=2.0, cfl_mode="auto-clamp"))
    jumps = np.abs(np.diff(sol.values, axis=0))
    worst = float(np.max(jumps - sol.dt * (0 + 1)))
    dt_total = time.perf_counter() - t0
    ok = worst <= 1e-10 and dt_total < 30 and math.isclose(sol.times[-1], 2.0)
    assert record(3, ok, f"[{name}] n=2000 steps={sol.steps} max(|df|-dt)={worst:.2e} "
                         f"(<=1e-10) runtime={dt_total:.2f}s (<30s)")


def test_criterion_4_barrier_sandwich(calibrated_K1):
    from eikograph.graph import epsilon_schedule
    lines_ok, details = True, []
    for eps in (0.3, epsilon_schedule(2000, 2, 0.5, 1.0, calibrated_K1).epsilon_n):
        cloud = sample_points(S2, 2000, seed=404)
        g = build_graph(cloud, KERNEL, CONSTS, eps, mark_boundary(cloud, S2, CAP, 0.5, eps, 0.5))
        sol = solve(g, SolverConfig(dt=eps ** 1.5, T=2.0, cfl_mode="auto-clamp"))
        rep = audit_barriers(sol, g, CAP)
        reg = audit_regularity(sol, g)
        ok = rep.lower_ok and rep.upper_ok and rep.K1 == 1 and rep.K2 == 1 and not rep.skipped
        ok &= math.isclose(rep.slack, reg.space_constant * eps)
        lines_ok &= ok
        details.append(f"eps={eps:.3f} min f={rep.lower_margin:.1e} "
                       f"max(f-min(t,dtilde))-K_reg*eps={rep.upper_margin:.3f} K_reg={reg.space_constant:.2f}")
    assert record(4, lines_ok, "; ".join(details))


# -- shared sweep for criteria 5, 7 and 8 -------------------------------------------

def sphere_sweep(K1):
    return SweepConfig(manifold=S2.to_dict(), boundary=CAP.to_dict(),
                       kernel={"profile": "triangular", "params": [], "a": 0.5},
                       n_list=[500, 2000, 8000], nu=0.5, xi=0.5, zeta=0.5, tau=1.0,
                       trials_per_n=5, T=2.0, seed_base=0, K1=K1, calibration=CALIBRATION)


@pytest.fixture(scope="module")
def calibrated_K1():
    return calibrate_K1(S2, 2000, 0.5, 0.5, 1.0, CALIBRATION["trials"], CALIBRATION["target"],
                        CALIBRATION["seed_base"])


@pytest.fixture(scope="module")
def sphere_run(tmp_path_factory):
    t0 = time.perf_counter()
    # K1=None: the sweep calibrates it itself, as a user run would
    sweep = sphere_sweep(None)
    table = run_convergence(sweep)
    out = tmp_path_factory.mktemp("sweep")
    write_errors_csv(table.records, out / "errors.csv", header_line(sweep.to_dict()))
    return table, out / "errors.csv", time.perf_counter() - t0


def test_criterion_5_convergence(sphere_run):
    table, _, elapsed = sphere_run
    meds = table.medians()
    acc = table.acceptance()
    lo, hi = table.slope_ci
    ok = all(acc.values()) and elapsed < 15 * 60 and not table.failures
    eps = ", ".join(f"{table.epsilons[n]:.3f}" for n in table.sweep.n_list)
    assert record(5, ok, f"K1={table.K1:.2f} eps_n=[{eps}] medians={[round(m, 4) for m in meds]} "
                         f"decreasing={acc['medians_decreasing']}; slope={table.fitted_slope:.3f} "
                         f"CI=[{lo:.3f},{hi:.3f}] excludes 0={acc['slope_ci_excludes_zero']}; "
                         f"in [0.03,0.8]={acc['slope_in_band']}; runtime={elapsed:.0f}s (<900s)")


def test_criterion_6_cover_probability(calibrated_K1):
    t0 = time.perf_counter()
    rep = mc_cover_probability(S2, CAP, 2000, 200, 0.5, 1.0, calibrated_K1, a=0.5,
                               seed_base=60_000)
    elapsed = time.perf_counter() - t0
    ok = rep.cover_frequency >= 0.95 and rep.hausdorff_frequency >= 0.95 and elapsed < 300
    assert record(6, ok, f"K1={calibrated_K1:.2f} eps_n={rep.epsilon_n:.3f} "
                         f"cover={rep.cover_frequency:.3f} hausdorff={rep.hausdorff_frequency:.3f} "
                         f"(>=0.95) runtime={elapsed:.1f}s (<300s)")


def test_criterion_7_exact_metric_control(sphere_run):
    table, _, _ = sphere_run
    ns = table.sweep.n_list
    torus = SweepConfig(manifold=T2.to_dict(), boundary=TORUS_CAP.to_dict(),
                        kernel=table.sweep.kernel, n_list=ns, nu=0.5, xi=0.5, zeta=0.5, tau=1.0,
                        trials_per_n=5, T=2.0, seed_base=0, K1=table.K1,
                        epsilons=[table.epsilons[n] for n in ns],
                        dts=[table.dts[n] for n in ns])
    tt = run_convergence(torus)
    pairs = list(zip(tt.medians(), table.medians()))
    ok = all(t <= 1.2 * s for t, s in pairs) and not tt.failures
    body = ", ".join(f"n={n}: {t:.4f} vs {s:.4f}" for n, (t, s) in zip(ns, pairs))
    assert record(7, ok, f"torus vs sphere medians {body} (torus <= sphere + 20%)")


def test_criterion_8_determinism(sphere_run, tmp_path):
    _, first, _ = sphere_run
    sweep = sphere_sweep(None)
    table = run_convergence(sweep)
    write_errors_csv(table.records, tmp_path / "errors.csv", header_line(sweep.to_dict()))
    same = first.read_bytes() == (tmp_path / "errors.csv").read_bytes()
    assert record(8, same, f"rerun errors.csv byte-identical={same} "
                           f"({len(first.read_bytes())} bytes)")


def test_runtime_tracks_edge_count(sphere_run):
    # not a numbered criterion: per-edge cost of the largest n stays within 3x of the middle one
    table, _, _ = sphere_run
    cost = {}
    for w in table.work:
        cost.setdefault(w["n"], []).append(w["runtime_seconds"] / w["edges"])
    ratio = np.median(cost[8000]) / np.median(cost[2000])
    assert ratio <= 3.0


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
