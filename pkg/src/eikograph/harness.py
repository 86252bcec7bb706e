"""Convergence sweeps, rate fits, Monte-Carlo cover checks and report emission."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .graph import (boundary_threshold, build_graph, calibrate_K1, covering_check,
                    epsilon_schedule, hausdorff_sets)
from .kernel import cfl_bound, kernel_constants, make_kernel
from .manifold import (BoundarySpec, ManifoldSpec, PointCloud, distance_to_boundary,
                       sample_boundary, sample_points)
from .reference import ErrorRecord, dijkstra_weighted_distance, local_solution_field
from .solver import SolverConfig, make_potential, solve

log = logging.getLogger(__name__)

RATE_BAND = (0.03, 0.8)


class ConfigError(ValueError):
    pass


def config_hash(config: Mapping) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=float)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def header_line(config: Mapping) -> str:
    return f"# eikograph {__version__} {config_hash(config)}"


@dataclass
class SweepConfig:
    manifold: dict
    boundary: dict
    kernel: dict = field(default_factory=lambda: {"profile": "triangular", "params": []})
    potential: dict = field(default_factory=lambda: {"id": "constant", "params": {"value": 1.0}})
    initial: dict = field(default_factory=lambda: {"id": "zero", "params": {}})
    n_list: list = field(default_factory=lambda: [500, 2000, 8000])
    nu: float = 0.5
    xi: float = 0.5
    zeta: float = 0.5
    tau: float = 1.0
    trials_per_n: int = 5
    T: float = 2.0
    seed_base: int = 0
    K1: float | None = None
    calibration: dict = field(default_factory=lambda: {"n_pilot": 2000, "trials": 100,
                                                       "target": 0.99, "seed_base": 10_000})
    density: str = "uniform"
    density_params: dict = field(default_factory=dict)
    boundary_spacing: float | None = None
    epsilons: list | None = None  # per-n override, e.g. to match another sweep
    dts: list | None = None
    record_runtime: bool = False
    threads: int = 1

    def __post_init__(self):
        if list(self.n_list) != sorted(set(self.n_list)):
            raise ConfigError("n_list must be strictly increasing")
        if self.trials_per_n < 1:
            raise ConfigError("trials_per_n must be >= 1")
        if not self.zeta > 0:
            raise ConfigError("zeta must be positive")
        for name in ("epsilons", "dts"):
            v = getattr(self, name)
            if v is not None and len(v) != len(self.n_list):
                raise ConfigError(f"{name} must have one entry per n")

    @classmethod
    def from_dict(cls, d: Mapping) -> "SweepConfig":
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown sweep fields: {sorted(unknown)}")
        return cls(**dict(d))

    def to_dict(self) -> dict:
        return asdict(self)

    def spec(self) -> ManifoldSpec:
        return ManifoldSpec.from_dict(self.manifold)

    def gamma(self) -> BoundarySpec:
        return BoundarySpec.from_dict(self.boundary)

    def make_kernel(self):
        k = make_kernel(self.kernel.get("profile", "triangular"), self.kernel.get("params", []),
                        self.kernel.get("a"))
        return k, kernel_constants(k)

    def theoretical_exponent(self) -> Fraction:
        return theoretical_exponent(self.nu, self.xi, self.zeta, self.spec().intrinsic_dim)


def theoretical_exponent(nu, xi, zeta, m_star) -> Fraction:
    """``min(nu, xi, 1/2, zeta) / ((1 + nu) m*)`` as an exact rational."""
    fr = [Fraction(str(v)) for v in (nu, xi, zeta)]
    top = min(fr + [Fraction(1, 2)])
    return top / ((1 + fr[0]) * int(m_star))


# -- single trial ----------------------------------------------------------------

def _boundary_sample(spec, gamma, thr, spacing):
    return sample_boundary(spec, gamma, spacing if spacing else max(thr / 50.0, 1e-4))


def run_trial(sweep: SweepConfig, n: int, seed: int, epsilon: float, dt: float):
    """One sample/build/solve/compare pass; returns an ErrorRecord or a failure reason."""
    t0 = time.perf_counter()
    spec, gamma = sweep.spec(), sweep.gamma()
    kernel, consts = sweep.make_kernel()
    cloud = sample_points(spec, n, sweep.density, seed, sweep.density_params)
    thr = boundary_threshold(kernel.a, epsilon, sweep.nu)
    mask = np.atleast_1d(distance_to_boundary(spec, gamma, cloud.coords)) <= thr
    if not mask.any():
        return None, "empty boundary vertex set"
    graph = build_graph(cloud, kernel, consts, epsilon, mask)
    cfg = SolverConfig(dt=dt, T=sweep.T, cfl_mode="auto-clamp",
                       potential_id=sweep.potential["id"],
                       potential_params=sweep.potential.get("params", {}),
                       initial_id=sweep.initial["id"], initial_params=sweep.initial.get("params", {}))
    sol = solve(graph, cfg)
    err = _trial_error(sweep, spec, gamma, cloud, sol)
    hd = hausdorff_sets(spec, _boundary_sample(spec, gamma, thr, sweep.boundary_spacing),
                        cloud.coords[mask], gamma)
    runtime = time.perf_counter() - t0
    rec = ErrorRecord(int(n), float(epsilon), float(sol.dt), err, hd, runtime, int(seed))
    return rec, {"edges": graph.edge_count, "runtime_seconds": runtime}


def _trial_error(sweep, spec, gamma, cloud, sol) -> float:
    uniform = (sweep.potential["id"] == "constant"
               and float(sweep.potential.get("params", {}).get("value", 1.0)) == 1.0
               and sweep.initial["id"] == "zero")
    if uniform:
        ref = local_solution_field(spec, gamma, cloud.coords, sol.times)
        return float(np.max(np.abs(sol.values - ref)))
    if sweep.initial["id"] != "zero":
        raise ConfigError("non-uniform potentials are only referenced for zero initial data")
    # steady-state comparison against the shortest-path oracle on a 10x denser cloud
    dense = sample_points(spec, 9 * len(cloud), sweep.density, cloud.seed + 7_919_001,
                          sweep.density_params)
    coords = np.vstack([cloud.coords, dense.coords])
    big = PointCloud(coords, cloud.seed, spec)
    P = make_potential(spec, coords, sweep.potential["id"], sweep.potential.get("params", {}))
    h = np.sqrt(spec.volume() / len(coords)) if spec.intrinsic_dim == 2 else \
        (spec.volume() / len(coords)) ** (1 / spec.intrinsic_dim)
    seeds = np.flatnonzero(np.atleast_1d(distance_to_boundary(spec, gamma, coords)) <= h)
    oracle = dijkstra_weighted_distance(big, P, seeds)
    return float(np.max(np.abs(sol.values[-1] - oracle.values[:len(cloud)])))


def _trial_worker(args):
    sweep_dict, n, seed, eps, dt = args
    return run_trial(SweepConfig.from_dict(sweep_dict), n, seed, eps, dt)


# -- sweeps --------------------------------------------------------------------

@dataclass
class ConvergenceTable:
    records: list
    failures: list
    epsilons: dict
    dts: dict
    K1: float
    sweep: SweepConfig
    work: list = field(default_factory=list)
    fitted_slope: float | None = None
    slope_ci: tuple | None = None
    fit_note: str = ""

    def errors_by_n(self) -> dict:
        out = {n: [] for n in self.sweep.n_list}
        for r in self.records:
            out[r.n].append(r.sup_error)
        return out

    def group_stats(self) -> dict:
        stats = {}
        for n, errs in self.errors_by_n().items():
            if errs:
                q1, med, q3 = np.percentile(errs, [25, 50, 75])
                stats[n] = {"median": float(med), "iqr": float(q3 - q1), "count": len(errs)}
            else:
                stats[n] = {"median": float("nan"), "iqr": float("nan"), "count": 0}
        return stats

    def medians(self) -> list:
        return [self.group_stats()[n]["median"] for n in self.sweep.n_list]

    def acceptance(self, band=RATE_BAND) -> dict:
        meds = self.medians()
        decreasing = all(b < a for a, b in zip(meds, meds[1:])) and len(meds) > 1
        ci = self.slope_ci
        ci_ok = ci is not None and ci[0] > 0
        in_band = self.fitted_slope is not None and band[0] <= self.fitted_slope <= band[1]
        return {"medians_decreasing": decreasing, "slope_ci_excludes_zero": ci_ok,
                "slope_in_band": in_band}


def schedule_for(sweep: SweepConfig, K1: float, consts) -> tuple[dict, dict]:
    m_star = sweep.spec().intrinsic_dim
    eps, dts = {}, {}
    for idx, n in enumerate(sweep.n_list):
        e = sweep.epsilons[idx] if sweep.epsilons else epsilon_schedule(
            n, m_star, sweep.nu, sweep.tau, K1).epsilon_n
        bound = cfl_bound(consts, e)
        target = sweep.dts[idx] if sweep.dts else e ** (1 + sweep.zeta)
        if target > bound:
            log.info("CFL clamp binds at n=%d: dt %.4g -> %.4g", n, target, bound)
        eps[n], dts[n] = float(e), float(min(target, bound))
    return eps, dts


def resolve_K1(sweep: SweepConfig) -> float:
    if sweep.K1 is not None:
        return float(sweep.K1)
    kernel, _ = sweep.make_kernel()
    cal = sweep.calibration
    return calibrate_K1(sweep.spec(), int(cal.get("n_pilot", 2000)), kernel.a, sweep.nu,
                        sweep.tau, int(cal.get("trials", 100)), float(cal.get("target", 0.99)),
                        int(cal.get("seed_base", 10_000)), density=sweep.density,
                        density_params=sweep.density_params)


def run_convergence(sweep: SweepConfig) -> ConvergenceTable:
    """Sample, build, solve and compare for every ``(n, trial)``; then fit the rate."""
    kernel, consts = sweep.make_kernel()
    K1 = resolve_K1(sweep)
    eps, dts = schedule_for(sweep, K1, consts)
    jobs = [(n, sweep.seed_base + t) for n in sweep.n_list for t in range(sweep.trials_per_n)]
    args = [(sweep.to_dict(), n, s, eps[n], dts[n]) for n, s in jobs]
    if sweep.threads > 1:
        with ProcessPoolExecutor(max_workers=sweep.threads) as pool:
            results = list(pool.map(_trial_worker, args))
    else:
        results = [_trial_worker(a) for a in args]

    records, failures, work = [], [], []
    for (n, seed), (rec, info) in zip(jobs, results):
        if rec is None:
            failures.append({"n": n, "seed": seed, "reason": info})
        else:
            records.append(rec)
            work.append({"n": n, "seed": seed, **info})
    table = ConvergenceTable(records, failures, eps, dts, K1, sweep, work)
    try:
        table.fitted_slope, table.slope_ci = fit_rate(table, seed=sweep.seed_base)
    except ValueError as exc:
        table.fit_note = str(exc)
    return table


def fit_rate(table, resamples: int = 200, seed: int = 0) -> tuple[float, tuple]:
    """Least-squares slope of log(median error) against log(log n / n).

    ``table`` is a ConvergenceTable or a mapping ``n -> errors``.  The interval
    is the 2.5-97.5 percentile range of slopes refitted on trial bootstraps.
    """
    groups = table.errors_by_n() if hasattr(table, "errors_by_n") else dict(table)
    groups = {int(n): np.asarray(e, dtype=float) for n, e in groups.items() if len(e)}
    if len(groups) < 2:
        raise ValueError("rate fit needs at least two groups")
    ns = np.array(sorted(groups))
    if any(np.any(groups[n] <= 0) for n in ns):
        raise ValueError("rate fit needs positive errors")
    x = np.log(np.log(ns) / ns)

    def slope(meds):
        return float(np.polyfit(x, np.log(meds), 1)[0])

    s = slope([np.median(groups[n]) for n in ns])
    rng = np.random.Generator(np.random.Philox(seed))
    boots = []
    for _ in range(resamples):
        meds = [np.median(rng.choice(groups[n], size=len(groups[n]), replace=True)) for n in ns]
        boots.append(slope(meds))
    lo, hi = np.percentile(boots, [2.5, 97.5])
    return s, (float(lo), float(hi))


# -- Monte-Carlo cover probability ------------------------------------------------

@dataclass
class MCReport:
    n: int
    trials: int
    cover_frequency: float
    hausdorff_frequency: float
    epsilon_n: float
    K1: float | None = None
    worst_gaps: list = field(default_factory=list)


def mc_cover_probability(spec: ManifoldSpec, gamma: BoundarySpec, n: int, trials: int, nu: float,
                         tau: float, K1: float, a: float = 0.5, epsilon: float | None = None,
                         seed_base: int = 0, probe_count: int = 20000,
                         boundary_spacing: float | None = None, density: str = "uniform",
                         density_params: dict | None = None) -> MCReport:
    """Empirical frequency of the cover event and of the boundary Hausdorff event."""
    if trials < 50:
        raise ValueError("need at least 50 trials")
    if epsilon is None:
        epsilon = epsilon_schedule(n, spec.intrinsic_dim, nu, tau, K1).epsilon_n
    thr = boundary_threshold(a, epsilon, nu)
    sample = _boundary_sample(spec, gamma, thr, boundary_spacing)
    cover = haus = 0
    gaps = []
    for t in range(trials):
        cloud = sample_points(spec, n, density, seed_base + t, density_params)
        res = covering_check(cloud, spec, a, epsilon, nu, probe_count)
        cover += res.holds
        gaps.append(res.worst_gap)
        mask = np.atleast_1d(distance_to_boundary(spec, gamma, cloud.coords)) <= thr
        if mask.any():
            haus += hausdorff_sets(spec, sample, cloud.coords[mask], gamma) <= thr
    return MCReport(n, trials, cover / trials, haus / trials, float(epsilon), K1, gaps)


# -- reports -----------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_errors_csv(records: Sequence[ErrorRecord], path, header: str | None = None,
                     record_runtime: bool = False) -> None:
    """Append records to ``errors.csv``; runtimes are blank unless requested (determinism)."""
    path = Path(path)
    fresh = not path.exists()
    with open(path, "a") as fh:
        if fresh:
            if header:
                fh.write(header + "\n")
            fh.write(",".join(ErrorRecord.COLUMNS) + "\n")
        for r in records:
            row = [r.n, r.epsilon, r.dt, r.sup_error, r.boundary_hausdorff,
                   r.runtime_seconds if record_runtime else "", r.seed]
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def emit_report(obj, out_dir, fmt: str = "csv", header: str | None = None) -> list:
    """Write a ConvergenceTable or MCReport as csv/json plus ``summary.txt``."""
    if fmt not in ("csv", "json"):
        raise ValueError("format must be csv or json")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write to {out}: {exc}") from exc
    files = []
    if isinstance(obj, MCReport):
        stem = out / "mc_cover"
        payload = {k: v for k, v in asdict(obj).items() if k != "worst_gaps"}
        if fmt == "csv":
            cols = list(payload)
            text = ((header + "\n") if header else "") + ",".join(cols) + "\n" + \
                ",".join(_fmt(payload[c]) for c in cols) + "\n"
            files.append(_write(stem.with_suffix(".csv"), text))
        else:
            files.append(_write(stem.with_suffix(".json"), json.dumps(payload, indent=2,
                                                                      sort_keys=True) + "\n"))
        summary = [f"Monte-Carlo cover check n={obj.n} trials={obj.trials}",
                   f"epsilon_n = {obj.epsilon_n!r}",
                   f"cover_frequency = {obj.cover_frequency!r}",
                   f"hausdorff_frequency = {obj.hausdorff_frequency!r}"]
        files.append(_write(out / "summary.txt", "\n".join(summary) + "\n"))
        return files

    table = obj
    cols = ("n", "seed", "epsilon", "dt", "sup_error", "boundary_hausdorff")
    rows = [[r.n, r.seed, r.epsilon, r.dt, r.sup_error, r.boundary_hausdorff]
            for r in table.records]
    if fmt == "csv":
        lines = ([header] if header else []) + [",".join(cols)]
        lines += [",".join(_fmt(v) for v in row) for row in rows]
        files.append(_write(out / "convergence.csv", "\n".join(lines) + "\n"))
    else:
        payload = {"records": [dict(zip(cols, row)) for row in rows],
                   "groups": {str(k): v for k, v in table.group_stats().items()},
                   "fitted_slope": table.fitted_slope,
                   "slope_ci": list(table.slope_ci) if table.slope_ci else None,
                   "failures": table.failures}
        files.append(_write(out / "convergence.json",
                            json.dumps(payload, indent=2, sort_keys=True) + "\n"))
    files.append(_write(out / "summary.txt", summary_text(table)))
    return files


def summary_text(table: ConvergenceTable) -> str:
    sweep = table.sweep
    kernel, consts = sweep.make_kernel()
    expo = sweep.theoretical_exponent()
    lines = [f"eikograph {__version__} convergence summary",
             f"rows = {len(table.records)}"]
    if not table.records:
        lines.append("zero rows: nothing to fit")
    lines += [f"kernel = {json.dumps(kernel.to_dict(), sort_keys=True)}",
              f"kernel_constants = {json.dumps(consts.to_dict(), sort_keys=True)}",
              f"K1 = {table.K1!r}",
              f"theoretical_exponent = {expo.numerator}/{expo.denominator}"]
    for n, st in table.group_stats().items():
        lines.append(f"n={n} eps={table.epsilons.get(n, float('nan'))!r} "
                     f"dt={table.dts.get(n, float('nan'))!r} median={st['median']!r} "
                     f"iqr={st['iqr']!r} trials={st['count']}")
    if table.fitted_slope is None:
        lines.append(f"fitted_slope = undefined ({table.fit_note or 'no fit'})")
    else:
        lines.append(f"fitted_slope = {table.fitted_slope!r} ci = {table.slope_ci!r}")
    lines.append(f"failed_trials = {len(table.failures)}")
    for f in table.failures:
        lines.append(f"  failed n={f['n']} seed={f['seed']}: {f['reason']}")
    for name, ok in table.acceptance().items():
        lines.append(f"{name}: {'PASS' if ok else 'FAIL'}")
    return "\n".join(lines) + "\n"


def _write(path: Path, text: str) -> Path:
    with open(path, "w") as fh:
        fh.write(text)
    return path
