"""Command-line entry point: ``eikograph {gen,solve,converge,mc-cover,validate}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import (Graph, boundary_threshold, brute_force_pairs, build_graph, candidate_pairs,
                    epsilon_schedule)
from .harness import (ConfigError, SweepConfig, emit_report, header_line, mc_cover_probability,
                      resolve_K1, run_convergence, write_errors_csv)
from .kernel import KernelError, cfl_bound, kernel_constants, make_kernel, weight
from .manifold import (BoundarySpec, ManifoldError, ManifoldSpec, _extrinsic,
                       distance_to_boundary, sample_points)
from .solver import (CFLError, Field, RegimeError, SolverConfig, audit_barriers, audit_regularity,
                     euler_step, make_initial, make_potential, nonlocal_gradient, solve)

log = logging.getLogger("eikograph")

EXIT_OK, EXIT_CONFIG, EXIT_ACCEPT = 0, 2, 3

PROBLEM_KEYS = ("manifold", "boundary", "kernel", "potential", "initial", "density",
                "density_params")


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    for key in ("manifold", "boundary"):
        if key not in cfg:
            raise ConfigError(f"config is missing {key!r}")
    return cfg


@dataclass
class Problem:
    spec: ManifoldSpec
    gamma: BoundarySpec
    kernel: object
    consts: object
    n: int
    epsilon: float
    nu: float
    solver: SolverConfig
    density: str
    density_params: dict

    @classmethod
    def from_config(cls, cfg: dict) -> "Problem":
        spec = ManifoldSpec.from_dict(cfg["manifold"])
        gamma = BoundarySpec.from_dict(cfg["boundary"]).validate(spec)
        kcfg = cfg.get("kernel", {})
        kernel = make_kernel(kcfg.get("profile", "triangular"), kcfg.get("params", []), kcfg.get("a"))
        consts = kernel_constants(kernel)
        n = int(cfg.get("n", 2000))
        nu = float(cfg.get("nu", 0.5))
        if "epsilon" in cfg:
            eps = float(cfg["epsilon"])
        elif "K1" in cfg:
            eps = epsilon_schedule(n, spec.intrinsic_dim, nu, float(cfg.get("tau", 1.0)),
                                   float(cfg["K1"])).epsilon_n
        else:
            raise ConfigError("config needs 'epsilon' or 'K1'")
        scfg = dict(cfg.get("solver", {}))
        pot, ini = cfg.get("potential", {}), cfg.get("initial", {})
        dt = scfg.pop("dt", None)
        zeta = float(cfg.get("zeta", 0.5))
        solver = SolverConfig(dt=float(dt) if dt is not None else eps ** (1 + zeta),
                              T=float(scfg.pop("T", 2.0)),
                              cfl_mode=scfg.pop("cfl_mode", "auto-clamp"),
                              steady_tol=float(scfg.pop("steady_tol", 1e-10)),
                              potential_id=pot.get("id", "constant"),
                              potential_params=pot.get("params", {"value": 1.0}),
                              initial_id=ini.get("id", "zero"),
                              initial_params=ini.get("params", {}))
        if scfg:
            raise ConfigError(f"unknown solver fields: {sorted(scfg)}")
        return cls(spec, gamma, kernel, consts, n, eps, nu, solver,
                   cfg.get("density", "uniform"), cfg.get("density_params", {}))

    def build(self, seed: int) -> Graph:
        cloud = sample_points(self.spec, self.n, self.density, seed, self.density_params)
        thr = boundary_threshold(self.kernel.a, self.epsilon, self.nu)
        mask = np.atleast_1d(distance_to_boundary(self.spec, self.gamma, cloud.coords)) <= thr
        if not mask.any():
            log.warning("boundary vertex set is empty")
        return build_graph(cloud, self.kernel, self.consts, self.epsilon, mask)


def sweep_from_config(cfg: dict) -> SweepConfig:
    d = {k: cfg[k] for k in PROBLEM_KEYS if k in cfg}
    d.update(cfg.get("sweep", {}))
    return SweepConfig.from_dict(d)


# -- invariant suite ----------------------------------------------------------------

def invariant_suite(problem: Problem, seed: int, monotone_pairs: int = 100) -> list:
    """Structural checks on one sampled instance; returns ``(name, ok, detail)`` triples."""
    out = []
    graph = problem.build(seed)
    n = graph.n
    rng = np.random.Generator(np.random.Philox(seed))

    if n <= 3000:
        r = problem.epsilon * problem.kernel.r_eta
        ok = np.array_equal(candidate_pairs(problem.spec, graph.coords, r),
                            brute_force_pairs(problem.spec, graph.coords, r))
        out.append(("neighbour search equals brute force", ok, f"n={n}"))
    rows = np.repeat(np.arange(n), graph.degrees())
    fwd = set(zip(rows.tolist(), graph.indices.tolist()))
    out.append(("neighbour lists symmetric", all((j, i) in fwd for i, j in fwd), ""))

    f = rng.uniform(0, 1, n)
    if n <= 3000:
        i, j = np.triu_indices(n, 1)
        W = np.zeros((n, n))
        W[i, j] = weight(problem.consts, problem.kernel, problem.epsilon,
                         _extrinsic(problem.spec, graph.coords[i], graph.coords[j]))
        W = W + W.T
        brute = np.maximum(0.0, np.max(W * (f[:, None] - f[None, :]), axis=1))
        ok = np.array_equal(brute, nonlocal_gradient(graph, f))
        out.append(("operator equals brute force", ok, f"n={n}"))

    P = make_potential(problem.spec, graph.coords, problem.solver.potential_id,
                       problem.solver.potential_params)
    f0, _ = make_initial(problem.spec, graph.coords, problem.solver.initial_id,
                         problem.solver.initial_params)
    dt = cfl_bound(problem.consts, problem.epsilon)
    bad = 0
    for _ in range(monotone_pairs):
        lo = rng.uniform(-1, 1, n)
        hi = lo + rng.uniform(0, 1, n) * (rng.uniform(size=n) < 0.5)
        a = euler_step(graph, Field(lo), P, dt, f0).values
        b = euler_step(graph, Field(hi), P, dt, f0).values
        bad += bool(np.any(a > b))
    out.append(("euler step monotone at the CFL bound", bad == 0,
                f"{monotone_pairs} pairs, {bad} violations"))

    sol = solve(graph, problem.solver)
    reg = audit_regularity(sol, graph)
    out.append(("time Lipschitz bound", reg.time_ok, f"excess={reg.time_excess:.3e}"))
    out.append(("space regularity bound", reg.space_ok,
                f"violation={reg.space_max_violation:.3e}"))
    try:
        bar = audit_barriers(sol, graph, problem.gamma)
    except RegimeError as exc:
        out.append(("barrier sandwich", True, f"skipped: {exc}"))
    else:
        out.append(("barrier sandwich", bar.lower_ok and bar.upper_ok,
                    "skipped: empty boundary" if bar.skipped else
                    f"lower={bar.lower_margin:.3e} upper={bar.upper_margin:.3e}"))
    return out


# -- subcommands --------------------------------------------------------------------

def _out(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen(args, cfg) -> int:
    problem = Problem.from_config(cfg)
    graph = problem.build(args.seed)
    out, hdr = _out(args), header_line(cfg)
    graph.cloud.save(out / "points.csv", hdr)
    graph.save(out, hdr)
    print(f"n={graph.n} edges={graph.edge_count} boundary={int(graph.boundary_mask.sum())} "
          f"epsilon={graph.epsilon!r}")
    return EXIT_OK


def cmd_solve(args, cfg) -> int:
    problem = Problem.from_config(cfg)
    problem.solver.snapshot_every = args.snapshot_every
    problem.solver.stop_at_steady = args.stop_at_steady
    graph = problem.build(args.seed)
    sol = solve(graph, problem.solver)
    out, hdr = _out(args), header_line(cfg)
    sol.save(out / "solution.csv", hdr)
    info = {"n": graph.n, "epsilon": graph.epsilon, "dt": sol.dt, "steps": sol.steps,
            "steady_step": sol.steady_step, "final_time": float(sol.times[-1])}
    with open(out / "solve.json", "w") as fh:
        json.dump(info, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(info, sort_keys=True))
    return EXIT_OK


def cmd_converge(args, cfg) -> int:
    sweep = sweep_from_config(cfg)
    if args.seed is not None:
        sweep.seed_base = args.seed
    if args.threads:
        sweep.threads = args.threads
    table = run_convergence(sweep)
    out = _out(args)
    hdr = header_line(sweep.to_dict())
    errors = out / "errors.csv"
    if errors.exists():
        errors.unlink()
    write_errors_csv(table.records, errors, hdr, sweep.record_runtime)
    with open(out / "timings.csv", "w") as fh:
        fh.write(hdr + "\nn,seed,edges,runtime_seconds\n")
        for w in table.work:
            fh.write(f"{w['n']},{w['seed']},{w['edges']},{w['runtime_seconds']!r}\n")
    emit_report(table, out, args.format, hdr)
    print((out / "summary.txt").read_text(), end="")
    return EXIT_OK


def cmd_mc(args, cfg) -> int:
    mc = dict(cfg.get("mc", {}))
    spec = ManifoldSpec.from_dict(cfg["manifold"])
    gamma = BoundarySpec.from_dict(cfg["boundary"]).validate(spec)
    if mc.get("K1") is None:
        mc["K1"] = resolve_K1(sweep_from_config(cfg))
    kcfg = cfg.get("kernel", {})
    a = make_kernel(kcfg.get("profile", "triangular"), kcfg.get("params", []), kcfg.get("a")).a
    rep = mc_cover_probability(spec, gamma, int(mc.get("n", 2000)), int(mc.get("trials", 200)),
                               float(cfg.get("nu", 0.5)), float(cfg.get("tau", 1.0)),
                               float(mc["K1"]), a=a, epsilon=mc.get("epsilon"),
                               seed_base=args.seed if args.seed is not None else
                               int(mc.get("seed_base", 0)),
                               density=cfg.get("density", "uniform"),
                               density_params=cfg.get("density_params"))
    emit_report(rep, _out(args), args.format, header_line(cfg))
    print(f"cover_frequency={rep.cover_frequency!r} hausdorff_frequency={rep.hausdorff_frequency!r}"
          f" epsilon_n={rep.epsilon_n!r}")
    return EXIT_OK


def cmd_validate(args, cfg) -> int:
    problem = Problem.from_config(cfg)
    results = invariant_suite(problem, args.seed)
    lines = [f"{'PASS' if ok else 'FAIL'} {name} {detail}".rstrip() for name, ok, detail in results]
    out = _out(args)
    (out / "validate.txt").write_text(header_line(cfg) + "\n" + "\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_ACCEPT


COMMANDS = {"gen": cmd_gen, "solve": cmd_solve, "converge": cmd_converge, "mc-cover": cmd_mc,
            "validate": cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eikograph", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in [("gen", "sample a cloud and build its graph"),
                           ("solve", "run the explicit scheme on one sampled graph"),
                           ("converge", "convergence sweep over n"),
                           ("mc-cover", "Monte-Carlo frequency of the cover event"),
                           ("validate", "run the invariant suite on one instance")]:
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", required=True, help="JSON config file (see docs/config.md)")
        s.add_argument("--seed", type=int, default=None if name in ("converge", "mc-cover") else 0)
        s.add_argument("--out-dir", default="out")
        s.add_argument("--snapshot-every", type=int, default=1)
        s.add_argument("--stop-at-steady", action="store_true")
        s.add_argument("--threads", type=int, default=0, help="worker processes for trials")
        s.add_argument("--format", choices=("csv", "json"), default="csv")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, ManifoldError, KernelError, CFLError, KeyError, TypeError,
            ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
