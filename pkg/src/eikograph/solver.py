"""Non-local Eikonal operator and its forward-Euler scheme on a graph.

The scheme advances interior vertices by

    f(x, t) = f(x, t - dt) + dt * (P(x) - grad(f(., t - dt))(x))

with ``grad f(x) = max(0, max_y J(x, y) (f(x) - f(y)))`` and pins boundary
vertices to the initial data.  Under ``dt * sup J <= 1`` (the CFL bound) the
update is a monotone map of the previous field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .graph import Graph
from .kernel import cfl_bound
from .manifold import (BoundarySpec, ManifoldSpec, _geodesic, bump_density, distance_to_boundary,
                       local_dtilde_error)


class CFLError(ValueError):
    pass


class RegimeError(ValueError):
    pass


@dataclass
class Field:
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")


# -- data on vertices ----------------------------------------------------------

def make_potential(spec: ManifoldSpec, coords, potential_id: str = "constant",
                   params: dict | None = None) -> np.ndarray:
    """Per-vertex potential.  ``constant`` {value}; ``bump`` {center, width, height, base}."""
    params = params or {}
    coords = np.asarray(coords, dtype=float)
    if potential_id == "constant":
        P = np.full(len(coords), float(params.get("value", 1.0)))
    elif potential_id == "bump":
        P = bump_density(spec, coords, params["center"], float(params.get("width", 0.5)),
                         float(params.get("height", 1.0)), float(params.get("base", 1.0)))
    else:
        raise ValueError(f"unknown potential {potential_id!r}")
    if np.any(P < 0):
        raise ValueError("potential must be non-negative")
    return P


def make_initial(spec: ManifoldSpec, coords, initial_id: str = "zero",
                 params: dict | None = None) -> tuple[np.ndarray, float]:
    """Initial/boundary data and its Lipschitz constant with respect to ``d_M``."""
    params = params or {}
    coords = np.asarray(coords, dtype=float)
    if initial_id == "zero":
        return np.zeros(len(coords)), 0.0
    if initial_id == "constant":
        return np.full(len(coords), float(params.get("value", 0.0))), 0.0
    if initial_id == "ramp":
        if spec.kind == "torus":
            raise ValueError("a linear ramp is not continuous on the torus")
        g = np.asarray(params["gradient"], dtype=float)
        # chord <= arc on the sphere, so |g| also bounds the Lipschitz constant in d_M
        return float(params.get("offset", 0.0)) + coords @ g, float(np.linalg.norm(g))
    raise ValueError(f"unknown initial data {initial_id!r}")


# -- operator ------------------------------------------------------------------

def _rows(graph: Graph) -> np.ndarray:
    rows = getattr(graph, "_rows", None)
    if rows is None:
        rows = np.repeat(np.arange(graph.n, dtype=graph.indices.dtype), graph.degrees())
        graph._rows = rows
    return rows


def _segment_reduce(ufunc, vals, graph, fill):
    out = np.full(graph.n, fill, dtype=float)
    deg = graph.degrees()
    nz = np.flatnonzero(deg)
    if len(nz):
        out[nz] = ufunc(out[nz], ufunc.reduceat(vals, graph.indptr[nz]))
    return out


def nonlocal_gradient(graph: Graph, values, vertex_index: int | None = None):
    """``max(0, max_y J(x, y) (f(x) - f(y)))`` at one vertex or at all of them."""
    f = np.asarray(values, dtype=float)
    if vertex_index is not None:
        idx, _, w = graph.neighbors(vertex_index)
        if len(idx) == 0:
            return 0.0
        return float(max(0.0, np.max(w * (f[vertex_index] - f[idx]))))
    rows = _rows(graph)
    return _segment_reduce(np.maximum, graph.weights * (f[rows] - f[graph.indices]), graph, 0.0)


def _check_dt(graph: Graph, dt: float) -> None:
    bound = cfl_bound(graph.kernel_constants, graph.epsilon)
    if dt > bound:
        raise CFLError(f"dt={dt!r} exceeds the CFL bound {bound!r}")


def _step_values(graph, f, P_dt, f0, mask, c_self, c_nb):
    rows = _rows(graph)
    fx, fy = f[rows], f[graph.indices]
    if len(c_nb) and c_nb.max() > 1.0:
        # beyond the CFL bound the rewrite below is not exact; use the plain update
        nxt = f - _segment_reduce(np.maximum, c_nb * (fx - fy), graph, 0.0) + P_dt
        nxt[mask] = f0[mask]
        return nxt
    # f(x) - dt*max(0, max_y w (f(x)-f(y))) == min(f(x), min_y (1-dt w) f(x) + dt w f(y)).
    # Each term is a convex combination, so clamping it to [f(y), f(x)] changes nothing
    # exactly but keeps the rounded map monotone and leaves equal values untouched.
    terms = np.minimum(np.maximum(c_self * fx + c_nb * fy, fy), fx)
    down = _segment_reduce(np.minimum, terms, graph, np.inf)
    nxt = np.minimum(f, down) + P_dt
    nxt[mask] = f0[mask]
    return nxt


def euler_step(graph: Graph, field_prev: Field, potential, dt: float, initial_field,
               check_cfl: bool = True) -> Field:
    """One forward-Euler step; boundary vertices are reset to ``initial_field``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if check_cfl:
        _check_dt(graph, dt)
    f = np.asarray(field_prev.values, dtype=float)
    P = np.broadcast_to(np.asarray(potential, dtype=float), f.shape)
    f0 = np.broadcast_to(np.asarray(initial_field, dtype=float), f.shape)
    c_nb = dt * graph.weights
    nxt = _step_values(graph, f, dt * P, f0, graph.boundary_mask, 1.0 - c_nb, c_nb)
    return Field(nxt, field_prev.time + dt)


# -- time loop -----------------------------------------------------------------

@dataclass
class SolverConfig:
    dt: float
    T: float
    cfl_mode: str = "strict-reject"
    steady_tol: float = 1e-10
    potential_id: str = "constant"
    potential_params: dict = field(default_factory=lambda: {"value": 1.0})
    initial_id: str = "zero"
    initial_params: dict = field(default_factory=dict)
    snapshot_every: int = 1
    stop_at_steady: bool = False

    def __post_init__(self):
        if self.cfl_mode not in ("strict-reject", "auto-clamp"):
            raise ValueError(f"unknown cfl_mode {self.cfl_mode!r}")
        if not self.dt > 0 or self.T < 0:
            raise ValueError("need dt > 0 and T >= 0")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {"dt": self.dt, "T": self.T, "cfl_mode": self.cfl_mode,
                "steady_tol": self.steady_tol, "potential": {"id": self.potential_id,
                "params": self.potential_params}, "initial": {"id": self.initial_id,
                "params": self.initial_params}, "snapshot_every": self.snapshot_every,
                "stop_at_steady": self.stop_at_steady}


def effective_dt(graph: Graph, config: SolverConfig) -> float:
    """Time step actually used: unchanged under strict-reject, snapped under auto-clamp."""
    bound = cfl_bound(graph.kernel_constants, graph.epsilon)
    if config.cfl_mode == "strict-reject":
        if config.dt > bound:
            raise CFLError(f"dt={config.dt!r} exceeds the CFL bound {bound!r}")
        return config.dt
    dt = min(config.dt, bound)
    if config.T == 0:
        return dt
    steps = math.ceil(config.T / dt * (1 - 1e-12))
    dt = config.T / steps
    while dt > bound:  # guard against rounding in T / steps
        steps += 1
        dt = config.T / steps
    return dt


@dataclass
class Solution:
    times: np.ndarray
    values: np.ndarray  # (snapshots, n)
    dt: float
    steps: int
    steady_step: int | None
    potential: np.ndarray
    initial: np.ndarray
    lip_f0: float
    config: SolverConfig | None = None

    def fields(self) -> list[Field]:
        return [Field(v, t) for t, v in zip(self.times, self.values)]

    def save(self, path, header: str | None = None) -> None:
        with open(path, "w") as fh:
            if header:
                fh.write(header + "\n")
            fh.write("t,vertex_index,value\n")
            for t, row in zip(self.times, self.values):
                ts = repr(float(t))
                for i, v in enumerate(row):
                    fh.write(f"{ts},{i},{float(v)!r}\n")


def solve(graph: Graph, config: SolverConfig) -> Solution:
    """Run the scheme from the initial data up to ``floor(T / dt)`` steps."""
    spec = graph.spec
    P = make_potential(spec, graph.coords, config.potential_id, config.potential_params)
    f0, lip = make_initial(spec, graph.coords, config.initial_id, config.initial_params)
    dt = effective_dt(graph, config)
    n_steps = int(math.floor(config.T / dt * (1 + 1e-12))) if config.T > 0 else 0

    c_nb = dt * graph.weights
    c_self = 1.0 - c_nb
    P_dt = dt * P
    mask = graph.boundary_mask
    steady_cut = config.steady_tol * dt * max(float(np.max(P[~mask], initial=0.0)), 1.0)

    f = f0.copy()
    times, snaps = [0.0], [f.copy()]
    steady = None
    done = 0
    for k in range(1, n_steps + 1):
        nxt = _step_values(graph, f, P_dt, f0, mask, c_self, c_nb)
        if steady is None and np.max(np.abs(nxt - f), initial=0.0) < steady_cut:
            steady = k
        f = nxt
        done = k
        stop = config.stop_at_steady and steady is not None
        if k % config.snapshot_every == 0 or k == n_steps or stop:
            times.append(k * dt)
            snaps.append(f.copy())
        if stop:
            break
    return Solution(np.asarray(times), np.asarray(snaps), dt, done, steady, P, f0, lip, config)


def scheme_residual(solution: Solution, graph: Graph) -> np.ndarray:
    """``(f(t) - f(t - dt)) / dt + grad f(t - dt) - P`` on interior vertices, per step.

    Requires an unthinned trajectory.  Non-positive rows mean a discrete
    sub-solution, non-negative rows a super-solution.
    """
    if np.any(np.abs(np.diff(solution.times) - solution.dt) > 1e-9 * max(solution.dt, 1.0)):
        raise ValueError("scheme residual needs every time step")
    out = []
    inner = ~graph.boundary_mask
    for prev, nxt in zip(solution.values[:-1], solution.values[1:]):
        r = (nxt - prev) / solution.dt + nonlocal_gradient(graph, prev) - solution.potential
        out.append(r[inner])
    return np.asarray(out)


# -- audits --------------------------------------------------------------------

def space_constant(graph: Graph, lip_f0: float, P_sup: float) -> float:
    """``K = 4/a * max((a + C_M) |P|, C_eta/c_eta (L + |P|))`` with ``L = Lip f0 + |P|``."""
    k = graph.kernel
    c = graph.kernel_constants
    C_M = local_dtilde_error(graph.spec, graph.epsilon, k.r_eta).C_M
    L = lip_f0 + P_sup
    return 4.0 / k.a * max((k.a + C_M) * P_sup, c.C_eta / c.c_eta * (L + P_sup))


@dataclass
class RegularityReport:
    time_lip_max: float
    time_lip_bound: float
    time_excess: float
    space_constant: float
    space_max_violation: float
    barrier_lower_ok: bool | None = None
    barrier_upper_ok: bool | None = None
    notes: list = field(default_factory=list)

    @property
    def time_ok(self) -> bool:
        return self.time_excess <= 1e-10

    @property
    def space_ok(self) -> bool:
        return self.space_max_violation <= 1e-10


def audit_regularity(solution: Solution, graph: Graph, lip_f0: float | None = None,
                     pair_count: int = 20000, seed: int = 0) -> RegularityReport:
    """Compare a trajectory with the time and space Lipschitz bounds of the scheme.

    Time: ``|f(x,t) - f(x,s)| <= L |t - s|`` with ``L = Lip f0 + |P|_inf``.
    Space: ``|f(x,t) - f(y,t)| <= K (d_M(x,y) + eps)`` on a random sample of
    vertex pairs plus all graph edges when there are few of them.
    """
    mask = graph.boundary_mask
    P_sup = float(np.max(solution.potential[~mask], initial=0.0))
    lip = solution.lip_f0 if lip_f0 is None else lip_f0
    L = lip + P_sup
    vals, times = solution.values, solution.times

    gaps = np.diff(times)
    if len(gaps):
        jumps = np.abs(np.diff(vals, axis=0)).max(axis=1)
        quot = float(np.max(jumps / gaps))
        excess = float(np.max(jumps - L * gaps))
    else:
        quot, excess = 0.0, 0.0

    K = space_constant(graph, lip, P_sup)
    rng = np.random.Generator(np.random.Philox(seed))
    n = graph.n
    i = rng.integers(0, n, pair_count)
    j = rng.integers(0, n, pair_count)
    if graph.edge_count <= pair_count:
        rows = np.repeat(np.arange(n), graph.degrees())
        i, j = np.concatenate([i, rows]), np.concatenate([j, graph.indices])
    dM = _geodesic(graph.spec, graph.coords[i], graph.coords[j])
    worst = -np.inf
    for v in vals:
        worst = max(worst, float(np.max(np.abs(v[i] - v[j]) - K * (dM + graph.epsilon),
                                        initial=-np.inf)))
    notes = []
    if graph.spec.kind == "sphere":
        notes.append("C_M is the support-local chord/arc bound, not a global one")
    return RegularityReport(quot, L, excess, K, max(0.0, worst), notes=notes)


@dataclass
class BarrierReport:
    lower_ok: bool
    upper_ok: bool
    lower_margin: float
    upper_margin: float
    K1: float
    K2: float
    slack: float
    skipped: bool = False


def audit_barriers(solution: Solution, graph: Graph, gamma: BoundarySpec, T: float | None = None,
                   d0: float = 1.0, a0: float | None = None, tol: float = 1e-12) -> BarrierReport:
    """Check ``0 <= f(x,t) <= min(K1 t, K2 dtilde(x, Gamma)) + K_reg eps``.

    Only meaningful for zero initial data and a non-negative potential, where
    0 is a sub-solution.  ``a0`` defaults to the manifold diameter.
    """
    if np.any(solution.initial != 0) or np.any(solution.potential < 0):
        raise RegimeError("barrier audit needs f0 == 0 and P >= 0")
    mask = graph.boundary_mask
    P_sup = float(np.max(solution.potential[~mask], initial=0.0))
    K1 = P_sup
    T = float(solution.times[-1]) if T is None else T
    a0 = graph.spec.diameter() if a0 is None else a0
    K2 = max((solution.lip_f0 + P_sup) / d0, K1 * T / a0)
    slack = space_constant(graph, solution.lip_f0, P_sup) * graph.epsilon
    if not mask.any():
        return BarrierReport(True, True, 0.0, 0.0, K1, K2, slack, skipped=True)

    dg = distance_to_boundary(graph.spec, gamma, graph.coords, metric="extrinsic")
    low = float(np.min(solution.values))
    up = -np.inf
    for t, v in zip(solution.times, solution.values):
        up = max(up, float(np.max(v - np.minimum(K1 * t, K2 * dg) - slack)))
    return BarrierReport(low >= -tol, up <= tol, low, up, K1, K2, slack)
