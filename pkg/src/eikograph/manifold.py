"""Closed-form manifolds: sampling, intrinsic/extrinsic distances and boundary sets.

Three kinds are supported, all with closed-form geodesics:

* ``sphere``  -- round sphere of radius ``R`` and intrinsic dimension ``m*``
  embedded in ``R^(m*+1)``; ``dtilde`` is the chord length.
* ``torus``   -- flat torus ``prod_i [0, p_i)``; ``dtilde == d_M``.
* ``box``     -- axis-aligned Euclidean box; ``dtilde == d_M``.

All distance functions broadcast over leading axes of their point arguments.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm, qmc

ON_MANIFOLD_TOL = 1e-9


class ManifoldError(ValueError):
    pass


@dataclass(frozen=True)
class ManifoldSpec:
    kind: str
    intrinsic_dim: int
    radius: float = 1.0
    periods: tuple = ()
    lower: tuple = ()
    upper: tuple = ()

    def __post_init__(self):
        if self.intrinsic_dim < 1:
            raise ManifoldError("intrinsic dimension must be >= 1")
        if self.kind == "sphere":
            if not self.radius > 0:
                raise ManifoldError("sphere radius must be positive")
        elif self.kind == "torus":
            if len(self.periods) != self.intrinsic_dim or min(self.periods) <= 0:
                raise ManifoldError("torus needs one positive period per axis")
        elif self.kind == "box":
            if len(self.lower) != self.intrinsic_dim or len(self.upper) != self.intrinsic_dim:
                raise ManifoldError("box corners must match the dimension")
            if any(u <= l for l, u in zip(self.lower, self.upper)):
                raise ManifoldError("box extents must be positive")
        else:
            raise ManifoldError(f"unknown manifold kind {self.kind!r}")

    @classmethod
    def sphere(cls, dim: int = 2, radius: float = 1.0) -> "ManifoldSpec":
        return cls("sphere", int(dim), radius=float(radius))

    @classmethod
    def torus(cls, periods) -> "ManifoldSpec":
        periods = tuple(float(p) for p in periods)
        return cls("torus", len(periods), periods=periods)

    @classmethod
    def box(cls, lower, upper) -> "ManifoldSpec":
        lower = tuple(float(v) for v in lower)
        upper = tuple(float(v) for v in upper)
        return cls("box", len(lower), lower=lower, upper=upper)

    @property
    def embedding_dim(self) -> int:
        return self.intrinsic_dim + 1 if self.kind == "sphere" else self.intrinsic_dim

    def diameter(self) -> float:
        if self.kind == "sphere":
            return float(np.pi * self.radius)
        if self.kind == "torus":
            return float(np.linalg.norm(np.asarray(self.periods) / 2.0))
        return float(np.linalg.norm(np.subtract(self.upper, self.lower)))

    def volume(self) -> float:
        if self.kind == "sphere":
            k = self.intrinsic_dim + 1
            return 2 * math.pi ** (k / 2) / math.gamma(k / 2) * self.radius ** self.intrinsic_dim
        if self.kind == "torus":
            return float(np.prod(self.periods))
        return float(np.prod(np.subtract(self.upper, self.lower)))

    def residual(self, points) -> np.ndarray:
        """Distance of each point to the manifold (0 for points on it)."""
        x = np.asarray(points, dtype=float)
        if x.shape[-1] != self.embedding_dim:
            raise ManifoldError(f"points must have {self.embedding_dim} coordinates")
        if self.kind == "sphere":
            return np.abs(np.linalg.norm(x, axis=-1) - self.radius)
        if self.kind == "torus":
            p = np.asarray(self.periods)
            return np.max(np.maximum(-x, 0) + np.maximum(x - p, 0), axis=-1)
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        return np.max(np.maximum(lo - x, 0) + np.maximum(x - hi, 0), axis=-1)

    def check(self, points, tol: float = ON_MANIFOLD_TOL) -> np.ndarray:
        x = np.asarray(points, dtype=float)
        scale = max(1.0, self.radius if self.kind == "sphere" else self.diameter())
        if np.any(self.residual(x) > tol * scale):
            raise ManifoldError("point(s) off the manifold")
        return x

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "intrinsic_dim": self.intrinsic_dim}
        if self.kind == "sphere":
            d["radius"] = self.radius
        elif self.kind == "torus":
            d["periods"] = list(self.periods)
        else:
            d["lower"], d["upper"] = list(self.lower), list(self.upper)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ManifoldSpec":
        kind = d["kind"]
        if kind == "sphere":
            return cls.sphere(d.get("intrinsic_dim", 2), d.get("radius", 1.0))
        if kind == "torus":
            return cls.torus(d["periods"])
        if kind == "box":
            return cls.box(d["lower"], d["upper"])
        raise ManifoldError(f"unknown manifold kind {kind!r}")


# -- distances ---------------------------------------------------------------

def _torus_delta(spec, x, y):
    p = np.asarray(spec.periods)
    d = np.abs(x - y) % p
    return np.minimum(d, p - d)


def _geodesic(spec, x, y):
    if spec.kind == "sphere":
        # 2*atan2(|x-y|, |x+y|) is the arc angle, accurate at 0 and at pi
        num = np.linalg.norm(x - y, axis=-1)
        den = np.linalg.norm(x + y, axis=-1)
        return spec.radius * 2.0 * np.arctan2(num, den)
    if spec.kind == "torus":
        return np.linalg.norm(_torus_delta(spec, x, y), axis=-1)
    return np.linalg.norm(x - y, axis=-1)


def _extrinsic(spec, x, y):
    if spec.kind == "sphere":
        return np.linalg.norm(x - y, axis=-1)
    return _geodesic(spec, x, y)


def geodesic_distance(spec: ManifoldSpec, x, y, check: bool = True):
    """Intrinsic distance ``d_M(x, y)``."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if check:
        spec.check(x), spec.check(y)
    d = _geodesic(spec, x, y)
    return d if np.ndim(d) else float(d)


def extrinsic_distance(spec: ManifoldSpec, x, y, check: bool = True):
    """Computable approximation ``dtilde(x, y)``: chord on the sphere, exact elsewhere."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if check:
        spec.check(x), spec.check(y)
    d = _extrinsic(spec, x, y)
    return d if np.ndim(d) else float(d)


def chord_to_arc(spec: ManifoldSpec, chord):
    """Convert a ``dtilde`` value into ``d_M`` (identity off the sphere)."""
    if spec.kind != "sphere":
        return np.asarray(chord, dtype=float)
    R = spec.radius
    return 2.0 * R * np.arcsin(np.clip(np.asarray(chord) / (2.0 * R), 0.0, 1.0))


def arc_to_chord(spec: ManifoldSpec, arc):
    if spec.kind != "sphere":
        return np.asarray(arc, dtype=float)
    R = spec.radius
    return 2.0 * R * np.sin(np.minimum(np.asarray(arc, dtype=float), np.pi * R) / (2.0 * R))


@dataclass(frozen=True)
class DtildeError:
    C_M: float
    xi: float
    bound: float


def local_dtilde_error(spec: ManifoldSpec, epsilon: float, r_eta: float) -> DtildeError:
    """Bound on ``|dtilde - d_M|`` over pairs inside 1.1x the kernel support.

    On the sphere ``arc - chord <= arc^3 / (24 R^2)``; with ``arc <= 1.1 eps r_eta``
    this is ``C_M eps^3`` so ``xi = 2``.  The other kinds are exact.
    """
    if spec.kind != "sphere":
        return DtildeError(0.0, 2.0, 0.0)
    C_M = (1.1 * r_eta) ** 3 / (24.0 * spec.radius ** 2)
    return DtildeError(C_M, 2.0, C_M * epsilon ** 3)


# -- boundary sets -----------------------------------------------------------

@dataclass(frozen=True)
class BoundarySpec:
    """Closed set Gamma on the manifold.

    ``point-set``: finite anchors.  ``cap``: the geodesic circle of given
    radius around ``center``.  ``sublevel``: ``{x : sign * x[axis] <= threshold}``.
    """

    kind: str
    points: tuple = ()
    center: tuple = ()
    radius: float = 0.0
    function: str = "coordinate"
    axis: int = 0
    sign: float = 1.0
    threshold: float = 0.0

    @classmethod
    def point_set(cls, points) -> "BoundarySpec":
        pts = tuple(tuple(float(v) for v in p) for p in np.atleast_2d(points))
        if not pts:
            raise ManifoldError("empty boundary")
        return cls("point-set", points=pts)

    @classmethod
    def cap(cls, center, radius: float) -> "BoundarySpec":
        if not radius > 0:
            raise ManifoldError("cap radius must be positive")
        return cls("cap", center=tuple(float(v) for v in center), radius=float(radius))

    @classmethod
    def sublevel(cls, threshold: float, axis: int = 0, sign: float = 1.0,
                 function: str = "coordinate") -> "BoundarySpec":
        if function != "coordinate":
            raise ManifoldError(f"unknown sublevel function {function!r}")
        return cls("sublevel", function=function, axis=int(axis), sign=float(np.sign(sign) or 1.0),
                   threshold=float(threshold))

    def validate(self, spec: ManifoldSpec) -> "BoundarySpec":
        if self.kind == "point-set":
            if not self.points:
                raise ManifoldError("empty boundary")
            if np.any(spec.residual(np.asarray(self.points)) > 1e-12 * max(1.0, spec.radius)):
                raise ManifoldError("boundary anchors must lie on the manifold")
        elif self.kind == "cap":
            spec.check(np.asarray(self.center), tol=1e-12)
            if spec.kind == "torus" and self.radius >= min(spec.periods) / 2:
                raise ManifoldError("torus cap radius must be below half the smallest period")
            if spec.kind == "sphere" and self.radius > np.pi * spec.radius:
                raise ManifoldError("cap radius exceeds the sphere diameter")
        elif self.kind == "sublevel":
            if not 0 <= self.axis < spec.embedding_dim:
                raise ManifoldError("sublevel axis out of range")
        else:
            raise ManifoldError(f"unknown boundary kind {self.kind!r}")
        return self

    def to_dict(self) -> dict:
        if self.kind == "point-set":
            return {"kind": self.kind, "points": [list(p) for p in self.points]}
        if self.kind == "cap":
            return {"kind": self.kind, "center": list(self.center), "radius": self.radius}
        return {"kind": self.kind, "function": self.function, "axis": self.axis,
                "sign": self.sign, "threshold": self.threshold}

    @classmethod
    def from_dict(cls, d: dict) -> "BoundarySpec":
        kind = d["kind"]
        if kind == "point-set":
            return cls.point_set(d["points"])
        if kind == "cap":
            return cls.cap(d["center"], d["radius"])
        if kind == "sublevel":
            return cls.sublevel(d["threshold"], d.get("axis", 0), d.get("sign", 1.0),
                                d.get("function", "coordinate"))
        raise ManifoldError(f"unknown boundary kind {kind!r}")


def _circle_points(spec, center, radius, spacing):
    """Points of the geodesic circle of ``radius`` about ``center``."""
    c = np.asarray(center, dtype=float)
    if spec.kind == "sphere":
        R = spec.radius
        c = c / np.linalg.norm(c)
        # orthonormal basis of the tangent plane at c
        q, _ = np.linalg.qr(np.column_stack([c, np.eye(len(c))]))
        tangent = q[:, 1:len(c)]
        theta = radius / R
        circ = 2 * np.pi * R * np.sin(theta)
        dirs = _unit_directions(tangent.shape[1], circ, spacing)
        pts = np.cos(theta) * c + np.sin(theta) * (dirs @ tangent.T)
        return R * pts
    circ = 2 * np.pi * radius
    dirs = _unit_directions(spec.intrinsic_dim, circ, spacing)
    pts = c + radius * dirs
    if spec.kind == "torus":
        pts = np.mod(pts, np.asarray(spec.periods))
    return pts


def _unit_directions(k, circumference, spacing):
    if k == 1:
        return np.array([[1.0], [-1.0]])
    count = max(16, int(np.ceil(circumference / spacing)))
    if k == 2:
        phi = 2 * np.pi * np.arange(count) / count
        return np.column_stack([np.cos(phi), np.sin(phi)])
    # higher-dimensional spheres: deterministic quasi-uniform directions
    return _qmc_sphere(k - 1, count ** (k - 1) if count < 64 else count * 64)


def _qmc_sphere(m_star, count, seed=12345):
    sob = qmc.Sobol(m_star + 1, scramble=True, seed=seed)
    u = sob.random_base2(int(np.ceil(np.log2(max(count, 2)))))[:count]
    g = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def sample_boundary(spec: ManifoldSpec, gamma: BoundarySpec, spacing: float) -> np.ndarray:
    """Finite sample of Gamma (of its topological boundary for caps/sublevels)."""
    gamma.validate(spec)
    if gamma.kind == "point-set":
        return np.asarray(gamma.points, dtype=float)
    if gamma.kind == "cap":
        return _circle_points(spec, gamma.center, gamma.radius, spacing)
    return _level_points(spec, gamma, spacing)


def _level_points(spec, gamma, spacing):
    level = gamma.sign * gamma.threshold
    if spec.kind == "sphere":
        R = spec.radius
        if abs(level) > R:
            return np.empty((0, spec.embedding_dim))
        axis_vec = np.zeros(spec.embedding_dim)
        axis_vec[gamma.axis] = 1.0
        return _circle_points(spec, axis_vec * R, R * np.arccos(level / R), spacing)
    lo, hi = _domain_bounds(spec)
    if not lo[gamma.axis] <= level <= hi[gamma.axis]:
        return np.empty((0, spec.embedding_dim))
    axes = []
    for i in range(spec.intrinsic_dim):
        if i == gamma.axis:
            axes.append(np.array([level]))
        else:
            k = max(2, int(np.ceil((hi[i] - lo[i]) / spacing)) + 1)
            axes.append(np.linspace(lo[i], hi[i], k, endpoint=spec.kind == "box"))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def _domain_bounds(spec):
    if spec.kind == "torus":
        return np.zeros(spec.intrinsic_dim), np.asarray(spec.periods)
    return np.asarray(spec.lower), np.asarray(spec.upper)


def _chunked_min(fun, x, anchors, chunk=2048):
    out = np.empty(len(x))
    for s in range(0, len(x), chunk):
        out[s:s + chunk] = fun(x[s:s + chunk, None, :], anchors[None, :, :]).min(axis=1)
    return out


def distance_to_boundary(spec: ManifoldSpec, gamma: BoundarySpec, x, metric: str = "geodesic",
                         spacing: float = 1e-3):
    """Distance from ``x`` to Gamma in ``d_M`` (default) or ``dtilde``.

    Sublevel sets are resolved through a sample of their level set at
    ``spacing``; caps and point sets are exact.
    """
    gamma.validate(spec)
    x = spec.check(np.asarray(x, dtype=float))
    single = x.ndim == 1
    xs = np.atleast_2d(x)
    if metric not in ("geodesic", "extrinsic"):
        raise ManifoldError(f"unknown metric {metric!r}")
    if gamma.kind == "point-set":
        fun = _geodesic if metric == "geodesic" else _extrinsic
        d = _chunked_min(lambda a, b: fun(spec, a, b), xs, np.asarray(gamma.points))
    elif gamma.kind == "cap":
        arc = np.abs(_geodesic(spec, xs, np.asarray(gamma.center)) - gamma.radius)
        d = arc if metric == "geodesic" else arc_to_chord(spec, arc)
    else:
        phi = gamma.sign * xs[:, gamma.axis]
        sample = _level_points(spec, gamma, spacing)
        if len(sample) == 0:
            raise ManifoldError("sublevel set has empty level set on this manifold")
        fun = _geodesic if metric == "geodesic" else _extrinsic
        d = _chunked_min(lambda a, b: fun(spec, a, b), xs, sample)
        d = np.where(phi <= gamma.threshold, 0.0, d)
    return float(d[0]) if single else d


# -- point clouds ------------------------------------------------------------

@dataclass
class PointCloud:
    coords: np.ndarray
    seed: int
    spec: ManifoldSpec
    density: str = "uniform"
    density_params: dict = field(default_factory=dict)
    acceptance_rate: float = 1.0

    def __len__(self):
        return len(self.coords)

    def metadata(self) -> dict:
        return {"spec": self.spec.to_dict(), "seed": self.seed, "density": self.density,
                "density_params": self.density_params, "acceptance_rate": self.acceptance_rate,
                "n": len(self)}

    def save(self, path, header: str | None = None) -> None:
        path = Path(path)
        cols = ",".join(f"x{i}" for i in range(self.coords.shape[1]))
        with open(path, "w") as fh:
            if header:
                fh.write(header + "\n")
            fh.write(cols + "\n")
            for row in self.coords:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        with open(path.with_suffix(".json"), "w") as fh:
            json.dump(self.metadata(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "PointCloud":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        rows = [line for line in path.read_text().splitlines()
                if line and not line.startswith("#")][1:]
        coords = np.array([[float(v) for v in r.split(",")] for r in rows], dtype=float)
        coords = coords.reshape(len(rows), -1)
        return cls(coords, meta["seed"], ManifoldSpec.from_dict(meta["spec"]), meta["density"],
                   meta.get("density_params", {}), meta.get("acceptance_rate", 1.0))


def _rng(seed):
    return np.random.Generator(np.random.Philox(int(seed)))


def _uniform_draw(spec, rng, n):
    if spec.kind == "sphere":
        g = rng.standard_normal((n, spec.embedding_dim))
        return spec.radius * g / np.linalg.norm(g, axis=1, keepdims=True)
    lo, hi = _domain_bounds(spec)
    pts = lo + (hi - lo) * rng.random((n, spec.intrinsic_dim))
    if spec.kind == "torus":
        # guard against rounding up to the period
        pts = np.where(pts >= hi, lo, pts)
    return pts


def bump_density(spec: ManifoldSpec, x, center, width: float, height: float, floor: float):
    d = _geodesic(spec, np.asarray(x), np.asarray(center, dtype=float))
    return floor + height * np.exp(-0.5 * (d / width) ** 2)


def sample_points(spec: ManifoldSpec, n: int, density: str = "uniform", seed: int = 0,
                  density_params: dict | None = None) -> PointCloud:
    """Draw ``n`` i.i.d. points from ``density``; deterministic in ``seed``.

    ``radial-bump`` takes ``center``, ``width``, ``height`` and ``floor`` and
    has (unnormalised) density ``floor + height * exp(-d_M(x, center)^2 / 2 width^2)``;
    draws are obtained by rejection against the uniform law.
    """
    if n < 1:
        raise ManifoldError("n must be >= 1")
    rng = _rng(seed)
    params = dict(density_params or {})
    if density == "uniform":
        return PointCloud(_uniform_draw(spec, rng, n), int(seed), spec, density, params, 1.0)
    if density != "radial-bump":
        raise ManifoldError(f"unknown density {density!r}")

    floor = float(params.get("floor", 0.0))
    height = float(params.get("height", 1.0))
    width = float(params.get("width", 1.0))
    if not floor > 0:
        raise ManifoldError("density must be bounded below by a positive constant (floor > 0)")
    if height < 0 or not width > 0:
        raise ManifoldError("radial-bump needs height >= 0 and width > 0")
    center = np.asarray(params.get("center", _default_center(spec)), dtype=float)
    spec.check(center)
    params.update(center=center.tolist(), floor=floor, height=height, width=width)

    top = floor + height
    out, drawn = [], 0
    while sum(len(o) for o in out) < n:
        batch = _uniform_draw(spec, rng, max(2 * n, 256))
        drawn += len(batch)
        keep = rng.random(len(batch)) * top <= bump_density(spec, batch, center, width, height, floor)
        out.append(batch[keep])
    pts = np.concatenate(out)
    accepted = len(pts)
    return PointCloud(pts[:n], int(seed), spec, density, params, accepted / drawn)


def _default_center(spec):
    if spec.kind == "sphere":
        c = np.zeros(spec.embedding_dim)
        c[-1] = spec.radius
        return c
    lo, hi = _domain_bounds(spec)
    return (lo + hi) / 2


def quasi_uniform_points(spec: ManifoldSpec, count: int) -> np.ndarray:
    """Low-discrepancy probe set: Fibonacci lattice on S^2, cell-centred lattice on flat kinds."""
    if spec.kind == "sphere":
        if spec.intrinsic_dim == 2:
            i = np.arange(count) + 0.5
            z = 1.0 - 2.0 * i / count
            phi = np.pi * (1 + 5 ** 0.5) * i
            r = np.sqrt(1.0 - z * z)
            return spec.radius * np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
        return spec.radius * _qmc_sphere(spec.intrinsic_dim, count)
    lo, hi = _domain_bounds(spec)
    k = max(1, int(np.ceil(count ** (1.0 / spec.intrinsic_dim))))
    axes = [lo[i] + (np.arange(k) + 0.5) * (hi[i] - lo[i]) / k for i in range(spec.intrinsic_dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])
