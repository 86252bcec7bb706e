"""Reference solutions for the local problem and error measurement."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, dijkstra
from scipy.spatial import cKDTree

from .manifold import BoundarySpec, ManifoldSpec, PointCloud, _geodesic, distance_to_boundary


class OracleError(ValueError):
    pass


@dataclass
class OracleField:
    values: np.ndarray
    provenance: str


def local_solution_uniform(spec: ManifoldSpec, gamma: BoundarySpec, x, t):
    """``min(t, d_M(x, Gamma))``: the viscosity solution for ``P == 1`` and ``f0 == 0``."""
    if np.any(np.asarray(t) < 0):
        raise OracleError("time must be non-negative")
    d = distance_to_boundary(spec, gamma, x)
    return np.minimum(t, d)


def local_solution_field(spec, gamma, coords, times) -> np.ndarray:
    """Closed-form solution on every vertex at every time, shape ``(len(times), n)``."""
    d = np.atleast_1d(distance_to_boundary(spec, gamma, coords))
    return np.minimum(np.asarray(times, dtype=float)[:, None], d[None, :])


def knn_graph(spec: ManifoldSpec, coords, potential, k: int = 12):
    """Symmetrised kNN graph with edge cost ``d_M(u, v) (P(u) + P(v)) / 2``."""
    coords = np.asarray(coords, dtype=float)
    n = len(coords)
    k = min(k, n - 1)
    if spec.kind == "torus":
        tree = cKDTree(coords, boxsize=np.asarray(spec.periods))
    else:
        tree = cKDTree(coords)
    _, nbr = tree.query(coords, k=k + 1)
    rows = np.repeat(np.arange(n), k)
    cols = nbr[:, 1:].ravel()
    P = np.broadcast_to(np.asarray(potential, dtype=float), (n,))
    cost = _geodesic(spec, coords[rows], coords[cols]) * (P[rows] + P[cols]) / 2.0
    # coincident points would give zero-cost edges, which csgraph drops; keep them reachable
    cost = np.maximum(cost, np.finfo(float).tiny)
    A = coo_matrix((cost, (rows, cols)), shape=(n, n)).tocsr()
    return A.maximum(A.T)


def dijkstra_weighted_distance(cloud: PointCloud, potential, gamma_indices, k: int = 12) -> OracleField:
    """Multi-source shortest-path distance from the seed vertices on a kNN graph."""
    seeds = np.unique(np.asarray(gamma_indices, dtype=int))
    if len(seeds) == 0:
        raise OracleError("need at least one seed vertex")
    P = np.broadcast_to(np.asarray(potential, dtype=float), (len(cloud),))
    if np.any(P <= 0):
        raise OracleError("potential must be positive for the shortest-path oracle")
    if len(cloud) == 1:
        return OracleField(np.zeros(1), "dijkstra(n=1,k=0)")
    A = knn_graph(cloud.spec, cloud.coords, P, k)
    ncomp, _ = connected_components(A, directed=False)
    if ncomp > 1:
        raise OracleError(f"kNN graph is disconnected ({ncomp} components); raise k")
    d = dijkstra(A, directed=False, indices=seeds, min_only=True)
    return OracleField(np.asarray(d, dtype=float), f"dijkstra(n={len(cloud)},k={k})")


@dataclass
class ErrorRecord:
    n: int
    epsilon: float
    dt: float
    sup_error: float
    boundary_hausdorff: float
    runtime_seconds: float
    seed: int

    COLUMNS = ("n", "epsilon", "dt", "sup_error", "boundary_hausdorff", "runtime_seconds", "seed")

    def as_dict(self) -> dict:
        return asdict(self)


def sup_error(trajectory, oracle, snapshot_times=None, **meta) -> ErrorRecord:
    """``max |f_eps - f|`` over vertices and snapshots.

    ``trajectory`` and ``oracle`` are arrays of shape ``(snapshots, n)`` (or
    objects with a ``values`` attribute); ``snapshot_times`` optionally picks
    rows by index.  Remaining keyword arguments fill the record's metadata.
    """
    a = np.atleast_2d(np.asarray(getattr(trajectory, "values", trajectory), dtype=float))
    b = np.atleast_2d(np.asarray(getattr(oracle, "values", oracle), dtype=float))
    if a.shape != b.shape:
        raise OracleError(f"shape mismatch {a.shape} vs {b.shape}")
    if snapshot_times is not None:
        a, b = a[list(snapshot_times)], b[list(snapshot_times)]
    err = float(np.max(np.abs(a - b), initial=0.0))
    return ErrorRecord(int(meta.get("n", a.shape[1])), float(meta.get("epsilon", np.nan)),
                       float(meta.get("dt", np.nan)), err,
                       float(meta.get("boundary_hausdorff", np.nan)),
                       float(meta.get("runtime_seconds", np.nan)), int(meta.get("seed", -1)))
