import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from eikograph.manifold import (BoundarySpec, ManifoldSpec, PointCloud, geodesic_distance,
                                sample_points)
from eikograph.reference import (OracleError, dijkstra_weighted_distance,
                                 local_solution_field, local_solution_uniform, sup_error)

S2 = ManifoldSpec.sphere(2, 1.0)
POLE = BoundarySpec.point_set([[0, 0, 1.0]])
CAP = BoundarySpec.cap([0, 0, 1.0], 0.3)


def pole_cloud(n, seed=1):
    c = sample_points(S2, n, seed=seed)
    return PointCloud(np.vstack([[0, 0, 1.0], c.coords]), seed, S2)


def test_uniform_solution_examples():
    x = sample_points(S2, 50, seed=2).coords
    assert np.all(local_solution_uniform(S2, CAP, x, 0.0) == 0)
    on = np.array([[0, math.sin(0.3), math.cos(0.3)]])
    assert local_solution_uniform(S2, CAP, on, 5.0) == pytest.approx(0.0, abs=1e-15)
    theta = 1.234
    y = [math.sin(theta), 0, math.cos(theta)]
    assert local_solution_uniform(S2, POLE, y, 100.0) == pytest.approx(theta, rel=1e-12)
    with pytest.raises(OracleError):
        local_solution_uniform(S2, CAP, x, -1.0)


def test_field_shape():
    x = sample_points(S2, 30, seed=3).coords
    f = local_solution_field(S2, CAP, x, [0.0, 0.5, 1.0])
    assert f.shape == (3, 30) and np.all(f[0] == 0)


@given(st.integers(0, 10_000), st.floats(0, 4), st.floats(0, 4))
def test_uniform_solution_lipschitz(seed, s, t):
    x, y = sample_points(S2, 2 * 200, seed=seed).coords.reshape(2, 200, 3)
    fx_s = local_solution_uniform(S2, CAP, x, s)
    fx_t = local_solution_uniform(S2, CAP, x, t)
    assert np.all(np.abs(fx_s - fx_t) <= abs(s - t) + 1e-12)
    fy_t = local_solution_uniform(S2, CAP, y, t)
    assert np.all(np.abs(fx_t - fy_t) <= geodesic_distance(S2, x, y) + 1e-12)


def test_dijkstra_against_great_circle():
    errs = []
    for n in (1000, 10_000, 100_000):
        c = pole_cloud(n)
        d = dijkstra_weighted_distance(c, 1.0, [0])
        assert d.provenance.startswith("dijkstra")
        theta = geodesic_distance(S2, c.coords, np.array([0, 0, 1.0]))
        assert np.all(d.values >= theta - 1e-12)  # a graph path is never shorter than the geodesic
        errs.append(float(np.max(np.abs(d.values - theta))))
    assert errs[0] > errs[1] > errs[2]
    # kNN paths keep an O(1) zig-zag stretch; measured 0.27 / 0.12 / 0.074 at k = 12
    assert errs[2] < 0.1


def test_dijkstra_trivial_cases():
    c = pole_cloud(500, seed=4)
    assert np.all(dijkstra_weighted_distance(c, 1.0, np.arange(len(c))).values == 0)
    one = dijkstra_weighted_distance(c, 1.0, [0, 5, 9]).values
    two = dijkstra_weighted_distance(c, 2.0, [0, 5, 9]).values
    assert np.array_equal(two, 2 * one)
    with pytest.raises(OracleError):
        dijkstra_weighted_distance(c, 1.0, [])
    with pytest.raises(OracleError):
        dijkstra_weighted_distance(c, 0.0, [0])


def test_dijkstra_disconnected():
    box = ManifoldSpec.box([0, 0], [10, 10])
    pts = np.vstack([np.random.default_rng(0).uniform(0, 1, (20, 2)),
                     np.random.default_rng(1).uniform(9, 10, (20, 2))])
    with pytest.raises(OracleError):
        dijkstra_weighted_distance(PointCloud(pts, 0, box), 1.0, [0], k=3)


def test_dijkstra_nonuniform_potential_bounds():
    c = pole_cloud(3000, seed=5)
    P = 1.0 + c.coords[:, 0] ** 2
    d = dijkstra_weighted_distance(c, P, [0]).values
    d1 = dijkstra_weighted_distance(c, 1.0, [0]).values
    assert np.all(d >= d1 - 1e-12) and np.all(d <= 2 * d1 + 1e-12)


def test_sup_error_properties():
    rng = np.random.default_rng(0)
    a, b, c = rng.normal(size=(3, 4, 25))
    assert sup_error(a, a).sup_error == 0
    assert sup_error(a + 0.5, a).sup_error == pytest.approx(0.5)
    assert sup_error(a, b).sup_error == sup_error(b, a).sup_error
    assert sup_error(a, c).sup_error <= sup_error(a, b).sup_error + sup_error(b, c).sup_error
    assert sup_error(a, b).sup_error > 0
    assert sup_error(a, b, snapshot_times=[0]).sup_error == np.max(np.abs(a[0] - b[0]))
    rec = sup_error(a, b, n=25, epsilon=0.3, dt=0.1, seed=4)
    assert (rec.n, rec.epsilon, rec.dt, rec.seed) == (25, 0.3, 0.1, 4)
    with pytest.raises(OracleError):
        sup_error(a, b[:, :3])


def test_end_to_end_record(tri):
    from eikograph.graph import build_graph, mark_boundary
    from eikograph.solver import SolverConfig, solve
    cloud = sample_points(S2, 2000, seed=8)
    g = build_graph(cloud, *tri, 0.3, mark_boundary(cloud, S2, CAP, 0.5, 0.3, 0.5))
    sol = solve(g, SolverConfig(dt=0.05, T=1.0))
    ref = local_solution_field(S2, CAP, cloud.coords, sol.times)
    rec = sup_error(sol, ref, n=2000, epsilon=0.3, dt=0.05, seed=8)
    assert 0 < rec.sup_error < 1 and math.isfinite(rec.sup_error)
