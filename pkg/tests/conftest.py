import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from eikograph.graph import build_graph
from eikograph.kernel import kernel_constants, make_kernel
from eikograph.manifold import BoundarySpec, ManifoldSpec, PointCloud, sample_points

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def tri():
    k = make_kernel("triangular")
    return k, kernel_constants(k)


@pytest.fixture(scope="session")
def sphere():
    return ManifoldSpec.sphere(2, 1.0)


@pytest.fixture(scope="session")
def north_cap():
    return BoundarySpec.cap([0.0, 0.0, 1.0], 0.3)


def line_graph(xs, epsilon, kernel_pair, boundary=()):
    """Graph on points of the real line (a 1-d box), handy for hand-checked cases."""
    k, kc = kernel_pair
    xs = np.asarray(xs, dtype=float)
    spec = ManifoldSpec.box([min(xs.min(), 0.0)], [max(xs.max(), 1.0)])
    cloud = PointCloud(xs[:, None], 0, spec)
    mask = np.zeros(len(xs), dtype=bool)
    mask[list(boundary)] = True
    return build_graph(cloud, k, kc, epsilon, mask)


def random_graph(spec, n, seed, epsilon, kernel_pair, boundary_frac=0.1):
    k, kc = kernel_pair
    cloud = sample_points(spec, n, seed=seed)
    rng = np.random.default_rng(seed)
    mask = rng.uniform(size=n) < boundary_frac
    return build_graph(cloud, k, kc, epsilon, mask)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
