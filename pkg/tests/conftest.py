from collections import deque

import numpy as np
import pytest

from octok import shapes
from octok.mesh import sample_surface


def grid_min(energy, lo, hi, n=64):
    """Brute-force minimum of a vectorized energy over an n^3 lattice."""
    axes = [np.linspace(lo[k], hi[k], n) for k in range(3)]
    g = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    e = energy(g)
    i = int(np.argmin(e))
    return e[i], g[i], max((hi[k] - lo[k]) / (n - 1) for k in range(3))


def random_tree(rng, L, p_split=0.5):
    """Nested ``(slot, children)`` lists, expanded into BFS records."""
    def grow(d):
        if d >= L or rng.random() > p_split:
            return []
        slots = sorted(rng.choice(8, size=rng.integers(1, 9), replace=False) + 1)
        return [(int(s), grow(d + 1)) for s in slots]

    records = []  # (mask, depth, coords, parent)
    queue = deque([(grow(0), 0, (0, 0, 0), -1)])
    while queue:
        kids, d, c, par = queue.popleft()
        me = len(records)
        mask = 0
        for s, sub in kids:
            mask |= 1 << (8 - s)
            k = s - 1
            queue.append((sub, d + 1, (2 * c[0] + (k >> 2 & 1), 2 * c[1] + (k >> 1 & 1), 2 * c[2] + (k & 1)), me))
        records.append((mask, d, c, par))
    return records


@pytest.fixture(scope="session")
def cube_mesh():
    return shapes.cube()


@pytest.fixture(scope="session")
def sphere_mesh():
    return shapes.icosphere()


@pytest.fixture(scope="session")
def plane_mesh():
    return shapes.square()


@pytest.fixture(scope="session")
def cube_cloud(cube_mesh):
    return sample_surface(cube_mesh, 10_000, seed=0)


@pytest.fixture(scope="session")
def plane_cloud(plane_mesh):
    return sample_surface(plane_mesh, 10_000, seed=0)


@pytest.fixture(scope="session")
def sphere_cloud(sphere_mesh):
    return sample_surface(sphere_mesh, 100_000, seed=0)
