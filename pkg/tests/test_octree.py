import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import grid_min, random_tree
from octok.errors import DepthViolationError, EmptyInputError, MalformedStreamError, PreconditionError
from octok.mesh import OrientedPointCloud, sample_surface
from octok.octree import (AdaptiveOctree, OctreeCell, build_adaptive_octree, build_occupancy_octree,
                          child_slot, deserialize_structure, read_structure, serialize_structure,
                          tree_pe_indices, trim_to_budget, write_structure)
from octok.shapes import icosphere


def root_cell():
    return OctreeCell(center=np.full(3, 0.5), depth=0, child_mask=0, parent_index=None)


def check_invariants(tree):
    n = len(tree)
    assert tree.depth[0] == 0 and tuple(tree.coords[0]) == (0, 0, 0)
    for i in range(n):
        kids = list(tree.children(i))
        assert len(kids) == bin(int(tree.child_mask[i])).count("1")
        for j in kids:
            assert tree.parent[j] == i and j > i
            assert tree.depth[j] == tree.depth[i] + 1
            assert np.all(tree.coords[j] // 2 == tree.coords[i])
    assert np.all(np.diff(tree.depth) >= 0)


# ---- child_slot

@pytest.mark.parametrize("x, slot", [((0.1, 0.1, 0.1), 1), ((0.9, 0.9, 0.9), 8), ((0.9, 0.1, 0.9), 6),
                                     ((0.5, 0.5, 0.5), 8), ((1.0, 1.0, 1.0), 8), ((0, 0, 0), 1)])
def test_child_slot(x, slot):
    assert child_slot(root_cell(), x) == slot


def test_child_slot_outside():
    with pytest.raises(PreconditionError):
        child_slot(root_cell(), (1.1, 0.2, 0.2))
    sub = OctreeCell(center=np.full(3, 0.25), depth=1, child_mask=0, parent_index=0)
    with pytest.raises(PreconditionError):
        child_slot(sub, (0.5, 0.1, 0.1))  # upper face of an inner cell is open


# ---- construction

def test_plane_stops_at_root(plane_cloud):
    tree = build_adaptive_octree(plane_cloud, 1e-4, 6)
    assert len(tree) == 1 and tree.e_star[0] < 1e-10
    assert serialize_structure(tree) == b"\x00"


def test_cube_nine_nodes(cube_cloud):
    tree = build_adaptive_octree(cube_cloud, 1e-4, 6)
    assert len(tree) == 9 and len(tree.leaves) == 8
    assert tree.e_star[0] == pytest.approx(0.0625, rel=0.02)
    assert np.all(tree.e_star[1:] < 1e-10)
    P, N = cube_cloud.positions, cube_cloud.normals
    for i in range(9):
        idx = tree.points_of(i)
        p, n = P[idx], N[idx]
        energy = lambda X: np.concatenate([(((x[:, None, :] - p[None]) * n[None]).sum(-1) ** 2).mean(1)
                                           for x in np.array_split(X, max(1, len(X) // 256))])
        lo = tree.coords[i] * tree.sizes[i]
        e_grid, _, h = grid_min(energy, lo, lo + tree.sizes[i], n=17)
        # grid search bounds the continuous minimum from above; unit normals
        # give the averaged quadric trace 1, so lambda_max <= 1
        assert tree.e_star[i] <= e_grid + 1e-12
        assert e_grid - tree.e_star[i] <= 3 * h * h / 4


@pytest.fixture(scope="module")
def sphere_cloud_100k(sphere_mesh):
    return sample_surface(sphere_mesh, 100_000, seed=0)


def test_sphere_monotone_in_threshold(sphere_cloud_100k, cube_mesh):
    cube = sample_surface(cube_mesh, 100_000, seed=0)
    counts = []
    for T in (1e-3, 5e-4, 3e-4, 1e-4):
        counts.append(len(build_adaptive_octree(sphere_cloud_100k, T, 6)))
        assert counts[-1] > len(build_adaptive_octree(cube, T, 6))
    assert counts == sorted(counts)


def test_empty_cloud():
    with pytest.raises(EmptyInputError):
        build_adaptive_octree(OrientedPointCloud(np.zeros((0, 3)), np.zeros((0, 3))), 1e-4, 6)


@pytest.mark.parametrize("T, L", [(0.0, 6), (-1.0, 6), (1e-4, 0), (1e-4, 11)])
def test_bad_parameters(plane_cloud, T, L):
    with pytest.raises(PreconditionError):
        build_adaptive_octree(plane_cloud, T, L)


def test_outside_unit_cube():
    cloud = OrientedPointCloud(np.array([[0.5, 0.5, 1.5]]), np.array([[0.0, 0, 1]]))
    with pytest.raises(PreconditionError):
        build_adaptive_octree(cloud, 1e-4, 6)


def test_small_cells_are_not_split():
    P = np.array([[0.1, 0.1, 0.1], [0.9, 0.2, 0.3], [0.2, 0.8, 0.1]])
    N = np.array([[1.0, 0, 0], [0, 1, 0], [0, 0, 1]])
    tree = build_adaptive_octree(OrientedPointCloud(P, N), 1e-12, 6)
    assert len(tree) == 1


def adaptive_trees(sphere_cloud_100k, cube_cloud, plane_cloud):
    for cloud in (sphere_cloud_100k, cube_cloud, plane_cloud):
        for T in (1e-3, 1e-4):
            yield cloud, T, build_adaptive_octree(cloud, T, 6)


def test_structural_invariants(sphere_cloud_100k, cube_cloud, plane_cloud):
    for cloud, T, tree in adaptive_trees(sphere_cloud_100k, cube_cloud, plane_cloud):
        check_invariants(tree)
        internal = tree.child_mask != 0
        assert np.all(tree.e_star[internal] > T) and np.all(tree.depth[internal] < 6)
        leaf = ~internal
        shallow = leaf & (tree.depth < 6) & (tree.point_count >= 4)
        assert np.all(tree.e_star[shallow] <= T)
        assert np.all(tree.point_count > 0)
        # leaf ranges partition the cloud
        idx = np.concatenate([tree.points_of(i) for i in tree.leaves])
        assert np.array_equal(np.sort(idx), np.arange(len(cloud)))
        # every point lies in its leaf cell
        for i in tree.leaves[:: max(1, len(tree.leaves) // 20)]:
            lo = tree.coords[i] * tree.sizes[i]
            p = cloud.positions[tree.points_of(i)]
            assert np.all(p >= lo) and np.all((p < lo + tree.sizes[i]) | (p == 1.0))


def test_threshold_nesting(sphere_cloud_100k):
    keys = [build_adaptive_octree(sphere_cloud_100k, T, 6).node_keys() for T in (1e-3, 5e-4, 3e-4, 1e-4)]
    for coarse, fine in zip(keys, keys[1:]):
        assert coarse <= fine


def test_adaptive_not_larger_than_occupancy(sphere_cloud_100k, cube_cloud):
    for cloud in (sphere_cloud_100k, cube_cloud):
        full = build_occupancy_octree(cloud, 6)
        check_invariants(full)
        assert np.all(full.depth[full.leaves] == 6)
        for T in (1e-3, 1e-4):
            assert len(build_adaptive_octree(cloud, T, 6)) <= len(full)


def test_boundary_points_land_once():
    P = np.array([[0.5, 0.5, 0.5], [1.0, 1.0, 1.0], [0.0, 0.0, 0.0], [0.25, 0.75, 1.0], [0.5, 0.0, 1.0]])
    N = np.tile([0.0, 0.0, 1.0], (5, 1))
    tree = build_occupancy_octree(OrientedPointCloud(P, N), 3)
    idx = np.concatenate([tree.points_of(i) for i in tree.leaves])
    assert sorted(idx.tolist()) == list(range(5))


def test_deterministic(cube_cloud):
    a = build_adaptive_octree(cube_cloud, 1e-4, 6)
    b = build_adaptive_octree(cube_cloud, 1e-4, 6)
    assert serialize_structure(a) == serialize_structure(b)
    assert np.array_equal(a.point_permutation, b.point_permutation)


# ---- serialization

def test_serialize_slots_two_and_five():
    tree = deserialize_structure(bytes([0x48, 0, 0]), 6)
    assert len(tree) == 3
    assert serialize_structure(tree) == bytes([0x48, 0, 0])
    # slot 2 -> (0,0,1), slot 5 -> (1,0,0)
    assert np.allclose(tree.centers[1:], [[0.25, 0.25, 0.75], [0.75, 0.25, 0.25]])
    assert tree.parent.tolist() == [-1, 0, 0]


def test_full_one_level():
    tree = deserialize_structure(bytes([0xFF] + [0] * 8), 6)
    assert len(tree) == 9
    assert [child_slot(root_cell(), c) for c in tree.centers[1:]] == list(range(1, 9))


def test_single_node():
    tree = deserialize_structure(b"\x00", 6)
    assert len(tree) == 1 and serialize_structure(tree) == b"\x00"


@pytest.mark.parametrize("data, index", [(bytes([0x48, 0]), 2), (b"", 0), (bytes([0x48, 0, 0, 0]), 3)])
def test_malformed(data, index):
    with pytest.raises(MalformedStreamError) as err:
        deserialize_structure(data, 6)
    assert err.value.index == index
    assert f"byte {index}" in str(err.value)


def test_depth_violation():
    with pytest.raises(DepthViolationError):
        deserialize_structure(bytes([0x80, 0x80, 0]), 1)
    assert len(deserialize_structure(bytes([0x80, 0x80, 0]), 2)) == 3


def test_random_tree_round_trips():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        L = int(rng.integers(1, 6))
        rec = random_tree(rng, L, p_split=float(rng.uniform(0.2, 0.6)))
        data = bytes(r[0] for r in rec)
        tree = deserialize_structure(data, L)
        assert serialize_structure(tree) == data
        assert tree.depth.tolist() == [r[1] for r in rec]
        assert [tuple(c) for c in tree.coords.tolist()] == [r[2] for r in rec]
        assert tree.parent.tolist() == [r[3] for r in rec]
        assert tree.structure_equal(deserialize_structure(serialize_structure(tree), L))


def test_built_tree_round_trip(sphere_cloud_100k):
    tree = build_adaptive_octree(sphere_cloud_100k, 1e-4, 6)
    back = deserialize_structure(serialize_structure(tree), 6)
    assert back.structure_equal(tree)
    assert back.e_star is None and back.point_start is None


def test_structure_file(tmp_path, cube_cloud):
    tree = build_adaptive_octree(cube_cloud, 1e-4, 6)
    path = tmp_path / "cube.oats"
    write_structure(tree, path)
    data = path.read_bytes()
    assert data[:4] == b"OATS" and data[4] == 1 and data[5] == 6
    assert int.from_bytes(data[6:10], "little") == 9 and len(data) == 19
    assert read_structure(path).structure_equal(tree)
    path.write_bytes(data[:-1])
    with pytest.raises(MalformedStreamError):
        read_structure(path)


# ---- trimming

def test_trim_noop(cube_cloud):
    tree = build_adaptive_octree(cube_cloud, 1e-4, 6)
    assert trim_to_budget(tree, 9) is tree


def test_trim_root_keeps_first_children():
    tree = trim_to_budget(deserialize_structure(bytes([0xFF] + [0] * 8), 6), 5)
    assert len(tree) == 5
    assert serialize_structure(tree) == bytes([0xF0, 0, 0, 0, 0])
    check_invariants(tree)


def test_trim_collapses_parents():
    # root -> slots 1, 2; slot-1 child has two leaves
    tree = deserialize_structure(bytes([0xC0, 0xC0, 0x00, 0x00, 0x00]), 6)
    assert serialize_structure(trim_to_budget(tree, 3)) == bytes([0xC0, 0x00, 0x00])


def test_trim_bad_budget():
    with pytest.raises(PreconditionError):
        trim_to_budget(deserialize_structure(b"\x00", 6), 0)


@given(st.integers(0, 2**32 - 1), st.integers(1, 200))
@settings(max_examples=200, deadline=None)
def test_trim_prefix_closed(seed, budget):
    rng = np.random.default_rng(seed)
    rec = random_tree(rng, 4, 0.7)
    tree = deserialize_structure(bytes(r[0] for r in rec), 4)
    out = trim_to_budget(tree, budget)
    assert len(out) <= budget and len(out) == min(budget, len(tree))
    check_invariants(out)
    keys = out.node_keys()
    assert keys <= tree.node_keys()
    for i in range(1, len(out)):
        d, c = out.depth[i], out.coords[i]
        assert (int(d) - 1, *map(int, c // 2)) in keys
    # re-serialization is a valid stream
    assert deserialize_structure(serialize_structure(out), 4).structure_equal(out)


# ---- positional indices

def test_pe_indices():
    assert tree_pe_indices(root_cell(), 6) == (32, 32, 32, 0)
    c1 = OctreeCell(center=np.full(3, 0.25), depth=1, child_mask=0, parent_index=0)
    assert tree_pe_indices(c1, 6) == (16, 16, 16, 1)
    c6 = OctreeCell(center=np.full(3, 1 - 2.0 ** -7), depth=6, child_mask=0, parent_index=1)
    assert tree_pe_indices(c6, 6) == (63, 63, 63, 6)


def test_pe_indices_tree(sphere_cloud_100k):
    tree = build_adaptive_octree(sphere_cloud_100k, 1e-4, 6)
    pe = tree.pe_indices()
    assert pe[:, :3].min() >= 0 and pe[:, :3].max() < 64
    assert np.array_equal(pe[:, 3], tree.depth)
    for i in (0, len(tree) // 2, len(tree) - 1):
        assert tuple(pe[i]) == tree_pe_indices(tree.cell(i), 6)
