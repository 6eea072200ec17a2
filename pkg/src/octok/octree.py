"""Complexity-driven sparse octrees over the unit cube.

Nodes are stored breadth-first in flat arrays. Child slots are numbered
``1 + 4*dx + 2*dy + dz`` and the child mask packs slot ``k`` into bit
``8 - k`` (most significant bit first), so a node with children in slots 2
and 5 has mask ``0b01001000 == 0x48``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import (DepthViolationError, EmptyInputError, FormatError,
                     MalformedStreamError, PreconditionError)
from .quadric import batched_cell_errors

STRUCTURE_MAGIC = b"OATS"
MAX_DEPTH_LIMIT = 10
MIN_POINTS_TO_SPLIT = 4

POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.int64)
# offsets (dx, dy, dz) of slots 1..8, row k-1 for slot k
SLOT_OFFSETS = np.array([[(s >> 2) & 1, (s >> 1) & 1, s & 1] for s in range(8)], dtype=np.int64)


def slot_bit(slot):
    """Mask bit for a 1-based slot."""
    return 0x80 >> (slot - 1)


def mask_slots(mask):
    """1-based slots present in a child mask, ascending."""
    return [k for k in range(1, 9) if mask & slot_bit(k)]


@dataclass(frozen=True)
class OctreeCell:
    center: np.ndarray
    depth: int
    child_mask: int
    parent_index: int | None
    point_range: tuple[int, int] | None = None
    e_star: float = float("nan")

    @property
    def size(self):
        return 2.0 ** -self.depth

    @property
    def lo(self):
        return self.center - 0.5 * self.size

    @property
    def is_leaf(self):
        return self.child_mask == 0


@dataclass(frozen=True, eq=False)
class AdaptiveOctree:
    """Breadth-first sparse octree.

    ``coords[i]`` is the integer position of node ``i`` among the ``2**depth``
    cells per axis at its depth; ``first_child[i]`` is -1 for leaves.
    ``point_start``/``point_count`` index into ``point_permutation`` and are
    absent (None) for trees rebuilt from a byte stream.
    """

    depth: np.ndarray
    coords: np.ndarray
    child_mask: np.ndarray
    parent: np.ndarray
    first_child: np.ndarray
    max_depth: int
    threshold: float = float("nan")
    e_star: np.ndarray | None = None
    point_start: np.ndarray | None = None
    point_count: np.ndarray | None = None
    point_permutation: np.ndarray | None = None

    def __len__(self):
        return len(self.depth)

    @property
    def centers(self):
        return (self.coords + 0.5) * (2.0 ** -self.depth)[:, None]

    @property
    def sizes(self):
        return 2.0 ** -self.depth

    @property
    def is_leaf(self):
        return self.child_mask == 0

    @property
    def leaves(self):
        return np.flatnonzero(self.child_mask == 0)

    def children(self, i):
        f = self.first_child[i]
        if f < 0:
            return range(0)
        return range(f, f + POPCOUNT[self.child_mask[i]])

    def cell(self, i):
        rng = None
        if self.point_start is not None:
            rng = (int(self.point_start[i]), int(self.point_start[i] + self.point_count[i]))
        return OctreeCell(
            center=self.centers[i], depth=int(self.depth[i]), child_mask=int(self.child_mask[i]),
            parent_index=None if self.parent[i] < 0 else int(self.parent[i]), point_range=rng,
            e_star=float(self.e_star[i]) if self.e_star is not None else float("nan"))

    def points_of(self, i):
        """Indices into the source cloud of the points inside node ``i``."""
        s = self.point_start[i]
        return self.point_permutation[s:s + self.point_count[i]]

    def node_keys(self):
        """Set of ``(depth, x, y, z)`` keys; equal keys mean the same cell."""
        return set(zip(self.depth.tolist(), *self.coords.T.tolist()))

    def nodes_per_depth(self):
        return {int(d): int(c) for d, c in zip(*np.unique(self.depth, return_counts=True))}

    def pe_indices(self):
        """Tree positional indices ``(x, y, z, d)`` for every node."""
        q = np.floor(self.centers * 2 ** self.max_depth).astype(np.int64)
        return np.column_stack([q, self.depth])

    def structure_equal(self, other):
        return (self.max_depth == other.max_depth
                and np.array_equal(self.child_mask, other.child_mask)
                and np.array_equal(self.depth, other.depth)
                and np.array_equal(self.parent, other.parent)
                and np.array_equal(self.coords, other.coords))


def child_slot(cell, x):
    """1-based slot of the child octant of ``cell`` containing ``x``.

    Cells are half-open per axis except at the upper face of the unit cube.
    """
    x = np.asarray(x, dtype=np.float64)
    lo = cell.lo
    hi = lo + cell.size
    inside = (x >= lo) & ((x < hi) | ((hi == 1.0) & (x <= 1.0)))
    if not inside.all():
        raise PreconditionError(f"point {x} lies outside cell at {cell.center}")
    dx, dy, dz = (x >= cell.center).astype(int)
    return 1 + 4 * dx + 2 * dy + dz


def tree_pe_indices(cell, L):
    """Quantized cell-center coordinates at resolution ``2**L`` plus depth."""
    q = np.floor(np.asarray(cell.center) * 2 ** L).astype(int)
    return int(q[0]), int(q[1]), int(q[2]), int(cell.depth)


# --------------------------------------------------------------------------
# construction

def build_adaptive_octree(cloud, T, L, min_points=MIN_POINTS_TO_SPLIT):
    """Subdivide a cell only while its depth is below ``L`` and its average
    quadric error exceeds ``T``. Cells holding fewer than ``min_points``
    points stay leaves."""
    if not T > 0:
        raise PreconditionError("threshold must be positive")
    return _build(cloud, L, T, min_points)


def build_occupancy_octree(cloud, L):
    """Reference tree that subdivides every non-empty cell down to depth ``L``."""
    return _build(cloud, L, None, 1)


def _build(cloud, L, T, min_points):
    if not 1 <= L <= MAX_DEPTH_LIMIT:
        raise PreconditionError(f"max depth must be in [1, {MAX_DEPTH_LIMIT}]")
    P = cloud.positions
    N = len(P)
    if N == 0:
        raise EmptyInputError("point cloud is empty")
    if P.min() < -1e-9 or P.max() > 1.0 + 1e-9:
        raise PreconditionError("points must lie in the unit cube")
    P = np.clip(P, 0.0, 1.0)
    perm = np.arange(N)

    depth = [np.zeros(1, np.int64)]
    coords = [np.zeros((1, 3), np.int64)]
    parent = [np.full(1, -1, np.int64)]
    start = [np.zeros(1, np.int64)]
    count = [np.array([N], np.int64)]
    masks, errors, first = [], [], []
    offset = 0  # BFS index of the first node of the current level

    for d in range(L + 1):
        st, ct, co = start[-1], count[-1], coords[-1]
        k = len(st)
        e, _, _ = batched_cell_errors(P[perm], cloud.normals[perm], st, ct)
        errors.append(e)
        split = np.full(k, d < L)
        if T is not None:
            split &= (e > T) & (ct >= min_points)
        mask = np.zeros(k, np.uint8)
        fc = np.full(k, -1, np.int64)
        if not split.any():
            masks.append(mask)
            first.append(fc)
            break

        sel = np.flatnonzero(split)
        pos = np.concatenate([np.arange(s, s + c) for s, c in zip(st[sel], ct[sel])])
        owner = np.repeat(np.arange(len(sel)), ct[sel])
        centers = (co[sel] + 0.5) * 2.0 ** -d
        bits = (P[perm[pos]] >= centers[owner]).astype(np.int64)
        slot0 = 4 * bits[:, 0] + 2 * bits[:, 1] + bits[:, 2]
        order = np.argsort(owner * 8 + slot0, kind="stable")
        perm[pos] = perm[pos[order]]
        hist = np.bincount(owner * 8 + slot0, minlength=8 * len(sel)).reshape(-1, 8)

        ch_owner, ch_slot = np.nonzero(hist)
        ch_count = hist[ch_owner, ch_slot]
        # child ranges follow one another inside each parent range
        ch_start = np.concatenate([[0], np.cumsum(ch_count)[:-1]])
        parent_first = np.concatenate([[0], np.cumsum(hist.sum(1))[:-1]])
        ch_start = st[sel][ch_owner] + ch_start - parent_first[ch_owner]

        mask[sel] = np.bitwise_or.reduceat(
            (0x80 >> ch_slot).astype(np.uint8), np.searchsorted(ch_owner, np.arange(len(sel))))
        n_before = np.concatenate([[0], np.cumsum((hist > 0).sum(1))[:-1]])
        fc[sel] = offset + k + n_before
        masks.append(mask)
        first.append(fc)

        depth.append(np.full(len(ch_owner), d + 1, np.int64))
        coords.append(2 * co[sel][ch_owner] + SLOT_OFFSETS[ch_slot])
        parent.append(offset + sel[ch_owner])
        start.append(ch_start)
        count.append(ch_count)
        offset += k

    n_levels = len(masks)
    cat = lambda xs: np.concatenate(xs[:n_levels])
    return AdaptiveOctree(
        depth=cat(depth), coords=cat(coords), child_mask=cat(masks), parent=cat(parent),
        first_child=cat(first), max_depth=L, threshold=float("nan") if T is None else float(T),
        e_star=cat(errors), point_start=cat(start), point_count=cat(count), point_permutation=perm)


# --------------------------------------------------------------------------
# serialization

def serialize_structure(tree):
    """One child-mask byte per node in breadth-first order."""
    return tree.child_mask.astype(np.uint8).tobytes()


def deserialize_structure(data, L):
    """Rebuild the tree structure from breadth-first child-mask bytes."""
    data = bytes(data)
    if not 0 <= L <= MAX_DEPTH_LIMIT:
        raise PreconditionError(f"max depth must be in [0, {MAX_DEPTH_LIMIT}]")
    if not data:
        raise MalformedStreamError("stream is empty, expected root mask", 0)
    depth, coords, parent, first = [0], [(0, 0, 0)], [-1], []
    i = 0
    while i < len(depth):
        if i >= len(data):
            raise MalformedStreamError(f"stream ended with {len(depth) - i} nodes undeclared", len(data))
        m = data[i]
        if m and depth[i] >= L:
            raise DepthViolationError(f"node {i} at depth {depth[i]} declares children (byte {i})")
        first.append(len(depth) if m else -1)
        cx, cy, cz = coords[i]
        for s in range(8):
            if m & (0x80 >> s):
                dx, dy, dz = SLOT_OFFSETS[s]
                depth.append(depth[i] + 1)
                coords.append((2 * cx + dx, 2 * cy + dy, 2 * cz + dz))
                parent.append(i)
        i += 1
    if len(data) != len(depth):
        raise MalformedStreamError(f"{len(data) - len(depth)} trailing bytes after last node", len(depth))
    return AdaptiveOctree(
        depth=np.array(depth, np.int64), coords=np.array(coords, np.int64).reshape(-1, 3),
        child_mask=np.frombuffer(data, np.uint8).copy(), parent=np.array(parent, np.int64),
        first_child=np.array(first, np.int64), max_depth=L)


def write_structure(tree, path):
    """``OATS`` dump: magic, u8 version, u8 L, u32 node count, masks."""
    with open(path, "wb") as fh:
        fh.write(STRUCTURE_MAGIC + struct.pack("<BBI", 1, tree.max_depth, len(tree)))
        fh.write(serialize_structure(tree))


def read_structure(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != STRUCTURE_MAGIC:
        raise FormatError("bad structure magic (byte 0)")
    version, L, n = struct.unpack_from("<BBI", data, 4)
    if version != 1:
        raise FormatError(f"unsupported structure version {version} (byte 4)")
    body = data[10:]
    if len(body) != n:
        raise MalformedStreamError(f"header declares {n} nodes, body has {len(body)}", 10 + min(n, len(body)))
    return deserialize_structure(body, L)


# --------------------------------------------------------------------------
# budget trimming

def trim_to_budget(tree, max_nodes):
    """Drop breadth-first tail nodes until at most ``max_nodes`` remain.

    The last node in BFS order is always a leaf, so truncating the node list
    keeps every surviving node's parent. Parents lose the bits of removed
    children; e_star caches are kept as-is.
    """
    if max_nodes < 1:
        raise PreconditionError("max_nodes must be >= 1")
    n = len(tree)
    if n <= max_nodes:
        return tree
    keep = slice(0, max_nodes)
    mask = tree.child_mask[keep].copy()
    first = tree.first_child[keep].copy()
    gone = np.arange(max_nodes, n)
    gone = gone[tree.parent[gone] < max_nodes]  # children of removed nodes need no update
    par = tree.parent[gone]
    slot0 = (4 * (tree.coords[gone, 0] & 1) + 2 * (tree.coords[gone, 1] & 1)
             + (tree.coords[gone, 2] & 1))
    np.bitwise_and.at(mask, par, ~(0x80 >> slot0).astype(np.uint8))
    first[mask == 0] = -1
    opt = lambda a: None if a is None else a[keep].copy()
    return replace(tree, depth=tree.depth[keep].copy(), coords=tree.coords[keep].copy(),
                   child_mask=mask, parent=tree.parent[keep].copy(), first_child=first,
                   e_star=opt(tree.e_star), point_start=opt(tree.point_start),
                   point_count=opt(tree.point_count))
