"""Occupancy decoding from latent trees and isosurface extraction.

Each leaf is decoded to a plane (point plus outward unit normal). A query
point takes the plane of the leaf cell containing it, or of the leaf with the
nearest center when no usable leaf contains it, and is inside iff it lies on
the back side of that plane.
"""

from __future__ import annotations

import struct
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from skimage.measure import marching_cubes

from .errors import CompatibilityError, DecodeError, EmptySurfaceError, FormatError, PreconditionError
from .mesh import TriangleMesh
from .tokenizer import LOCAL_POINT, MEAN_NORMAL, accumulate_latents

GRID_MAGIC = b"OATG"
DEGENERATE_NORMAL = 1e-8


@dataclass(frozen=True)
class DecodedLeaf:
    center: np.ndarray
    extent: float
    plane_point: np.ndarray
    normal: np.ndarray
    degenerate: bool = False


class DecodedLeaves(Sequence):
    """Read-only list of decoded leaves with a containment index."""

    def __init__(self, depth, coords, plane_point, normal, degenerate):
        self.depth = np.asarray(depth, dtype=np.int64)
        self.coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        self.plane_point = np.asarray(plane_point, dtype=np.float64).reshape(-1, 3)
        self.normal = np.asarray(normal, dtype=np.float64).reshape(-1, 3)
        self.degenerate = np.asarray(degenerate, dtype=bool)
        self.extent = 2.0 ** -self.depth
        self.center = (self.coords + 0.5) * self.extent[:, None]
        self._index = None

    def __len__(self):
        return len(self.depth)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[k] for k in range(*i.indices(len(self)))]
        return DecodedLeaf(self.center[i], float(self.extent[i]), self.plane_point[i],
                           self.normal[i], bool(self.degenerate[i]))

    @property
    def usable(self):
        return np.flatnonzero(~self.degenerate)

    def flipped(self):
        """Same leaves with every normal negated."""
        return DecodedLeaves(self.depth, self.coords, self.plane_point, -self.normal, self.degenerate)

    def _lookup(self):
        if self._index is None:
            use = self.usable
            if len(use) == 0:
                raise DecodeError("no usable leaves to decode")
            per_depth = []
            for d in np.unique(self.depth[use]):
                sel = use[self.depth[use] == d]
                c = self.coords[sel]
                key = (c[:, 0] * 2 ** d + c[:, 1]) * 2 ** d + c[:, 2]
                order = np.argsort(key)
                per_depth.append((int(d), key[order], sel[order]))
            self._index = (per_depth, cKDTree(self.center[use]), use)
        return self._index

    def locate(self, points):
        """Index of the leaf whose plane decides each point."""
        per_depth, kd, use = self._lookup()
        x = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        hit = np.full(len(x), -1, dtype=np.int64)
        for d, keys, idx in per_depth:
            n = 2 ** d
            c = np.clip(np.floor(x * n).astype(np.int64), 0, n - 1)
            key = (c[:, 0] * n + c[:, 1]) * n + c[:, 2]
            pos = np.minimum(np.searchsorted(keys, key), len(keys) - 1)
            ok = (keys[pos] == key) & np.all((x >= 0) & (x <= 1), axis=1)
            hit[ok] = idx[pos[ok]]
        miss = hit < 0
        if miss.any():
            hit[miss] = use[kd.query(x[miss])[1]]
        return hit


def decode_latent_tree(tree, phi):
    """Decode per-node latents (quantized or not) of ``tree`` to leaf planes."""
    leaves = tree.leaves
    size = tree.sizes[leaves]
    lo = tree.coords[leaves] * size[:, None]
    point = lo + phi[leaves, LOCAL_POINT] * size[:, None]
    n = phi[leaves, MEAN_NORMAL]
    norm = np.linalg.norm(n, axis=1)
    bad = ~(norm >= DEGENERATE_NORMAL)
    unit = np.zeros_like(n)
    unit[~bad] = n[~bad] / norm[~bad, None]
    return DecodedLeaves(tree.depth[leaves], tree.coords[leaves], point, unit, bad)


def decode_leaves(tokens, codebook):
    """Tokens -> structure -> accumulated latents -> leaf planes."""
    if tokens.codebook_hash != codebook.hash:
        raise CompatibilityError(
            f"token stream expects codebook {tokens.codebook_hash:#018x}, got {codebook.hash:#018x}")
    if len(tokens) and int(tokens.q.max()) >= codebook.K:
        raise CompatibilityError("token index outside the codebook")
    tree = tokens.structure()
    phi_hat = accumulate_latents(tree, codebook.entries[tokens.q.astype(np.int64)])
    return decode_latent_tree(tree, phi_hat)


def decode_occupancy(x, leaves):
    """Inside (1) / outside (0) for one point or an (N, 3) array of points."""
    pts = np.asarray(x, dtype=np.float64)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 3)
    k = leaves.locate(pts)
    side = np.einsum("ij,ij->i", leaves.normal[k], pts - leaves.plane_point[k])
    occ = (side <= 0).astype(np.uint8)
    return int(occ[0]) if single else occ


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """``values[i, j, k]`` is the occupancy at ``((i, j, k) + 0.5) / R``."""

    values: np.ndarray

    @property
    def resolution(self):
        return self.values.shape[0]

    @property
    def voxel_size(self):
        return 1.0 / self.resolution

    @staticmethod
    def cell_centers(R):
        g = (np.arange(R) + 0.5) / R
        return np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)

    def occupied_fraction(self):
        return float(self.values.mean())


def occupancy_grid(leaves, R=64):
    if R < 8:
        raise PreconditionError("grid resolution must be >= 8")
    occ = decode_occupancy(OccupancyGrid.cell_centers(R), leaves)
    return OccupancyGrid(occ.reshape(R, R, R))


def grid_from_mesh(mesh, R=64):
    """Ground-truth grid labelled by the mesh winding number."""
    from .mesh import occupancy
    return OccupancyGrid(occupancy(mesh, OccupancyGrid.cell_centers(R)).reshape(R, R, R))


def extract_mesh(grid):
    """Classic marching cubes at isovalue 0.5 over the binary field.

    The classic case table keeps every vertex on the midpoint of a
    sign-change edge; the topology-preserving variant inserts extra vertices
    inside ambiguous cells.
    """
    v = grid.values
    if v.min() == v.max():
        raise EmptySurfaceError("occupancy grid is uniform; no surface to extract")
    verts, faces, _, _ = marching_cubes(v.astype(np.float32), level=0.5, method="lorensen")
    verts = (verts.astype(np.float64) + 0.5) / grid.resolution
    # skimage winds faces inward for a field that is larger inside
    return TriangleMesh(verts, faces[:, ::-1].astype(np.int64))


def write_grid(grid, path):
    """``OATG`` dump: magic, u32 R, R^3 bits in C order packed little-endian."""
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC + struct.pack("<I", grid.resolution))
        fh.write(np.packbits(grid.values.ravel().astype(bool), bitorder="little").tobytes())


def read_grid(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != GRID_MAGIC:
        raise FormatError("bad grid magic (byte 0)")
    (R,) = struct.unpack_from("<I", data, 4)
    nbytes = (R ** 3 + 7) // 8
    if len(data) != 8 + nbytes:
        raise FormatError(f"grid body has {len(data) - 8} bytes, expected {nbytes}")
    bits = np.unpackbits(np.frombuffer(data, np.uint8, offset=8), bitorder="little")[:R ** 3]
    return OccupancyGrid(bits.reshape(R, R, R))
