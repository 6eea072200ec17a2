"""Triangle meshes: loading, normalization, oriented sampling and inside/outside labels.

All positions are float64 numpy arrays. Meshes are treated as immutable;
every operation returns a new object.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import DegenerateGeometryError, EmptyInputError, FormatError, PreconditionError

POINT_CLOUD_MAGIC = b"OATP"


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise PreconditionError("face index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def triangles(self):
        """(F, 3, 3) array of corner positions."""
        return self.vertices[self.faces]

    @property
    def face_areas(self):
        return 0.5 * np.linalg.norm(_face_cross(self.triangles), axis=1)

    @property
    def face_normals(self):
        """Unit normals following the right-hand rule on the face winding.

        Degenerate faces get a zero normal.
        """
        cr = _face_cross(self.triangles)
        norm = np.linalg.norm(cr, axis=1, keepdims=True)
        out = np.zeros_like(cr)
        ok = norm[:, 0] > 0
        out[ok] = cr[ok] / norm[ok]
        return out

    @property
    def degenerate_count(self):
        """Number of zero-area faces (kept in the mesh, never sampled)."""
        return int(np.count_nonzero(self.face_areas <= 0.0))

    @property
    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


@dataclass(frozen=True)
class OrientedPointCloud:
    positions: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        p = np.ascontiguousarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = np.ascontiguousarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if len(p) != len(n):
            raise PreconditionError("positions and normals differ in length")
        if len(n) and np.any(np.abs(np.linalg.norm(n, axis=1) - 1.0) > 1e-6):
            raise PreconditionError("normals must have unit length")
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "normals", n)

    def __len__(self):
        return len(self.positions)

    def subset(self, index):
        return OrientedPointCloud(self.positions[index], self.normals[index])


@dataclass(frozen=True)
class QuerySet:
    points: np.ndarray
    occupancy: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.points)


def _face_cross(tri):
    return np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])


# --------------------------------------------------------------------------
# loading / writing

def load_mesh(path):
    """Read an OBJ or PLY (ascii or binary little-endian) triangle mesh.

    Polygons are fan-triangulated. Degenerate faces are kept; see
    ``TriangleMesh.degenerate_count``.
    """
    path = os.fspath(path)
    ext = os.path.splitext(path)[1].lower()
    with open(path, "rb") as fh:
        data = fh.read()
    if ext == ".obj":
        mesh = _parse_obj(data)
    elif ext == ".ply":
        mesh = _parse_ply(data)
    else:
        raise FormatError(f"unsupported mesh extension {ext!r}")
    if len(mesh.faces) == 0:
        raise EmptyInputError(f"{path}: mesh has no faces")
    return mesh


def _parse_obj(data):
    verts, faces = [], []
    for lineno, raw in enumerate(data.decode("utf-8", errors="replace").splitlines(), 1):
        parts = raw.split("#", 1)[0].split()
        if not parts:
            continue
        tag = parts[0]
        try:
            if tag == "v":
                verts.append([float(t) for t in parts[1:4]])
                if len(verts[-1]) != 3:
                    raise ValueError("vertex needs 3 coordinates")
            elif tag == "f":
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                if len(idx) < 3:
                    raise ValueError("face needs at least 3 vertices")
                for k in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[k], idx[k + 1]))
        except ValueError as exc:
            raise FormatError(f"OBJ line {lineno}: {exc}") from None
    if faces and (min(min(f) for f in faces) < 0 or max(max(f) for f in faces) >= len(verts)):
        raise FormatError("OBJ face references a missing vertex")
    return TriangleMesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                        np.array(faces, dtype=np.int64).reshape(-1, 3))


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _parse_ply(data):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise FormatError("PLY header missing (byte 0)")
    body_start = data.index(b"\n", end) + 1
    header = data[:body_start].decode("ascii", errors="replace").splitlines()
    fmt = None
    elements = []
    for line in header:
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append([tok[1], int(tok[2]), []])
        elif tok[0] == "property":
            if not elements:
                raise FormatError("PLY property before element")
            if tok[1] == "list":
                elements[-1][2].append((tok[4], "list", _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]]))
            else:
                elements[-1][2].append((tok[2], _PLY_TYPES[tok[1]]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise FormatError(f"unsupported PLY format {fmt!r}")
    if fmt == "ascii":
        return _ply_ascii(data[body_start:], elements)
    return _ply_binary(data, body_start, elements)


def _ply_ascii(body, elements):
    lines = body.decode("ascii", errors="replace").split("\n")
    pos = 0
    verts = np.zeros((0, 3))
    faces = []
    for name, count, props in elements:
        rows = []
        for _ in range(count):
            while pos < len(lines) and not lines[pos].strip():
                pos += 1
            if pos >= len(lines):
                raise FormatError(f"PLY ascii body truncated in element {name!r} (line {pos + 1})")
            rows.append(lines[pos].split())
            pos += 1
        if name == "vertex":
            names = [p[0] for p in props]
            cols = [names.index(c) for c in ("x", "y", "z")]
            try:
                verts = np.array([[float(r[c]) for c in cols] for r in rows]).reshape(-1, 3)
            except (ValueError, IndexError):
                raise FormatError("PLY ascii vertex row malformed") from None
        elif name == "face":
            for r in rows:
                n = int(r[0])
                idx = [int(t) for t in r[1:1 + n]]
                for k in range(1, n - 1):
                    faces.append((idx[0], idx[k], idx[k + 1]))
    return _checked_mesh(verts, faces)


def _ply_binary(data, offset, elements):
    verts = np.zeros((0, 3))
    faces = []
    for name, count, props in elements:
        if all(len(p) == 2 for p in props):
            dt = np.dtype([(p[0], "<" + p[1]) for p in props])
            need = dt.itemsize * count
            if offset + need > len(data):
                raise FormatError(f"PLY binary body truncated in element {name!r} at byte offset {len(data)}"
                                  f" (expected {offset + need})")
            arr = np.frombuffer(data, dtype=dt, count=count, offset=offset)
            offset += need
            if name == "vertex":
                verts = np.stack([arr["x"], arr["y"], arr["z"]], axis=1).astype(np.float64)
            continue
        for _ in range(count):
            row = {}
            for p in props:
                if len(p) == 2:
                    size = np.dtype(p[1]).itemsize
                    if offset + size > len(data):
                        raise FormatError(f"PLY binary body truncated at byte offset {offset}")
                    row[p[0]] = np.frombuffer(data, "<" + p[1], 1, offset)[0]
                    offset += size
                else:
                    csize = np.dtype(p[2]).itemsize
                    if offset + csize > len(data):
                        raise FormatError(f"PLY binary body truncated at byte offset {offset}")
                    n = int(np.frombuffer(data, "<" + p[2], 1, offset)[0])
                    offset += csize
                    isize = np.dtype(p[3]).itemsize
                    if offset + n * isize > len(data):
                        raise FormatError(f"PLY binary body truncated at byte offset {offset}")
                    row[p[0]] = np.frombuffer(data, "<" + p[3], n, offset).astype(np.int64)
                    offset += n * isize
            if name == "face":
                idx = row.get("vertex_indices", row.get("vertex_index"))
                if idx is None:
                    raise FormatError("PLY face element lacks vertex_indices")
                for k in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[k], idx[k + 1]))
    return _checked_mesh(verts, faces)


def _checked_mesh(verts, faces):
    f = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if f.size and (f.min() < 0 or f.max() >= len(verts)):
        raise FormatError("PLY face references a missing vertex")
    return TriangleMesh(verts, f)


def write_obj(mesh, path):
    with open(path, "w") as fh:
        fh.write("".join("v %.9g %.9g %.9g\n" % tuple(v) for v in mesh.vertices))
        fh.write("".join("f %d %d %d\n" % tuple(f + 1) for f in mesh.faces))


def write_ply(mesh, path, binary=True):
    head = ("ply\nformat %s 1.0\nelement vertex %d\nproperty float x\nproperty float y\n"
            "property float z\nelement face %d\nproperty list uchar int vertex_indices\nend_header\n"
            % ("binary_little_endian" if binary else "ascii", len(mesh.vertices), len(mesh.faces)))
    with open(path, "wb") as fh:
        fh.write(head.encode("ascii"))
        if binary:
            fh.write(mesh.vertices.astype("<f4").tobytes())
            rec = np.zeros(len(mesh.faces), dtype=[("n", "u1"), ("i", "<i4", 3)])
            rec["n"] = 3
            rec["i"] = mesh.faces
            fh.write(rec.tobytes())
        else:
            fh.write("".join("%.9g %.9g %.9g\n" % tuple(v) for v in mesh.vertices).encode())
            fh.write("".join("3 %d %d %d\n" % tuple(f) for f in mesh.faces).encode())


def write_point_cloud(cloud, path):
    """Binary dump: ``OATP``, u32 count, then 6 little-endian f32 per point."""
    body = np.hstack([cloud.positions, cloud.normals]).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(POINT_CLOUD_MAGIC + struct.pack("<I", len(cloud)))
        fh.write(body.tobytes())


def read_point_cloud(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != POINT_CLOUD_MAGIC:
        raise FormatError("bad point cloud magic (byte 0)")
    (n,) = struct.unpack_from("<I", data, 4)
    if len(data) != 8 + 24 * n:
        raise FormatError(f"point cloud body has {len(data) - 8} bytes, expected {24 * n}")
    arr = np.frombuffer(data, "<f4", 6 * n, 8).reshape(n, 6).astype(np.float64)
    normals = arr[:, 3:]
    normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    return OrientedPointCloud(arr[:, :3], normals)


# --------------------------------------------------------------------------
# geometry

def normalize_mesh(mesh):
    """Uniformly scale and translate so the bounding box is centered at 0.5
    with its longest side equal to 1."""
    if len(mesh.vertices) == 0:
        raise EmptyInputError("mesh has no vertices")
    lo, hi = mesh.bounds
    extent = float((hi - lo).max())
    if extent <= 0.0:
        raise DegenerateGeometryError("mesh has zero extent")
    scale = 1.0 / extent
    offset = 0.5 - 0.5 * (lo + hi) * scale
    # clip only removes rounding noise at the faces of the unit cube
    return TriangleMesh(np.clip(mesh.vertices * scale + offset, 0.0, 1.0), mesh.faces.copy())


def _barycentric_points(tri, rng, n):
    u = rng.random((n, 2))
    su = np.sqrt(u[:, 0:1])
    # edge-vector form keeps samples of axis-aligned faces exactly on the face
    return (tri[:, 0] + su * (1.0 - u[:, 1:2]) * (tri[:, 1] - tri[:, 0])
            + su * u[:, 1:2] * (tri[:, 2] - tri[:, 0]))


def sample_surface(mesh, n, seed=0, return_faces=False):
    """Area-weighted surface samples carrying the normal of their source face."""
    if n < 1:
        raise PreconditionError("n must be >= 1")
    areas = mesh.face_areas
    total = areas.sum()
    if not total > 0.0:
        raise DegenerateGeometryError("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    face = rng.choice(len(areas), size=n, p=areas / total)
    pts = _barycentric_points(mesh.triangles[face], rng, n)
    cloud = OrientedPointCloud(pts, mesh.face_normals[face])
    if return_faces:
        return cloud, face
    return cloud


def sample_queries(mesh, n_uniform, n_near, sigma, seed=0):
    """Uniform volume samples plus jittered surface samples, labeled by
    ``occupancy``."""
    if sigma <= 0:
        raise PreconditionError("sigma must be positive")
    rng = np.random.default_rng(seed)
    uni = rng.random((n_uniform, 3))
    if n_near > 0:
        surf = sample_surface(mesh, n_near, seed=int(rng.integers(2**63))).positions
        near = np.clip(surf + rng.normal(scale=sigma, size=surf.shape), 0.0, 1.0)
    else:
        near = np.zeros((0, 3))
    pts = np.vstack([uni, near])
    return QuerySet(pts, occupancy(mesh, pts))


def winding_number(mesh, points):
    """Generalized winding number of each point w.r.t. the mesh.

    Sums signed solid angles of all triangles (Van Oosterom-Strackee formula),
    so it is exact for closed meshes and degrades gracefully with holes.
    """
    pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    tri = np.ascontiguousarray(mesh.triangles)
    if len(tri) == 0 or len(pts) == 0:
        return np.zeros(len(pts))
    return _winding_kernel(pts, tri)


@numba.njit(cache=True)
def _winding_kernel(pts, tri):
    out = np.empty(len(pts))
    for i in range(len(pts)):
        px, py, pz = pts[i, 0], pts[i, 1], pts[i, 2]
        total = 0.0
        for f in range(len(tri)):
            ax = tri[f, 0, 0] - px
            ay = tri[f, 0, 1] - py
            az = tri[f, 0, 2] - pz
            bx = tri[f, 1, 0] - px
            by = tri[f, 1, 1] - py
            bz = tri[f, 1, 2] - pz
            cx = tri[f, 2, 0] - px
            cy = tri[f, 2, 1] - py
            cz = tri[f, 2, 2] - pz
            la = np.sqrt(ax * ax + ay * ay + az * az)
            lb = np.sqrt(bx * bx + by * by + bz * bz)
            lc = np.sqrt(cx * cx + cy * cy + cz * cz)
            det = (ax * (by * cz - bz * cy) + ay * (bz * cx - bx * cz)
                   + az * (bx * cy - by * cx))
            den = (la * lb * lc + (ax * bx + ay * by + az * bz) * lc
                   + (bx * cx + by * cy + bz * cz) * la + (cx * ax + cy * ay + cz * az) * lb)
            total += np.arctan2(det, den)
        out[i] = total / (2.0 * np.pi)
    return out


def occupancy(mesh, points):
    """Vectorized inside labels (uint8) by winding number >= 0.5.

    Points lying exactly on the surface may get either label.
    """
    return (winding_number(mesh, points) >= 0.5).astype(np.uint8)


def occupancy_oracle(mesh, x):
    """Inside (1) / outside (0) label of a single point."""
    return int(occupancy(mesh, np.asarray(x, dtype=np.float64)[None])[0])
