"""Closed-form fixture meshes with outward (counter-clockwise) winding."""

import numpy as np

from .mesh import TriangleMesh


def box(lo=(0.25, 0.25, 0.25), hi=(0.75, 0.75, 0.75)):
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    corners = np.array([[(hi if (i >> k) & 1 else lo)[k] for k in range(3)] for i in range(8)])
    # corner index = x + 2y + 4z
    quads = [(0, 2, 3, 1), (4, 5, 7, 6),  # z-, z+
             (0, 1, 5, 4), (2, 6, 7, 3),  # y-, y+
             (0, 4, 6, 2), (1, 3, 7, 5)]  # x-, x+
    faces = []
    for a, b, c, d in quads:
        faces += [(a, b, c), (a, c, d)]
    return TriangleMesh(corners, np.array(faces))


def cube(lo=0.25, hi=0.75):
    return box((lo,) * 3, (hi,) * 3)


def square(z=0.5, lo=0.0, hi=1.0):
    """Open square sheet in the plane ``z`` facing +z."""
    v = np.array([[lo, lo, z], [hi, lo, z], [hi, hi, z], [lo, hi, z]])
    return TriangleMesh(v, np.array([[0, 1, 2], [0, 2, 3]]))


def icosphere(center=(0.5, 0.5, 0.5), radius=0.4, subdivisions=3):
    t = (1.0 + 5.0 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
             (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        nxt = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nxt += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = nxt
    v = np.array(verts) * radius + np.asarray(center, dtype=np.float64)
    return TriangleMesh(v, np.array(faces))


def torus(center=(0.5, 0.5, 0.5), major=0.3, minor=0.12, n_major=48, n_minor=24):
    """Torus around the z axis."""
    u = np.arange(n_major) * 2 * np.pi / n_major
    w = np.arange(n_minor) * 2 * np.pi / n_minor
    U, W = np.meshgrid(u, w, indexing="ij")
    r = major + minor * np.cos(W)
    v = np.stack([r * np.cos(U), r * np.sin(U), minor * np.sin(W)], axis=-1).reshape(-1, 3)
    idx = lambda i, j: (i % n_major) * n_minor + (j % n_minor)
    faces = []
    for i in range(n_major):
        for j in range(n_minor):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            faces += [(a, b, c), (a, c, d)]
    return TriangleMesh(v + np.asarray(center, dtype=np.float64), np.array(faces))


def cylinder(center=(0.5, 0.5, 0.5), radius=0.3, height=0.7, segments=48):
    """Closed cylinder along z with capped ends."""
    ang = np.arange(segments) * 2 * np.pi / segments
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    h = height / 2
    bottom = np.hstack([ring, np.full((segments, 1), -h)])
    top = np.hstack([ring, np.full((segments, 1), h)])
    v = np.vstack([bottom, top, [[0, 0, -h], [0, 0, h]]]) + np.asarray(center, dtype=np.float64)
    cb, ct = 2 * segments, 2 * segments + 1
    faces = []
    for i in range(segments):
        j = (i + 1) % segments
        faces += [(i, j, segments + j), (i, segments + j, segments + i)]
        faces += [(cb, j, i), (ct, segments + i, segments + j)]
    return TriangleMesh(v, np.array(faces))
