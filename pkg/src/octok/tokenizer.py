"""Per-node latents, codebook fitting, octree residual quantization and token files.

Latents are 8-vectors standing in for a learned encoder:

==========  ==========================================================
columns     meaning
==========  ==========================================================
0:3         quadric minimizer in cell-local coordinates (0..1 inside)
3:6         mean of the point normals (not renormalized)
6           sqrt of the cell's average quadric error, clipped to [0, 1]
7           fraction of all cloud points that fall in the cell
==========  ==========================================================
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CapExceededError, FormatError, PreconditionError, TrainingError
from .octree import deserialize_structure, trim_to_budget
from .quadric import batched_cell_errors

LATENT_DIM = 8
LOCAL_POINT = slice(0, 3)
MEAN_NORMAL = slice(3, 6)
ROOT_ERROR = 6
POINT_FRACTION = 7

TOKEN_MAGIC = b"OAT1"
CODEBOOK_MAGIC = b"OATC"
TOKEN_VERSION = 1
MAX_CODEBOOK_SIZE = 65536
DEFAULT_TOKEN_CAP = 2048

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a_64(data):
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


# --------------------------------------------------------------------------
# latents

def leaf_latents(tree, cloud):
    """Latent of every leaf, rows ordered like ``tree.leaves``."""
    leaves = tree.leaves
    st, ct = tree.point_start[leaves], tree.point_count[leaves]
    perm = tree.point_permutation
    P, N = cloud.positions[perm], cloud.normals[perm]
    e, x_star, _ = batched_cell_errors(P, N, st, ct)
    size = tree.sizes[leaves]
    lo = tree.coords[leaves] * size[:, None]
    out = np.empty((len(leaves), LATENT_DIM))
    out[:, LOCAL_POINT] = (x_star - lo) / size[:, None]
    # ranges of the leaves are disjoint, so sum them one by one
    sums = np.array([N[s:s + c].sum(axis=0) for s, c in zip(st, ct)]).reshape(-1, 3)
    out[:, MEAN_NORMAL] = sums / ct[:, None]
    out[:, ROOT_ERROR] = np.clip(np.sqrt(e), 0.0, 1.0)
    out[:, POINT_FRACTION] = ct / len(cloud)
    return out


def propagate_latents(tree, leaf_values):
    """Fill internal nodes bottom-up with the plain mean of their children."""
    leaf_values = np.asarray(leaf_values, dtype=np.float64)
    phi = np.zeros((len(tree), leaf_values.shape[1]))
    leaves = tree.leaves
    phi[leaves] = leaf_values
    n_children = np.bincount(tree.parent[1:], minlength=len(tree))
    for d in range(int(tree.depth.max()), 0, -1):
        nodes = np.flatnonzero(tree.depth == d)
        acc = np.zeros_like(phi)
        np.add.at(acc, tree.parent[nodes], phi[nodes])
        up = np.flatnonzero((tree.depth == d - 1) & (n_children > 0))
        phi[up] = acc[up] / n_children[up, None]
    return phi


def tree_latents(tree, cloud):
    return propagate_latents(tree, leaf_latents(tree, cloud))


def latent_residuals(tree, phi):
    """Unquantized parent differences; the root keeps its own latent."""
    res = phi.copy()
    res[1:] -= phi[tree.parent[1:]]
    return res


# --------------------------------------------------------------------------
# codebook

@dataclass(frozen=True, eq=False)
class Codebook:
    entries: np.ndarray
    iterations: int = 0
    seed: int = 0
    inertia_history: tuple = field(default=(), repr=False)

    def __post_init__(self):
        e = np.ascontiguousarray(self.entries, dtype=np.float64)
        if e.ndim != 2 or len(e) < 1:
            raise PreconditionError("codebook needs at least one entry")
        if len(e) > MAX_CODEBOOK_SIZE:
            raise PreconditionError(f"codebook larger than {MAX_CODEBOOK_SIZE}")
        object.__setattr__(self, "entries", e)

    def __len__(self):
        return len(self.entries)

    @property
    def K(self):
        return len(self.entries)

    @property
    def hash(self):
        """FNV-1a over the little-endian f32 entry bytes."""
        return fnv1a_64(self.entries.astype("<f4").tobytes())

    def quantize(self, vectors):
        """Index and value of the nearest entry (Euclidean, lowest index on ties)."""
        q = nearest_entry(vectors, self.entries)
        return self.entries[q], q


def nearest_entry(vectors, entries, chunk=2048):
    v = np.asarray(vectors, dtype=np.float64).reshape(-1, entries.shape[1])
    out = np.empty(len(v), dtype=np.int64)
    step = max(1, (chunk * 256) // max(len(entries), 1))
    for s in range(0, len(v), step):
        diff = v[s:s + step, None, :] - entries[None]
        out[s:s + step] = np.einsum("ikj,ikj->ik", diff, diff).argmin(axis=1)
    return out


def _sq_dist_to(points, centers):
    diff = points[:, None, :] - centers[None]
    return np.einsum("ikj,ikj->ik", diff, diff)


def kmeans(X, K, iters=50, seed=0):
    """Lloyd's k-means with k-means++ seeding.

    Empty clusters are re-seeded with the point farthest from its centroid.
    Returns ``(centroids, labels, inertia_history)``.
    """
    X = np.asarray(X, dtype=np.float64)
    rng = np.random.default_rng(seed)
    n = len(X)
    centers = np.empty((K, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for k in range(1, K):
        total = d2.sum()
        i = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers[k] = X[i]
        d2 = np.minimum(d2, ((X - centers[k]) ** 2).sum(axis=1))

    history = []
    labels = None
    for _ in range(max(iters, 1)):
        labels = nearest_entry(X, centers)
        dist = ((X - centers[labels]) ** 2).sum(axis=1)
        history.append(float(dist.sum()))
        counts = np.bincount(labels, minlength=K)
        new = np.zeros_like(centers)
        np.add.at(new, labels, X)
        filled = counts > 0
        new[filled] /= counts[filled, None]
        new[~filled] = centers[~filled]
        for k in np.flatnonzero(~filled):
            far = int(dist.argmax())
            new[k] = X[far]
            dist[far] = 0.0
        if np.array_equal(new, centers):
            break
        centers = new
    labels = nearest_entry(X, centers)
    history.append(float(((X - centers[labels]) ** 2).sum()))
    return centers, labels, history


def fit_codebook(corpus, K, iters=50, seed=0):
    """k-means codebook over the pooled parent-difference residuals.

    ``corpus`` is an iterable of ``(tree, per_node_latents)`` pairs.
    """
    pooled = np.vstack([latent_residuals(t, phi) for t, phi in corpus])
    distinct = len(np.unique(pooled, axis=0))
    if K < 1 or K > MAX_CODEBOOK_SIZE:
        raise TrainingError(f"codebook size {K} outside [1, {MAX_CODEBOOK_SIZE}]")
    if distinct < K:
        raise TrainingError(f"only {distinct} distinct residuals for {K} codebook entries")
    centers, _, history = kmeans(pooled, K, iters, seed)
    return Codebook(centers, iterations=len(history) - 1, seed=seed, inertia_history=tuple(history))


def write_codebook(codebook, path):
    """``OATC`` file: magic, u32 K, u32 dim, K*dim f32, u64 hash of the entries."""
    with open(path, "wb") as fh:
        fh.write(CODEBOOK_MAGIC + struct.pack("<II", codebook.K, codebook.entries.shape[1]))
        fh.write(codebook.entries.astype("<f4").tobytes())
        fh.write(struct.pack("<Q", codebook.hash))


def read_codebook(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CODEBOOK_MAGIC:
        raise FormatError("bad codebook magic (byte 0)")
    K, dim = struct.unpack_from("<II", data, 4)
    if dim != LATENT_DIM:
        raise FormatError(f"codebook dim {dim}, expected {LATENT_DIM} (byte 8)")
    need = 12 + 4 * K * dim + 8
    if len(data) != need:
        raise FormatError(f"codebook file has {len(data)} bytes, expected {need}")
    entries = np.frombuffer(data, "<f4", K * dim, 12).reshape(K, dim).astype(np.float64)
    cb = Codebook(entries)
    (stored,) = struct.unpack_from("<Q", data, need - 8)
    if stored != cb.hash:
        raise FormatError(f"codebook self-hash mismatch (byte {need - 8})")
    return cb


# --------------------------------------------------------------------------
# residual quantization

@dataclass(frozen=True, eq=False)
class ResidualCodes:
    z: np.ndarray
    q: np.ndarray
    z_acc: np.ndarray

    @property
    def phi_hat(self):
        return self.z_acc

    def __len__(self):
        return len(self.q)


def residual_quantize(tree, phi, codebook):
    """Level by level, quantize each node's latent minus its parent's
    accumulated quantized latent; the root is quantized directly."""
    phi = np.asarray(phi, dtype=np.float64)
    n = len(tree)
    z = np.zeros((n, phi.shape[1]))
    z_acc = np.zeros_like(z)
    q = np.zeros(n, dtype=np.int64)
    for d in range(int(tree.depth.max()) + 1):
        nodes = np.flatnonzero(tree.depth == d)
        base = z_acc[tree.parent[nodes]] if d > 0 else np.zeros((len(nodes), phi.shape[1]))
        z[nodes], q[nodes] = codebook.quantize(phi[nodes] - base)
        z_acc[nodes] = base + z[nodes]
    return ResidualCodes(z, q, z_acc)


def accumulate_latents(tree, z):
    """Sum of the residuals ``z`` along every root-to-node path."""
    z = np.asarray(z, dtype=np.float64)
    acc = z.copy()
    for d in range(1, int(tree.depth.max()) + 1):
        nodes = np.flatnonzero(tree.depth == d)
        acc[nodes] += acc[tree.parent[nodes]]
    return acc


# --------------------------------------------------------------------------
# token sequences

@dataclass(frozen=True, eq=False)
class TokenSequence:
    q: np.ndarray
    chi: np.ndarray
    max_depth: int
    threshold: float
    codebook_hash: int

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=np.uint16))
        object.__setattr__(self, "chi", np.asarray(self.chi, dtype=np.uint8))
        object.__setattr__(self, "threshold", float(np.float32(self.threshold)))
        if len(self.q) != len(self.chi):
            raise PreconditionError("q and chi differ in length")

    def __len__(self):
        return len(self.q)

    @property
    def node_count(self):
        return len(self.q)

    def __iter__(self):
        return iter(zip(self.q.tolist(), self.chi.tolist()))

    def __eq__(self, other):
        return (isinstance(other, TokenSequence) and self.max_depth == other.max_depth
                and self.threshold == other.threshold and self.codebook_hash == other.codebook_hash
                and np.array_equal(self.q, other.q) and np.array_equal(self.chi, other.chi))

    def structure(self):
        return deserialize_structure(self.chi.tobytes(), self.max_depth)

    @property
    def pe(self):
        """``(x, y, z, d)`` tree positional indices, one row per token."""
        return self.structure().pe_indices()


def encode_tokens(tree, codes, codebook, threshold=None):
    if len(codes) != len(tree):
        raise PreconditionError("codes do not cover the tree")
    T = tree.threshold if threshold is None else threshold
    return TokenSequence(codes.q, tree.child_mask, tree.max_depth, T, codebook.hash)


def trim_tokens(tree, codes, max_nodes):
    """Trim the tree to a node budget and drop the codes of removed nodes."""
    small = trim_to_budget(tree, max_nodes)
    n = len(small)
    return small, ResidualCodes(codes.z[:n], codes.q[:n], codes.z_acc[:n])


def write_tokens(seq, path, max_tokens=DEFAULT_TOKEN_CAP):
    """``OAT1`` file: magic, u8 version, u8 L, f32 T, u64 codebook hash,
    u32 count, then (u16 q, u8 chi) per node."""
    if max_tokens is not None and len(seq) > max_tokens:
        raise CapExceededError(f"{len(seq)} tokens exceed the cap of {max_tokens}; trim first")
    rec = np.empty(len(seq), dtype=[("q", "<u2"), ("chi", "u1")])
    rec["q"] = seq.q
    rec["chi"] = seq.chi
    with open(path, "wb") as fh:
        fh.write(TOKEN_MAGIC + struct.pack("<BBfQI", TOKEN_VERSION, seq.max_depth,
                                           seq.threshold, seq.codebook_hash, len(seq)))
        fh.write(rec.tobytes())


_HEADER = struct.Struct("<BBfQI")


def read_tokens(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != TOKEN_MAGIC:
        raise FormatError("bad token file magic (byte 0)")
    if len(data) < 4 + _HEADER.size:
        raise FormatError(f"token header truncated (byte {len(data)})")
    version, L, T, h, n = _HEADER.unpack_from(data, 4)
    if version != TOKEN_VERSION:
        raise FormatError(f"unsupported token file version {version} (byte 4)")
    off = 4 + _HEADER.size
    if len(data) != off + 3 * n:
        raise FormatError(f"token body has {len(data) - off} bytes, expected {3 * n}")
    rec = np.frombuffer(data, dtype=[("q", "<u2"), ("chi", "u1")], count=n, offset=off)
    return TokenSequence(rec["q"].copy(), rec["chi"].copy(), L, T, h)
