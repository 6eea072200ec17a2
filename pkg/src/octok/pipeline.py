"""End-to-end tokenize / reconstruct / evaluate helpers shared by the CLI."""

from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import decoder, metrics, octree, tokenizer
from .errors import EmptySurfaceError, PreconditionError
from .mesh import normalize_mesh, sample_surface


@dataclass(frozen=True)
class PipelineConfig:
    threshold: float = 5e-4
    max_depth: int = 6
    surface_points: int = 100_000
    codebook_size: int = 512
    grid: int = 128
    iou_grid: int = 64
    max_tokens: int = 2048
    seed: int = 0
    min_points_per_cell: int = 4
    codebook_iters: int = 50
    chamfer_points: int = 10_000

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name != "seed" and not v > 0:
                raise PreconditionError(f"{f.name} must be positive")
        if self.seed < 0:
            raise PreconditionError("seed must be non-negative")
        if self.max_depth > octree.MAX_DEPTH_LIMIT:
            raise PreconditionError(f"max_depth must be <= {octree.MAX_DEPTH_LIMIT}")
        if self.codebook_size > tokenizer.MAX_CODEBOOK_SIZE:
            raise PreconditionError(f"codebook_size must be <= {tokenizer.MAX_CODEBOOK_SIZE}")
        if self.max_tokens < 9:
            raise PreconditionError("max_tokens must be >= 9")

    def replace(self, **kw):
        return PipelineConfig(**{**asdict(self), **kw})

    def as_dict(self):
        return asdict(self)


class Timer(dict):
    """Collects wall-clock milliseconds per named stage."""

    @contextmanager
    def stage(self, name):
        t0 = time.perf_counter()
        yield
        self[name] = self.get(name, 0.0) + 1e3 * (time.perf_counter() - t0)


@dataclass
class Encoded:
    mesh: object
    cloud: object
    tree: object
    phi: np.ndarray
    codes: object = None
    tokens: object = None


def surface_cloud(mesh, cfg, normalize=True, seed=None):
    m = normalize_mesh(mesh) if normalize else mesh
    return m, sample_surface(m, cfg.surface_points, seed=cfg.seed if seed is None else seed)


def build_tree(cloud, cfg, threshold=None):
    T = cfg.threshold if threshold is None else threshold
    return octree.build_adaptive_octree(cloud, T, cfg.max_depth, cfg.min_points_per_cell)


def encode_mesh(mesh, cfg, codebook=None, normalize=True, timer=None):
    """Normalize, sample, build the tree and compute latents; quantize,
    trim to the token cap and emit tokens when a codebook is given."""
    timer = Timer() if timer is None else timer
    with timer.stage("sample"):
        m, cloud = surface_cloud(mesh, cfg, normalize)
    with timer.stage("octree"):
        tree = build_tree(cloud, cfg)
    with timer.stage("latents"):
        phi = tokenizer.tree_latents(tree, cloud)
    enc = Encoded(m, cloud, tree, phi)
    if codebook is not None:
        with timer.stage("quantize"):
            codes = tokenizer.residual_quantize(tree, phi, codebook)
            tree, codes = tokenizer.trim_tokens(tree, codes, cfg.max_tokens)
            enc.tree, enc.codes = tree, codes
            enc.tokens = tokenizer.encode_tokens(tree, codes, codebook, cfg.threshold)
    return enc


def codebook_corpus(meshes, cfg, seeds=(0,), thresholds=None, normalize=True):
    """(tree, latents) pairs for every mesh, sampling seed and threshold."""
    thresholds = (cfg.threshold,) if thresholds is None else thresholds
    corpus = []
    for mesh in meshes:
        for s in seeds:
            m, cloud = surface_cloud(mesh, cfg, normalize, seed=s)
            for T in thresholds:
                tree = build_tree(cloud, cfg, T)
                corpus.append((tree, tokenizer.tree_latents(tree, cloud)))
    return corpus


def reconstruct(leaves, R):
    grid = decoder.occupancy_grid(leaves, R)
    return grid, decoder.extract_mesh(grid)


def evaluate_leaves(gt_mesh, leaves, cfg, gt_grid=None, timer=None, strict=True):
    """IoU against the winding-number grid and Chamfer against surface samples.

    With ``strict=False`` an empty reconstructed surface yields ``None`` for
    the Chamfer distance and mesh instead of raising.
    """
    timer = Timer() if timer is None else timer
    with timer.stage("decode"):
        grid = decoder.occupancy_grid(leaves, cfg.iou_grid)
    with timer.stage("oracle"):
        if gt_grid is None:
            gt_grid = decoder.grid_from_mesh(gt_mesh, cfg.iou_grid)
    score = metrics.iou(grid, gt_grid)
    with timer.stage("extract"):
        fine = grid if cfg.grid == cfg.iou_grid else decoder.occupancy_grid(leaves, cfg.grid)
        try:
            rec = decoder.extract_mesh(fine)
        except EmptySurfaceError:
            if strict:
                raise
            return score, None, None
    with timer.stage("chamfer"):
        a = sample_surface(gt_mesh, cfg.chamfer_points, seed=cfg.seed + 1).positions
        b = sample_surface(rec, cfg.chamfer_points, seed=cfg.seed + 2).positions
        cd = metrics.chamfer(a, b)
    return score, cd, rec
