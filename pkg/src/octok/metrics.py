"""Reconstruction and tokenization metrics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyInputError, PreconditionError


def iou(grid_a, grid_b):
    """Volume IoU of two occupancy grids; 1 when both are empty."""
    a = np.asarray(getattr(grid_a, "values", grid_a), dtype=bool)
    b = np.asarray(getattr(grid_b, "values", grid_b), dtype=bool)
    if a.shape != b.shape:
        raise PreconditionError(f"grid shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def chamfer(pts_a, pts_b):
    """Symmetric Chamfer distance with squared nearest-neighbour distances.

    ``0.5 * (mean_a min_b |a-b|^2 + mean_b min_a |a-b|^2)``
    """
    a = np.asarray(pts_a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(pts_b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise EmptyInputError("chamfer needs two non-empty point sets")
    d_ab = cKDTree(b).query(a)[0]
    d_ba = cKDTree(a).query(b)[0]
    return 0.5 * (np.mean(d_ab ** 2) + np.mean(d_ba ** 2))


def entropy_bits(values):
    """Plug-in Shannon entropy of a discrete sample, in bits."""
    _, counts = np.unique(np.asarray(values), return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log2(p)).sum()) + 0.0


@dataclass
class EvalReport:
    token_count: int
    nodes_per_depth: dict
    threshold: float
    max_depth: int
    iou: float | None = None
    chamfer: float | None = None
    leaf_count: int | None = None
    internal_count: int | None = None
    q_entropy_bits: float | None = None
    runtime_ms: dict = field(default_factory=dict)
    config: dict | None = None

    @property
    def chamfer_x1e3(self):
        return None if self.chamfer is None else self.chamfer * 1e3

    def to_dict(self):
        d = {
            "iou": self.iou,
            "chamfer_x1e3": self.chamfer_x1e3,
            "token_count": self.token_count,
            "nodes_per_depth": {str(k): v for k, v in sorted(self.nodes_per_depth.items())},
            "threshold": self.threshold,
            "max_depth": self.max_depth,
            "runtime_ms": self.runtime_ms,
            "leaf_count": self.leaf_count,
            "internal_count": self.internal_count,
            "q_entropy_bits": self.q_entropy_bits,
        }
        if self.config is not None:
            d["config"] = self.config
        return d

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def token_stats(tokens):
    """Counts per depth, leaf/internal split and code-index entropy."""
    tree = tokens.structure()
    leaves = int(np.count_nonzero(tree.child_mask == 0))
    return EvalReport(
        token_count=len(tokens),
        nodes_per_depth=tree.nodes_per_depth(),
        threshold=tokens.threshold,
        max_depth=tokens.max_depth,
        leaf_count=leaves,
        internal_count=len(tokens) - leaves,
        q_entropy_bits=entropy_bits(tokens.q),
    )
