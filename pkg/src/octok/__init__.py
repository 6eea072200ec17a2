"""Adaptive octree tokenization of 3D shapes.

Shapes are sampled into oriented point clouds, partitioned by an octree that
only refines cells whose quadric error exceeds a threshold, encoded as
breadth-first ``(code index, child mask)`` tokens with residual quantization,
and decoded back to occupancy grids and meshes.
"""

from .errors import *  # noqa: F401,F403
from .mesh import (OrientedPointCloud, QuerySet, TriangleMesh, load_mesh, normalize_mesh,
                   occupancy, occupancy_oracle, sample_queries, sample_surface, winding_number,
                   write_obj)
from .quadric import (Quadric, QuadricMin, cell_error, quadric_from_point_plane,
                      quadric_minimize, quadric_sum)
from .octree import (AdaptiveOctree, OctreeCell, build_adaptive_octree, build_occupancy_octree,
                     child_slot, deserialize_structure, serialize_structure, tree_pe_indices,
                     trim_to_budget)
from .tokenizer import (Codebook, ResidualCodes, TokenSequence, accumulate_latents,
                        encode_tokens, fit_codebook, leaf_latents, propagate_latents,
                        read_codebook, read_tokens, residual_quantize, write_codebook,
                        write_tokens)
from .decoder import (DecodedLeaf, OccupancyGrid, decode_leaves, decode_occupancy,
                      extract_mesh, occupancy_grid)
from .metrics import EvalReport, chamfer, iou, token_stats
from .pipeline import PipelineConfig

__version__ = "0.1.0"
