"""
Decoding to occupancy and a mesh
================================

Every decoded leaf is a plane. A query takes the plane of the leaf that
contains it (or of the nearest leaf) and is inside when it lies behind it.
Marching cubes over the occupancy grid gives the mesh.
"""

import numpy as np

from octok import shapes
from octok.decoder import decode_latent_tree, extract_mesh, grid_from_mesh, occupancy_grid
from octok.mesh import sample_surface
from octok.metrics import chamfer, iou
from octok.octree import build_adaptive_octree
from octok.tokenizer import tree_latents

for name, mesh in [("sphere", shapes.icosphere()), ("torus", shapes.torus()), ("cube", shapes.cube())]:
    cloud = sample_surface(mesh, 100_000, seed=0)
    tree = build_adaptive_octree(cloud, 5e-4, 6)
    leaves = decode_latent_tree(tree, tree_latents(tree, cloud))
    grid = occupancy_grid(leaves, 64)
    rec = extract_mesh(grid)
    score = iou(grid, grid_from_mesh(mesh, 64))
    cd = chamfer(sample_surface(mesh, 10_000, seed=1).positions, sample_surface(rec, 10_000, seed=2).positions)
    print("%-7s %4d tokens  IoU %.3f  CD x1e3 %.3f  %d faces" % (name, len(tree), score, 1e3 * cd, len(rec.faces)))

# a cube leaf holds three faces but decodes to one plane, which is why the
# cube scores low: each octant keeps only one of its three walls
cloud = sample_surface(shapes.cube(), 100_000, seed=0)
tree = build_adaptive_octree(cloud, 5e-4, 6)
leaves = decode_latent_tree(tree, tree_latents(tree, cloud))
print("cube octant normals:\n", np.round(leaves.normal, 3))
