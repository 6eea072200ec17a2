"""
Adaptive octree
===============

Cells split only while their quadric error exceeds T and the depth limit
has not been reached. Flat regions stop early; curved ones keep going.
"""

from octok import shapes
from octok.mesh import sample_surface
from octok.octree import build_adaptive_octree, build_occupancy_octree, serialize_structure

fixtures = {"plane": shapes.square(), "cube": shapes.cube(), "sphere": shapes.icosphere(),
            "torus": shapes.torus(), "cylinder": shapes.cylinder()}

print("%-9s" % "T", "".join("%10s" % k for k in fixtures))
clouds = {k: sample_surface(m, 100_000, seed=0) for k, m in fixtures.items()}
for T in (1e-3, 5e-4, 3e-4, 1e-4):
    row = [len(build_adaptive_octree(c, T, 6)) for c in clouds.values()]
    print("%-9g" % T, "".join("%10d" % n for n in row))

# subdividing every non-empty cell to depth 6 costs far more nodes
full = {k: len(build_occupancy_octree(c, 6)) for k, c in clouds.items()}
print("full-depth occupancy trees:", full)

# the cube splits once: every octant then holds one corner with zero error
cube = build_adaptive_octree(clouds["cube"], 1e-4, 6)
print("cube errors per node:", cube.e_star.round(6))
print("cube child masks:", serialize_structure(cube).hex(" "))
print("nodes per depth, sphere at T=1e-4:", build_adaptive_octree(clouds["sphere"], 1e-4, 6).nodes_per_depth())
