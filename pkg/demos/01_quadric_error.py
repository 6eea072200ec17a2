"""
Quadric error of a cell
=======================

A cell's points and normals define a sum of squared point-to-plane
distances. Its minimum, averaged per point, says how far the cell is
from being explained by a single surface feature.
"""

import numpy as np

from octok.quadric import cell_error, quadric_from_points, quadric_minimize

rng = np.random.default_rng(0)

# flat patch: every point lies on z = 0.5, so the error vanishes
xy = rng.random((200, 2))
flat = np.column_stack([xy, np.full(200, 0.5)])
e, x_star, regularized = cell_error(flat, np.tile([0, 0, 1.0], (200, 1)))
print("flat patch      E* = %.2e  regularized solve: %s" % (e, regularized))

# corner of a box: three planes meet in a point, still zero error
P = np.vstack([np.column_stack([np.zeros(50), rng.random((50, 2))]),
               np.column_stack([rng.random(50), np.zeros(50), rng.random(50)]),
               np.column_stack([rng.random((50, 2)), np.zeros(50)])])
N = np.repeat(np.eye(3), 50, axis=0)
e, x_star, _ = cell_error(P, N)
print("box corner      E* = %.2e  minimizer %s" % (e, np.round(x_star, 6) + 0.0))

# two parallel sheets 0.2 apart: the best point sits halfway, 0.1 from each
two = np.vstack([np.column_stack([xy, np.full(200, 0.4)]), np.column_stack([xy, np.full(200, 0.6)])])
e, x_star, _ = cell_error(two, np.tile([0, 0, 1.0], (400, 1)))
print("parallel sheets E* = %.4f (0.1 squared)  z* = %.3f" % (e, x_star[2]))

# quadrics add: the summed quadric evaluates to the summed squared distances
q = quadric_from_points(P, N)
x = rng.random(3)
direct = (((x - P) * N).sum(1) ** 2).sum()
print("additivity      |Q(x) - sum d^2| = %.1e" % abs(q.energy(x) - direct))
print("minimum of the corner quadric:", quadric_minimize(q, P.mean(0)))
