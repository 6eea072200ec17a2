"""
Command line round trip
=======================

The same pipeline through the ``octok`` command: fit a codebook, tokenize,
inspect, reconstruct and sweep thresholds.
"""

import os
import tempfile

from octok import shapes
from octok.cli import main
from octok.mesh import write_obj

work = tempfile.mkdtemp()
for name, mesh in [("cube", shapes.cube()), ("sphere", shapes.icosphere()), ("torus", shapes.torus())]:
    write_obj(mesh, os.path.join(work, name + ".obj"))
obj = lambda n: os.path.join(work, n + ".obj")
cb = os.path.join(work, "codebook.oatc")

main(["fit-codebook", obj("cube"), obj("sphere"), obj("torus"), "--seeds", "8",
      "--thresholds", "1e-3,5e-4,3e-4,1e-4", "--out", cb])
main(["tokenize", obj("sphere"), "--codebook", cb, "--out", os.path.join(work, "sphere.oat")])
main(["stats", os.path.join(work, "sphere.oat")])
main(["reconstruct", os.path.join(work, "sphere.oat"), "--codebook", cb, "--out", os.path.join(work, "sphere_rec.obj")])
main(["sweep", obj("sphere"), obj("torus"), "--grid", "64", "--codebook", cb])
