"""
Residual quantization and tokens
================================

Each leaf gets an 8-number latent (local plane point, mean normal, error,
point share); internal nodes average their children. Level by level each
node stores the codebook index of its residual against the parent's
accumulated latent, and the token is that index with the child mask.
"""

import os
import tempfile

import numpy as np

from octok import shapes
from octok.mesh import sample_surface
from octok.octree import build_adaptive_octree
from octok.pipeline import PipelineConfig, codebook_corpus
from octok.tokenizer import (encode_tokens, fit_codebook, read_tokens, residual_quantize, tree_latents,
                             write_tokens)

cfg = PipelineConfig()
meshes = [shapes.cube(), shapes.icosphere(), shapes.torus()]
corpus = codebook_corpus(meshes, cfg, seeds=range(8), thresholds=(1e-3, 5e-4, 3e-4, 1e-4), normalize=False)
codebook = fit_codebook(corpus, 512, seed=0)
print("codebook: K=%d, %d k-means iterations, hash %#018x" % (codebook.K, codebook.iterations, codebook.hash))

cloud = sample_surface(shapes.icosphere(), 100_000, seed=0)
tree = build_adaptive_octree(cloud, 5e-4, 6)
phi = tree_latents(tree, cloud)
codes = residual_quantize(tree, phi, codebook)
err = np.linalg.norm(phi - codes.phi_hat, axis=1)
for d in range(int(tree.depth.max()) + 1):
    sel = tree.depth == d
    print("depth %d: %3d nodes, mean latent error %.4f" % (d, sel.sum(), err[sel].mean()))

tokens = encode_tokens(tree, codes, codebook, 5e-4)
print("first tokens (q, chi):", list(tokens)[:6])
print("positional indices of the first tokens:\n", tokens.pe[:6])

path = os.path.join(tempfile.mkdtemp(), "sphere.oat")
write_tokens(tokens, path)
print("%d tokens -> %d bytes, round trip equal: %s" % (len(tokens), os.path.getsize(path), read_tokens(path) == tokens))
