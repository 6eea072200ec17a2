"""Command-line entry point: ``octok <subcommand> ...``.

Exit codes: 0 success, 2 usage or bad input, 3 codebook/token mismatch,
4 empty result, 5 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields

import numpy as np

from . import decoder, metrics, octree, tokenizer
from .errors import (CompatibilityError, DecodeError, EmptyInputError, EmptySurfaceError,
                     FormatError, OctokError, PreconditionError, TrainingError)
from .mesh import load_mesh, normalize_mesh, write_obj
from .pipeline import (PipelineConfig, Timer, build_tree, codebook_corpus, encode_mesh,
                       evaluate_leaves, surface_cloud)

EXIT_OK, EXIT_USAGE, EXIT_COMPAT, EXIT_EMPTY, EXIT_INTERNAL = 0, 2, 3, 4, 5
SWEEP_COLUMNS = ["mesh", "T", "token_count", "iou", "chamfer_x1e3", "runtime_ms", "error"]

# flag name -> PipelineConfig field
_FLAGS = {
    "threshold": ("threshold", float),
    "max_depth": ("max_depth", int),
    "points": ("surface_points", int),
    "codebook_size": ("codebook_size", int),
    "grid": ("grid", int),
    "iou_grid": ("iou_grid", int),
    "max_tokens": ("max_tokens", int),
    "seed": ("seed", int),
}


class StageError(Exception):
    def __init__(self, stage, exc):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage
        self.exc = exc


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, tp, exc, tb):
        if exc is not None and not isinstance(exc, StageError) and isinstance(exc, Exception):
            raise StageError(self.name, exc) from exc
        return False


def read_config_file(path):
    """``key = value`` lines; ``#`` starts a comment."""
    types = {f.name: f.type for f in fields(PipelineConfig)}
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            key = _FLAGS.get(key, (key,))[0]
            if key not in types:
                raise FormatError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = float(value) if types[key] in (float, "float") else int(float(value))
    return out


def resolve_config(args):
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for flag, (name, _) in _FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = v
    return PipelineConfig(**values)


def _require_file(path):
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such file: {path}")
    return path


def _emit(obj):
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=False) + "\n")


# --------------------------------------------------------------------------
# subcommands

def cmd_tokenize(args):
    cfg = resolve_config(args)
    timer = Timer()
    with _Stage("load"):
        codebook = tokenizer.read_codebook(_require_file(args.codebook))
        mesh = load_mesh(_require_file(args.mesh))
    with _Stage("encode"):
        enc = encode_mesh(mesh, cfg, codebook, timer=timer)
    out = args.out or os.path.splitext(args.mesh)[0] + ".oat"
    with _Stage("write"):
        tokenizer.write_tokens(enc.tokens, out, cfg.max_tokens)
    report = metrics.token_stats(enc.tokens)
    report.runtime_ms = {k: round(v, 3) for k, v in timer.items()}
    report.config = cfg.as_dict()
    _emit(report.to_dict())
    return EXIT_OK


def cmd_reconstruct(args):
    cfg = resolve_config(args)
    with _Stage("load"):
        codebook = tokenizer.read_codebook(_require_file(args.codebook))
        tokens = tokenizer.read_tokens(_require_file(args.tokens))
    with _Stage("decode"):
        leaves = decoder.decode_leaves(tokens, codebook)
        grid = decoder.occupancy_grid(leaves, cfg.grid)
    with _Stage("extract"):
        mesh = decoder.extract_mesh(grid)
    out = args.out or os.path.splitext(args.tokens)[0] + ".obj"
    with _Stage("write"):
        write_obj(mesh, out)
    _emit({"out": out, "vertices": len(mesh.vertices), "faces": len(mesh.faces), "grid": cfg.grid,
           "config": cfg.as_dict()})
    return EXIT_OK


def cmd_fit_codebook(args):
    cfg = resolve_config(args)
    with _Stage("load"):
        meshes = [load_mesh(_require_file(p)) for p in args.meshes]
    with _Stage("latents"):
        corpus = codebook_corpus(meshes, cfg, seeds=range(cfg.seed, cfg.seed + args.seeds),
                                 thresholds=args.thresholds or None)
    with _Stage("fit"):
        cb = tokenizer.fit_codebook(corpus, cfg.codebook_size, cfg.codebook_iters, cfg.seed)
    out = args.out or "codebook.oatc"
    with _Stage("write"):
        tokenizer.write_codebook(cb, out)
    _emit({"out": out, "K": cb.K, "hash": f"{cb.hash:#018x}", "iterations": cb.iterations,
           "residuals": int(sum(len(t) for t, _ in corpus)), "config": cfg.as_dict()})
    return EXIT_OK


def cmd_stats(args):
    with _Stage("load"):
        tokens = tokenizer.read_tokens(_require_file(args.tokens))
    _emit(metrics.token_stats(tokens).to_dict())
    return EXIT_OK


def _evaluate(mesh, cfg, codebook, threshold=None, cloud=None, gt_grid=None):
    timer = Timer()
    T = cfg.threshold if threshold is None else threshold
    with timer.stage("octree"):
        tree = build_tree(cloud, cfg, T)
    with timer.stage("latents"):
        phi = tokenizer.tree_latents(tree, cloud)
    if codebook is not None:
        with timer.stage("quantize"):
            codes = tokenizer.residual_quantize(tree, phi, codebook)
            tree, codes = tokenizer.trim_tokens(tree, codes, cfg.max_tokens)
            phi = codes.phi_hat
    leaves = decoder.decode_latent_tree(tree, phi)
    score, cd, _ = evaluate_leaves(mesh, leaves, cfg, gt_grid=gt_grid, timer=timer, strict=False)
    leaf_count = int(np.count_nonzero(tree.child_mask == 0))
    return metrics.EvalReport(
        token_count=len(tree), nodes_per_depth=tree.nodes_per_depth(), threshold=float(T),
        max_depth=cfg.max_depth, iou=float(score), chamfer=None if cd is None else float(cd),
        leaf_count=leaf_count,
        internal_count=len(tree) - leaf_count, runtime_ms={k: round(v, 3) for k, v in timer.items()})


def cmd_eval(args):
    cfg = resolve_config(args)
    with _Stage("load"):
        codebook = tokenizer.read_codebook(_require_file(args.codebook)) if args.codebook else None
        mesh = load_mesh(_require_file(args.mesh))
    with _Stage("sample"):
        mesh, cloud = surface_cloud(mesh, cfg)
    with _Stage("evaluate"):
        report = _evaluate(mesh, cfg, codebook, cloud=cloud)
    report.config = cfg.as_dict()
    _emit(report.to_dict())
    return EXIT_OK


def _sweep_one(path, thresholds, cfg, codebook):
    rows = []
    try:
        mesh, cloud = surface_cloud(load_mesh(path), cfg)
        gt = decoder.grid_from_mesh(mesh, cfg.iou_grid)
    except Exception as exc:  # recorded per mesh; the sweep continues
        return [[path, T, "", "", "", "", f"{type(exc).__name__}: {exc}"] for T in thresholds]
    for T in thresholds:
        t0 = time.perf_counter()
        try:
            r = _evaluate(mesh, cfg, codebook, T, cloud, gt)
            cd = "" if r.chamfer is None else f"{r.chamfer_x1e3:.6f}"
            err = "EmptySurfaceError: reconstructed surface is empty" if r.chamfer is None else ""
            rows.append([path, T, r.token_count, f"{r.iou:.6f}", cd,
                         f"{1e3 * (time.perf_counter() - t0):.1f}", err])
        except Exception as exc:
            rows.append([path, T, "", "", "", f"{1e3 * (time.perf_counter() - t0):.1f}",
                         f"{type(exc).__name__}: {exc}"])
    return rows


def cmd_sweep(args):
    cfg = resolve_config(args)
    thresholds = sorted(set(args.thresholds), reverse=True)
    if len(thresholds) < 2:
        raise PreconditionError("sweep needs at least two distinct thresholds")
    with _Stage("load"):
        codebook = tokenizer.read_codebook(_require_file(args.codebook)) if args.codebook else None
    workers = max(1, int(os.environ.get("OAT_THREADS", os.cpu_count() or 1)))
    with ThreadPoolExecutor(max_workers=min(workers, len(args.meshes))) as pool:
        results = list(pool.map(lambda p: _sweep_one(p, thresholds, cfg, codebook), args.meshes))
    out = args.out
    fh = open(out, "a", newline="") if out else sys.stdout
    try:
        writer = csv.writer(fh)
        if not out or fh.tell() == 0:
            writer.writerow(SWEEP_COLUMNS)
        for rows in results:
            writer.writerows(rows)
    finally:
        if out:
            fh.close()
    return EXIT_OK


# --------------------------------------------------------------------------

def _thresholds(text):
    return [float(t) for t in text.replace(",", " ").split()]


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threshold", type=float, help="quadric error threshold T")
    common.add_argument("--max-depth", type=int, help="octree max depth L")
    common.add_argument("--points", type=int, help="surface sample count")
    common.add_argument("--codebook-size", type=int, help="codebook entries K")
    common.add_argument("--grid", type=int, help="marching cubes resolution")
    common.add_argument("--iou-grid", type=int, help="IoU grid resolution")
    common.add_argument("--max-tokens", type=int, help="token cap")
    common.add_argument("--seed", type=int)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--out", help="output path")

    p = argparse.ArgumentParser(prog="octok", description="Adaptive octree shape tokenizer")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("tokenize", parents=[common], help="mesh -> token file")
    s.add_argument("mesh")
    s.add_argument("--codebook", required=True)
    s.set_defaults(func=cmd_tokenize)

    s = sub.add_parser("reconstruct", parents=[common], help="token file -> OBJ mesh")
    s.add_argument("tokens")
    s.add_argument("--codebook", required=True)
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("sweep", parents=[common], help="token count / IoU / CD over thresholds")
    s.add_argument("meshes", nargs="+")
    s.add_argument("--thresholds", type=_thresholds, default=[1e-3, 5e-4, 3e-4, 1e-4])
    s.add_argument("--codebook")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("fit-codebook", parents=[common], help="fit a residual codebook")
    s.add_argument("meshes", nargs="+")
    s.add_argument("--seeds", type=int, default=1, help="sampling seeds per mesh")
    s.add_argument("--thresholds", type=_thresholds, default=None)
    s.set_defaults(func=cmd_fit_codebook)

    s = sub.add_parser("stats", help="token statistics")
    s.add_argument("tokens")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("eval", parents=[common], help="IoU and Chamfer of a mesh round trip")
    s.add_argument("mesh")
    s.add_argument("--codebook")
    s.set_defaults(func=cmd_eval)
    return p


def _exit_code(exc):
    if isinstance(exc, CompatibilityError):
        return EXIT_COMPAT
    if isinstance(exc, (EmptySurfaceError, DecodeError)):
        return EXIT_EMPTY
    if isinstance(exc, (FileNotFoundError, FormatError, EmptyInputError, PreconditionError,
                        TrainingError, OctokError)):
        return EXIT_USAGE
    return EXIT_INTERNAL


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StageError as err:
        code = _exit_code(err.exc)
        label = "empty surface: " if code == EXIT_EMPTY else ""
        print(f"octok {args.command}: error in stage {err.stage}: {label}{err.exc}", file=sys.stderr)
        return code
    except Exception as exc:
        print(f"octok {args.command}: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
