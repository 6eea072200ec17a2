"""End-to-end acceptance checks, one test per criterion.

Every test prints a single ``[criterion N] PASS|FAIL ...`` line (visible
even without ``-s``) before asserting.
"""

import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from conftest import grid_min, random_tree
from octok import shapes
from octok.decoder import decode_latent_tree, grid_from_mesh
from octok.mesh import sample_surface
from octok.octree import (build_adaptive_octree, build_occupancy_octree, deserialize_structure,
                          serialize_structure)
from octok.pipeline import PipelineConfig, codebook_corpus, evaluate_leaves
from octok.quadric import quadric_from_point_plane, quadric_from_points, quadric_minimize, quadric_sum, Quadric
from octok.tokenizer import (Codebook, TokenSequence, fit_codebook, latent_residuals, read_tokens,
                             residual_quantize, tree_latents, write_tokens)

THRESHOLDS = (1e-3, 5e-4, 3e-4, 1e-4)


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'} {detail}")
        return ok
    return emit


@pytest.fixture(scope="module")
def fixtures():
    return {"plane": shapes.square(), "cube": shapes.cube(), "sphere": shapes.icosphere(),
            "torus": shapes.torus(), "cylinder": shapes.cylinder()}


@pytest.fixture(scope="module")
def clouds(fixtures):
    return {k: sample_surface(m, 100_000, seed=0) for k, m in fixtures.items()}


# ---------------------------------------------------------------------------

def test_criterion_1_quadric_suite(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    failures = []
    for s in range(200):
        m = int(rng.integers(3, 13))
        p = rng.random((m, 3))
        n = rng.normal(size=(m, 3))
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        probes = rng.normal(size=(100, 3)) + 0.5
        direct = (((probes[:, None] - p[None]) * n[None]).sum(-1) ** 2)

        q = Quadric.zero()
        for i in range(m):
            q = quadric_sum(q, quadric_from_point_plane(p[i], n[i]))
        if np.abs(q.energy(probes) - direct.sum(1)).max() > 1e-9:
            failures.append((s, "additivity"))

        res = quadric_minimize(q, p.mean(0))
        if np.any(res.e_star > q.energy(probes) + 1e-9):
            failures.append((s, "minimality"))

        R = Rotation.random(random_state=s).as_matrix()
        t = rng.normal(size=3)
        moved = quadric_from_points(p @ R.T + t, n @ R.T)
        if np.abs(moved.energy(probes @ R.T + t) - q.energy(probes)).max() > 1e-9:
            failures.append((s, "rigid"))
        if abs(quadric_minimize(moved, (p @ R.T + t).mean(0)).e_star - res.e_star) > 1e-9:
            failures.append((s, "rigid e*"))

        lo, hi = np.full(3, -0.5), np.full(3, 1.5)
        e_grid, _, h = grid_min(q.energy, lo, hi, n=40)
        lam = np.linalg.eigvalsh(q.A)[-1]
        inside = np.all((res.x_star >= lo) & (res.x_star <= hi))
        if res.e_star > e_grid + 1e-9 or (inside and e_grid - res.e_star > lam * 3 * h * h / 4 + 1e-12):
            failures.append((s, "grid"))

    apex = np.array([0.3, 0.6, 0.2])
    common = {"corner": np.eye(3),
              "edge": np.array([[1, 0, 0], [0, 1, 0], [np.sqrt(0.5), np.sqrt(0.5), 0]]),
              "coplanar": np.array([[0, 0, 1.0]] * 3)}
    worst = 0.0
    for name, normals in common.items():
        P, N = [], []
        for nv in normals:
            basis = np.linalg.svd(nv[None])[2][1:]
            for _ in range(5):
                P.append(apex + rng.normal(size=2) @ basis * 0.1)
                N.append(nv)
        e = quadric_minimize(quadric_from_points(P, N), np.mean(P, axis=0)).e_star
        worst = max(worst, e)
        if e > 1e-10:
            failures.append((name, "common intersection"))
    dt = time.perf_counter() - t0
    ok = report(1, not failures and dt < 30,
                f"200 plane sets, {len(failures)} failures, worst common-intersection E*={worst:.1e}, {dt:.1f}s")
    assert ok, failures[:10]


def test_criterion_2_adaptive_subdivision(report, clouds):
    t0 = time.perf_counter()
    counts = {k: len(build_adaptive_octree(clouds[k], 1e-4, 6)) for k in ("plane", "cube", "sphere")}
    dt = time.perf_counter() - t0
    ok = counts["plane"] == 1 and counts["cube"] == 9 and counts["sphere"] >= 100 and dt < 20
    assert report(2, ok, f"node counts {counts} at T=1e-4, L=6, {dt:.1f}s")


def test_criterion_3_threshold_monotonicity(report, clouds):
    bad = []
    summary = {}
    for name, cloud in clouds.items():
        trees = [build_adaptive_octree(cloud, T, 6) for T in THRESHOLDS]
        sizes = [len(t) for t in trees]
        summary[name] = sizes
        if sizes != sorted(sizes):
            bad.append((name, "count"))
        keys = [t.node_keys() for t in trees]
        for a, b in zip(keys, keys[1:]):
            if not a <= b:
                bad.append((name, "nesting"))
    assert report(3, not bad, f"node counts over T={THRESHOLDS}: {summary}"), bad


def test_criterion_4_ablation(report, clouds):
    t0 = time.perf_counter()
    ratios = {}
    ok = True
    for name, cloud in clouds.items():
        full = len(build_occupancy_octree(cloud, 6))
        adaptive = [len(build_adaptive_octree(cloud, T, 6)) for T in THRESHOLDS]
        ok &= max(adaptive) <= full
        ratios[name] = round(max(adaptive) / full, 5)
    dt = time.perf_counter() - t0
    ok = ok and ratios["cube"] <= 0.05 and dt < 60
    assert report(4, ok, f"max adaptive/occupancy node ratio {ratios}, {dt:.1f}s")


def test_criterion_5_round_trips(report, tmp_path):
    rng = np.random.default_rng(5)
    tree_fail = 0
    for _ in range(1000):
        L = int(rng.integers(1, 7))
        data = bytes(r[0] for r in random_tree(rng, L, float(rng.uniform(0.2, 0.6))))
        t = deserialize_structure(data, L)
        if serialize_structure(t) != data or not t.structure_equal(deserialize_structure(serialize_structure(t), L)):
            tree_fail += 1
    seq_fail = 0
    path = tmp_path / "seq.oat"
    for _ in range(100):
        L = int(rng.integers(1, 6))
        chi = np.frombuffer(bytes(r[0] for r in random_tree(rng, L, 0.5)), np.uint8)
        seq = TokenSequence(rng.integers(0, 65536, len(chi)), chi, L, float(rng.choice(THRESHOLDS)),
                            int(rng.integers(0, 2**63)))
        write_tokens(seq, path, max_tokens=None)
        blob = path.read_bytes()
        back = read_tokens(path)
        write_tokens(back, path, max_tokens=None)
        if back != seq or path.read_bytes() != blob:
            seq_fail += 1
    example = serialize_structure(deserialize_structure(bytes([0x48, 0, 0]), 6))[0]
    ok = tree_fail == 0 and seq_fail == 0 and example == 0x48
    assert report(5, ok, f"tree failures {tree_fail}/1000, token failures {seq_fail}/100, "
                         f"slots 2+5 -> {example:#04x}")


def test_criterion_6_alg1_fidelity(report, clouds):
    rng = np.random.default_rng(6)
    mismatches = 0
    for k in range(100):
        L = int(rng.integers(1, 5))
        tree = deserialize_structure(bytes(r[0] for r in random_tree(rng, L, 0.7)), L)
        phi = rng.normal(size=(len(tree), 8))
        cb = Codebook(rng.normal(size=(int(rng.integers(1, 17)), 8)))
        codes = residual_quantize(tree, phi, cb)
        acc = np.zeros_like(phi)
        for i in range(len(tree)):
            base = acc[tree.parent[i]] if i else 0.0
            d = (((phi[i] - base) - cb.entries) ** 2).sum(1)
            mismatches += int(codes.q[i] != np.argmin(d))
            acc[i] = base + cb.entries[np.argmin(d)]
    worst = 0.0
    for name in ("sphere", "torus", "cylinder"):
        tree = build_adaptive_octree(clouds[name], 1e-4, 6)
        phi = tree_latents(tree, clouds[name])
        oracle = Codebook(np.unique(latent_residuals(tree, phi), axis=0))
        worst = max(worst, float(np.abs(residual_quantize(tree, phi, oracle).phi_hat - phi).max()))
    ok = mismatches == 0 and worst <= 1e-9
    assert report(6, ok, f"{mismatches} q mismatches over 100 triples, oracle-codebook max error {worst:.1e}")


@pytest.fixture(scope="module")
def e2e_config():
    return PipelineConfig(threshold=5e-4, max_depth=6, surface_points=100_000, codebook_size=512,
                          grid=64, iou_grid=64)


def test_criterion_7_end_to_end(report, fixtures, clouds, e2e_config):
    t0 = time.perf_counter()
    cfg = e2e_config
    names = ("cube", "sphere", "torus")
    meshes = [fixtures[k] for k in names]
    # 512 distinct residuals need several sampling seeds and thresholds
    corpus = codebook_corpus(meshes, cfg, seeds=range(8), thresholds=THRESHOLDS, normalize=False)
    cb = fit_codebook(corpus, cfg.codebook_size, seed=0)
    rows, ok = [], True
    for name in names:
        mesh, cloud = fixtures[name], clouds[name]
        tree = build_adaptive_octree(cloud, cfg.threshold, cfg.max_depth)
        phi = tree_latents(tree, cloud)
        gt = grid_from_mesh(mesh, cfg.iou_grid)
        iou_raw, cd_raw, _ = evaluate_leaves(mesh, decode_latent_tree(tree, phi), cfg, gt_grid=gt)
        codes = residual_quantize(tree, phi, cb)
        iou_q, cd_q, _ = evaluate_leaves(mesh, decode_latent_tree(tree, codes.phi_hat), cfg, gt_grid=gt)
        good = iou_raw >= 0.90 and cd_raw <= 5e-3 and iou_raw - iou_q <= 0.05
        ok &= good
        rows.append(f"{name}: IoU {iou_raw:.4f} (quantized {iou_q:.4f}), CD x1e3 {1e3 * cd_raw:.3f} "
                    f"(quantized {1e3 * cd_q:.3f}), {len(tree)} tokens")
    dt = time.perf_counter() - t0
    ok = ok and dt < 300
    assert report(7, ok, "; ".join(rows) + f"; {dt:.1f}s")


def test_criterion_8_quality_vs_budget(report, fixtures, clouds, e2e_config):
    t0 = time.perf_counter()
    mesh, cloud = fixtures["sphere"], clouds["sphere"]
    gt = grid_from_mesh(mesh, e2e_config.iou_grid)
    points = []
    for T in THRESHOLDS:
        tree = build_adaptive_octree(cloud, T, 6)
        _, cd, _ = evaluate_leaves(mesh, decode_latent_tree(tree, tree_latents(tree, cloud)),
                                   e2e_config, gt_grid=gt)
        points.append((len(tree), cd))
    points.sort(key=lambda x: x[0])
    inversions = [(a, b) for a, b in zip(points, points[1:]) if b[1] > a[1]]
    ok = (len(inversions) == 0 or (len(inversions) == 1 and inversions[0][1][1] <= 1.05 * inversions[0][0][1]))
    dt = time.perf_counter() - t0
    ok = ok and dt < 300
    trend = ", ".join(f"{n} tokens -> CD x1e3 {1e3 * c:.3f}" for n, c in points)
    assert report(8, ok, f"{trend}; {len(inversions)} inversions; {dt:.1f}s")
