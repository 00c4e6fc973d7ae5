"""Acceptance checks; each test reports one PASS/FAIL line with the measured value."""

import json
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from vlgseg import cli, geometry, gradcheck, synth, tensorio
from vlgseg.adapter import AdapterParams, adapter_forward
from vlgseg.fusion import fuse
from vlgseg.geometry import CameraPose
from vlgseg.labeling import label_scene
from vlgseg.losses import soft_guidance_loss
from vlgseg.scene import IGNORE, TextEmbeddingBank

DATA = Path(__file__).parent / "data"
E2E_SEEDS = [1, 2, 3, 4, 5]
E2E_TOL = 0.01
E2E_MIN_MIOU = 0.95
E2E_BUDGET_S = 600.0


@pytest.fixture
def report(request):
    tr = request.config.pluginmanager.getplugin("terminalreporter")

    def emit(n, ok, text):
        line = f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} - {text}"
        if tr is not None:
            tr.write_line("")
            tr.write_line(line)
        else:
            print(line)
        return ok

    return emit


# 1 ---------------------------------------------------------------------------


def test_1_format_roundtrip(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    failures = 0
    for _ in range(1000):
        dtype = ("f32", "i32")[int(rng.integers(2))]
        shape = [int(s) for s in rng.integers(0, 6, size=int(rng.integers(1, 5)))]
        raw = rng.bytes(4 * int(np.prod(shape)))
        t = tensorio.decode_tensor(tensorio.encode_tensor(dtype, shape, raw))
        failures += not (t.dtype == dtype and list(t.shape) == shape and t.data == raw)
    golden = (DATA / "golden_f32_2x2.tnsr").read_bytes() == tensorio.encode_tensor("f32", [2, 2], [1, 2, 3, 4])
    golden &= (DATA / "golden_i32_3.tnsr").read_bytes() == tensorio.encode_tensor("i32", [3], [-1, 0, 255])
    dt = time.perf_counter() - t0
    ok = failures == 0 and golden and dt < 10
    report(1, ok, f"1000 fuzzed tensors, {failures} mismatches, golden stable={golden}, {dt:.1f}s (<10s)")
    assert ok


# 2 ---------------------------------------------------------------------------


def _fuzz_scene(i):
    rng = np.random.default_rng(1000 + i)
    spec = synth.default_suite(
        seed=100 + i, num_train=1, num_test=0, num_points=2000, sigma=0.0,
        num_cameras=int(rng.integers(3, 7)), hfov_deg=float(rng.uniform(55, 85)),
        ring_fraction=float(rng.uniform(0.5, 0.85)), camera_height=float(rng.uniform(1.9, 2.3)),
        objects_per_scene=[2, 6],
    )
    return synth.build(spec).train[0]


def test_2_geometry(report):
    t0 = time.perf_counter()
    cam = CameraPose(np.array([[100.0, 0, 50], [0, 100.0, 50], [0, 0, 1]]), np.eye(4), 200, 200)
    p = geometry.project_point((0.5, 0.5, 1.0), cam)
    unit = (p.u, p.v, p.depth, p.visible) == (100.0, 100.0, 1.0, True)
    unit &= not geometry.project_point((0, 0, -1), cam).visible
    unit &= geometry.project_point((0, 0, 1), CameraPose(np.eye(3), np.eye(4), 4, 4)).u == 0.0

    # rigid invariance on 10k fuzzed points
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(10):
        eye = rng.normal(size=3)
        eye *= 4.0 / np.linalg.norm(eye)
        c = CameraPose(np.array([[80.0, 0, 63.5], [0, 80.0, 63.5], [0, 0, 1]]),
                       geometry.look_at(eye, rng.uniform(-0.5, 0.5, 3)), 128, 128)
        pts = rng.uniform(-1, 1, size=(1000, 3))
        G = np.eye(4)
        G[:3, :3] = Rotation.random(random_state=int(rng.integers(2**31))).as_matrix()
        G[:3, 3] = rng.normal(scale=10, size=3)
        c2 = CameraPose(c.intrinsics, c.world_to_camera @ geometry.invert_rigid(G), 128, 128)
        u0, v0, _, _ = geometry.project_points(pts, c)
        u1, v1, _, _ = geometry.project_points(pts @ G[:3, :3].T + G[:3, 3], c2)
        worst = max(worst, np.abs(u1 - u0).max(), np.abs(v1 - v0).max())

    # pipeline visibility vs exact ray oracle, 10 fuzzed scenes
    agree = total = 0
    for i in range(10):
        s = _fuzz_scene(i)
        names = list(s.scene.class_names)
        for view in s.scene.views:
            hc = synth.rescaled_camera(view.camera, 8192)
            depth = synth.point_depth_map(s.layout, hc, s.scene.cloud.xyz, names.index("wall"), names.index("floor"))
            got = geometry.passing_mask(s.scene.cloud.xyz, hc, depth, 0.005)[0]
            ref = synth.oracle_visibility_many(s.layout, s.scene.cloud.xyz, hc)
            agree += int((got == ref).sum())
            total += len(ref)
    rate = agree / total
    dt = time.perf_counter() - t0
    ok = unit and worst <= 1e-5 and rate >= 0.999 and dt < 30
    report(2, ok, f"unit cases exact={unit}, rigid max dev {worst:.1e}px (<=1e-5), "
                  f"oracle agreement {100 * rate:.3f}% over {total} pairs (>=99.9%), {dt:.1f}s (<30s)")
    assert ok


# 3 ---------------------------------------------------------------------------


def test_3_fusion(report):
    from test_fusion import brute_force_fuse

    t0 = time.perf_counter()
    worst_rel = worst_order = 0.0
    same_valid = True
    for seed in (7, 8):
        spec = synth.default_suite(seed=seed, num_points=500, num_train=1, num_test=0, image_size=32)
        s = synth.build(spec).train[0].scene
        f = fuse(s.cloud, s.views)
        ref, valid = brute_force_fuse(s.cloud.xyz, s.views, geometry.DEFAULT_TAU)
        same_valid &= np.array_equal(valid, f.valid)
        worst_rel = max(worst_rel, np.abs(f.embeddings - ref).max() / np.abs(ref).max())
        g = fuse(s.cloud, s.views[::-1])
        worst_order = max(worst_order, np.abs(g.embeddings - f.embeddings).max() / np.abs(f.embeddings).max())
    dt = time.perf_counter() - t0
    ok = same_valid and worst_rel <= 1e-6 and worst_order <= 1e-6 and dt < 30
    report(3, ok, f"oracle rel err {worst_rel:.1e} (<=1e-6), view-order rel diff {worst_order:.1e} (<=1e-6), "
                  f"{dt:.1f}s (<30s)")
    assert ok


# 4 ---------------------------------------------------------------------------


def test_4_labeling(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    from vlgseg.fusion import FusedEmbeddings

    violations = 0
    for _ in range(10):
        K, d, n = int(rng.integers(2, 24)), int(rng.integers(2, 32)), 10_000
        bank = TextEmbeddingBank(tuple(map(str, range(K))), rng.normal(size=(K, d)))
        mask = rng.uniform(size=K) < 0.5
        mask[rng.integers(K)] = True
        f = FusedEmbeddings(rng.normal(size=(n, d)).astype(np.float32), np.ones(n, bool), np.ones(n, np.int64))
        violations += int((~mask[label_scene(f, bank, mask).labels]).sum())

    scale_ok = True
    for _ in range(20):
        K, d = int(rng.integers(2, 16)), int(rng.integers(2, 16))
        rows = rng.normal(size=(K, d))
        f = FusedEmbeddings(rng.normal(size=(2000, d)).astype(np.float32), np.ones(2000, bool), np.ones(2000, np.int64))
        a = label_scene(f, TextEmbeddingBank(tuple(map(str, range(K))), rows), None).labels
        b = label_scene(f, TextEmbeddingBank(tuple(map(str, range(K))), rows * rng.uniform(1e-3, 1e3, (K, 1))),
                        None).labels
        scale_ok &= np.array_equal(a, b)

    monotone = 0
    for seed in E2E_SEEDS:
        suite = synth.build(synth.default_suite(seed=seed, num_test=0))
        acc = {}
        for masked in (False, True):
            hits = count = 0
            for s in suite.train:
                sc = s.scene
                pl = label_scene(fuse(sc.cloud, sc.views), suite.bank, sc.scene_mask() if masked else None).labels
                k = pl != IGNORE
                hits += int((pl[k] == sc.cloud.gt[k]).sum())
                count += int(k.sum())
            acc[masked] = hits / count
        monotone += acc[True] >= acc[False]
    dt = time.perf_counter() - t0
    ok = violations == 0 and scale_ok and monotone == 5 and dt < 60
    report(4, ok, f"mask violations {violations}/100000, scaling invariance exact={scale_ok}, "
                  f"masking monotone {monotone}/5 seeds, {dt:.1f}s (<60s)")
    assert ok


# 5 ---------------------------------------------------------------------------


def test_5_gradients(report):
    t0 = time.perf_counter()
    results = gradcheck.run_suite()
    worst = max(r["max_rel_error"] for r in results)
    dt = time.perf_counter() - t0
    ok = worst < 1e-4 and dt < 60
    report(5, ok, f"{len(results)} gradcheck cases, worst rel err {worst:.1e} (<1e-4), {dt:.1f}s (<60s)")
    assert ok


# 6 ---------------------------------------------------------------------------


def test_6_adapter_and_loss_contracts(report):
    rng = np.random.default_rng(6)
    identity = True
    for d in (4, 16, 64):
        x = rng.normal(size=(200, d))
        identity &= np.array_equal(adapter_forward(x, AdapterParams.init(d, 2 * d, alpha=0.0, seed=d)), x)
    lo, hi, worst_scaled = np.inf, -np.inf, 0.0
    for _ in range(500):
        n, d = int(rng.integers(1, 50)), int(rng.integers(1, 32))
        f = rng.normal(size=(n, d)) * rng.uniform(1e-3, 1e3)
        loss, _ = soft_guidance_loss(f, rng.normal(size=(n, d)))
        lo, hi = min(lo, loss), max(hi, loss)
        worst_scaled = max(worst_scaled, soft_guidance_loss(f, f * rng.uniform(1e-3, 1e3))[0])
    ok = identity and lo >= 0.0 and hi <= 2.0 and worst_scaled <= 1e-6
    report(6, ok, f"alpha=0 identity exact={identity}, L_s range [{lo:.3f}, {hi:.3f}] within [0,2], "
                  f"scaled-pair L_s max {worst_scaled:.1e} (<=1e-6)")
    assert ok


# 7, 8 -------------------------------------------------------------------------


@pytest.fixture(scope="module")
def benchmark_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("e2e")
    t0 = time.perf_counter()
    code = cli.main(["ablate", "--synth", "--preset", "benchmark", "--seeds", ",".join(map(str, E2E_SEEDS)),
                     "--output-dir", str(out)])
    return code, out, time.perf_counter() - t0


def test_7_end_to_end(report, benchmark_run):
    code, out, dt = benchmark_run
    assert code == 0
    table = json.loads((out / "ablate" / "table.json").read_text())
    fixtures = json.loads((DATA / "e2e_fixtures.json").read_text())["miou"]
    miou = {s: {r: table["rows"][r]["miou"][str(s)] for r in "abcd"} for s in E2E_SEEDS}
    d_ok = all(miou[s]["d"] >= E2E_MIN_MIOU for s in E2E_SEEDS)
    order_ok = all(miou[s]["d"] >= miou[s]["b"] and miou[s]["c"] >= miou[s]["a"] for s in E2E_SEEDS)
    drift = max(abs(miou[s][r] - fixtures[str(s)][r]) for s in E2E_SEEDS for r in "abcd")
    ok = d_ok and order_ok and drift <= E2E_TOL and dt < E2E_BUDGET_S
    ds = ", ".join(f"{miou[s]['d']:.3f}" for s in E2E_SEEDS)
    report(7, ok, f"mode (d) mIoU per seed [{ds}] (>={E2E_MIN_MIOU}), d>=b and c>=a on all seeds={order_ok}, "
                  f"max fixture drift {drift:.4f} (<={E2E_TOL}), {dt:.0f}s (<{E2E_BUDGET_S:.0f}s)")
    assert ok


def _tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_8_determinism(report, benchmark_run, tmp_path):
    _, first, _ = benchmark_run
    code = cli.main(["ablate", "--synth", "--preset", "benchmark", "--seeds", "1", "--output-dir", str(tmp_path / "r")])
    assert code == 0
    a, b = _tree(first / "ablate" / "seed1"), _tree(tmp_path / "r" / "ablate" / "seed1")
    ckpt_same = a == b and any(k.endswith(".tnsr") for k in a)
    # whole-tree rerun including table and manifest
    small = ["ablate", "--synth", "--preset", "benchmark", "--seeds", "2", "--rows", "c,d",
             "--distill.iters", "20", "--adapter.epochs", "10"]
    trees = []
    for _ in range(2):
        d = tmp_path / "same"
        assert cli.main([*small, "--output-dir", str(d)]) == 0
        trees.append(_tree(d))
    full_same = trees[0] == trees[1]
    ok = ckpt_same and full_same
    report(8, ok, f"seed-1 checkpoints+metrics byte-identical across runs={ckpt_same} ({len(a)} files), "
                  f"full ablate tree incl. reports and manifest identical={full_same}")
    assert ok
