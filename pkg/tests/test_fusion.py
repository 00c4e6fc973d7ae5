import math

import numpy as np
import pytest

from vlgseg import synth
from vlgseg.fusion import fuse, fuse_stats
from vlgseg.geometry import CameraPose
from vlgseg.scene import PointCloud, View


def brute_force_fuse(xyz, views, tau):
    """Point-by-point, view-by-view reference written with scalar arithmetic only."""
    n, d = len(xyz), views[0].embedding.shape[2]
    out = np.zeros((n, d))
    valid = np.zeros(n, dtype=bool)
    for i in range(n):
        total, count = [0.0] * d, 0
        for vw in views:
            E, K = vw.camera.world_to_camera, vw.camera.intrinsics
            pc = [sum(E[r][c] * xyz[i][c] for c in range(3)) + E[r][3] for r in range(3)]
            if pc[2] <= 0:
                continue
            u = K[0][0] * pc[0] / pc[2] + K[0][2]
            v = K[1][1] * pc[1] / pc[2] + K[1][2]
            if not (0 <= u < vw.camera.width - 0.5 and 0 <= v < vw.camera.height - 0.5):
                continue
            col, row = math.floor(u + 0.5), math.floor(v + 0.5)
            if vw.depth is not None:
                D = vw.depth[row][col]
                if not (D > 0 and abs(pc[2] - D) <= tau):
                    continue
            for k in range(d):
                total[k] += float(vw.embedding[row][col][k])
            count += 1
        if count:
            valid[i] = True
            out[i] = [t / count for t in total]
    return out, valid


@pytest.fixture(scope="module")
def small_scene():
    spec = synth.default_suite(seed=7, num_points=400, num_train=1, num_test=0, image_size=32, dim=16)
    return synth.build(spec).train[0].scene


def test_matches_brute_force_oracle(small_scene):
    s = small_scene
    got = fuse(s.cloud, s.views, tau=0.05)
    ref, valid = brute_force_fuse(s.cloud.xyz, s.views, 0.05)
    np.testing.assert_array_equal(got.valid, valid)
    assert got.valid.mean() > 0.5
    rel = np.abs(got.embeddings - ref).max() / np.abs(ref).max()
    assert rel <= 1e-6
    assert not got.embeddings[~got.valid].any()


def test_view_order_invariance(small_scene):
    s = small_scene
    a = fuse(s.cloud, s.views)
    b = fuse(s.cloud, s.views[::-1])
    np.testing.assert_array_equal(a.valid, b.valid)
    np.testing.assert_allclose(a.embeddings, b.embeddings, rtol=1e-6, atol=1e-7)


def test_point_permutation_equivariance(small_scene):
    s = small_scene
    perm = np.random.default_rng(0).permutation(len(s.cloud))
    a = fuse(s.cloud, s.views)
    b = fuse(PointCloud(s.cloud.xyz[perm], s.cloud.rgb[perm]), s.views)
    np.testing.assert_array_equal(a.embeddings[perm], b.embeddings)


def test_duplicate_view_leaves_mean_unchanged(small_scene):
    s = small_scene
    a = fuse(s.cloud, s.views)
    b = fuse(s.cloud, s.views + s.views[:1])
    np.testing.assert_allclose(a.embeddings[b.view_counts == a.view_counts],
                               b.embeddings[b.view_counts == a.view_counts], atol=0)
    assert (b.view_counts - a.view_counts).max() == 1


def _one_view(values, depth=None):
    K = np.array([[1.0, 0, 0.5], [0, 1.0, 0.5], [0, 0, 1]])
    emb = np.asarray(values, dtype=np.float32).reshape(2, 2, -1)
    return View(embedding=emb, camera=CameraPose(K, np.eye(4), 2, 2), depth=depth)


def test_mean_of_two_views_and_uncovered_point():
    v1 = _one_view([[1, 0]] * 4)
    v2 = _one_view([[0, 3]] * 4)
    cloud = PointCloud(np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]]), np.zeros((2, 3)))
    f = fuse(cloud, [v1, v2])
    np.testing.assert_allclose(f.embeddings[0], [0.5, 1.5])
    assert f.valid.tolist() == [True, False]
    assert f.embeddings.dtype == np.float32
    assert not f.embeddings[1].any()


def test_occluded_view_is_skipped():
    far = _one_view([[9, 9]] * 4, depth=np.full((2, 2), 0.5))  # surface in front of the point
    near = _one_view([[1, 1]] * 4, depth=np.full((2, 2), 1.0))
    cloud = PointCloud(np.array([[0.0, 0.0, 1.0]]), np.zeros((1, 3)))
    f = fuse(cloud, [far, near])
    np.testing.assert_allclose(f.embeddings[0], [1, 1])
    assert f.view_counts.tolist() == [1]


def test_dimension_mismatch_and_empty_views():
    cloud = PointCloud(np.zeros((1, 3)), np.zeros((1, 3)))
    with pytest.raises(ValueError):
        fuse(cloud, [])
    with pytest.raises(ValueError):
        fuse(cloud, [_one_view(np.zeros(8)), _one_view(np.zeros(12))])


def test_stats(small_scene):
    f = fuse(small_scene.cloud, small_scene.views)
    st = fuse_stats(f)
    assert st["num_points"] == len(small_scene.cloud)
    assert st["num_valid"] == int(f.valid.sum())
    assert sum(st["view_count_histogram"].values()) == st["num_points"]
    assert st["coverage"] == pytest.approx(st["num_valid"] / st["num_points"])
