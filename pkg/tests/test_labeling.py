import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vlgseg import synth
from vlgseg.fusion import FusedEmbeddings, fuse
from vlgseg.labeling import apply_scene_mask, class_logits, cosine_logits, label_scene, pseudo_labels
from vlgseg.scene import IGNORE, TextEmbeddingBank


def bank_of(rows, names=None):
    rows = np.asarray(rows, dtype=np.float64)
    return TextEmbeddingBank(tuple(names or [f"c{i}" for i in range(len(rows))]), rows)


def fused_of(rows, valid=None):
    rows = np.asarray(rows, dtype=np.float32)
    valid = np.ones(len(rows), dtype=bool) if valid is None else np.asarray(valid)
    return FusedEmbeddings(rows, valid, valid.astype(np.int64))


def test_masked_class_never_wins():
    bank = bank_of([[1, 0], [0, 1]])
    f = fused_of([[1, 0]])
    assert label_scene(f, bank, None).labels.tolist() == [0]
    assert label_scene(f, bank, np.array([False, True])).labels.tolist() == [1]


def test_tie_goes_to_lowest_index():
    bank = bank_of([[1, 0], [1, 0], [0, 1]])
    assert label_scene(fused_of([[2, 0]]), bank, None).labels.tolist() == [0]


def test_invalid_points_are_ignored():
    bank = bank_of([[1, 0], [0, 1]])
    pl = label_scene(fused_of([[1, 0], [0, 0]], valid=[True, False]), bank, np.array([True, True]))
    assert pl.labels.tolist() == [0, IGNORE]
    assert pl.coverage() == 0.5


def test_logits_are_cosines():
    bank = bank_of([[3, 0], [1, 1]])
    logits = class_logits(fused_of([[0.5, 0.5]]), bank)
    np.testing.assert_allclose(logits, [[np.sqrt(0.5), 1.0]], atol=1e-7)


def test_errors():
    bank = bank_of([[1, 0], [0, 1]])
    with pytest.raises(ValueError):
        cosine_logits(np.zeros((1, 3)), bank)
    with pytest.raises(ValueError):
        apply_scene_mask(np.zeros((1, 2)), [False, False])
    with pytest.raises(ValueError):
        apply_scene_mask(np.zeros((1, 2)), [True])
    with pytest.raises(ValueError):
        TextEmbeddingBank(("a", "a"), np.eye(2))
    with pytest.raises(ValueError):
        TextEmbeddingBank(("a", "b"), np.array([[1.0, 0.0], [0.0, 0.0]]))


def test_mask_guarantee_fuzzed():
    rng = np.random.default_rng(0)
    violations = 0
    for _ in range(10):
        K, d, n = int(rng.integers(2, 20)), int(rng.integers(2, 32)), 10_000
        bank = bank_of(rng.normal(size=(K, d)))
        mask = rng.uniform(size=K) < 0.5
        mask[rng.integers(K)] = True
        pl = label_scene(fused_of(rng.normal(size=(n, d)) * rng.uniform(0.01, 100)), bank, mask)
        violations += int((~mask[pl.labels]).sum())
    assert violations == 0


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), scale_lo=st.floats(1e-3, 1.0), scale_hi=st.floats(1.0, 1e3))
def test_argmax_invariant_to_positive_bank_scaling(seed, scale_lo, scale_hi):
    rng = np.random.default_rng(seed)
    K, d = int(rng.integers(2, 12)), int(rng.integers(2, 16))
    rows = rng.normal(size=(K, d))
    f = fused_of(rng.normal(size=(500, d)))
    scales = rng.uniform(scale_lo, scale_hi, size=(K, 1))
    a = label_scene(f, bank_of(rows), None).labels
    b = label_scene(f, bank_of(rows * scales), None).labels
    np.testing.assert_array_equal(a, b)


def pseudo_accuracy(scene, bank, masked):
    f = fuse(scene.cloud, scene.views)
    pl = label_scene(f, bank, scene.scene_mask() if masked else None)
    keep = pl.labels != IGNORE
    return float(np.mean(pl.labels[keep] == scene.cloud.gt[keep]))


@pytest.mark.parametrize("seed", [1, 2, 3, 4, 5])
def test_scene_mask_never_hurts(seed):
    spec = synth.default_suite(seed=seed, num_train=2, num_test=0, num_points=3000)
    suite = synth.build(spec)
    for s in suite.train:
        assert pseudo_accuracy(s.scene, suite.bank, True) >= pseudo_accuracy(s.scene, suite.bank, False)


def test_orthonormal_prototypes_low_noise_are_recovered():
    spec = synth.SynthSpec(seed=0, num_train=1, num_test=0, num_points=4000, sigma=0.05)
    suite = synth.build(spec)
    s = suite.train[0].scene
    assert pseudo_accuracy(s, suite.bank, False) >= 0.99


def test_pseudo_labels_direct():
    filtered = np.array([[0.1, -np.inf, 0.3], [0.0, 0.0, 0.0]])
    pl = pseudo_labels(filtered, [True, False])
    assert pl.labels.tolist() == [2, IGNORE]
