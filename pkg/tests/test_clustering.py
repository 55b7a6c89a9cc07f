import numpy as np
import pytest

from ganlab import clustering as CL


def test_k_equals_n_zero_inertia():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    result = CL.kmeans(pts, k=3, seed=0)
    assert result.inertia == pytest.approx(0.0, abs=1e-12)


def test_inertia_non_increasing():
    rng = np.random.default_rng(0)
    pts = np.concatenate([rng.normal(0, 0.3, (40, 4)), rng.normal(3, 0.3, (40, 4))])
    result = CL.kmeans(pts, k=4, seed=1)
    hist = result.inertia_history
    assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))


def test_k_exceeding_count_rejected():
    with pytest.raises(CL.ClusterError):
        CL.kmeans(np.zeros((3, 2)), k=5)


def test_two_blob_separation():
    rng = np.random.default_rng(2)
    pts = np.concatenate([rng.normal(0, 0.1, (30, 2)), rng.normal(5, 0.1, (30, 2))])
    result = CL.kmeans(pts, k=2, seed=0)
    first, second = result.assignments[:30], result.assignments[30:]
    assert len(set(first.tolist())) == 1 and len(set(second.tolist())) == 1
    assert first[0] != second[0]


def test_cluster_discard_by_rule():
    rng = np.random.default_rng(3)
    bright = np.ones((10, 1, 8, 8), dtype=np.float32)
    dark = -np.ones((10, 1, 8, 8), dtype=np.float32)
    images = np.concatenate([bright, dark]) + rng.normal(0, 0.01, (20, 1, 8, 8)).astype(np.float32)

    def drop_dark(cluster, members):
        return images[members].mean() < 0

    partition, discard = CL.cluster_discard(images, encoder=None, k=2, seed=0,
                                            discard_rule=drop_dark)
    assert discard == set(range(10, 20))
    assert partition.k == 2


def test_cluster_discard_without_rule_returns_partition_only():
    images = np.random.default_rng(4).normal(size=(12, 1, 8, 8)).astype(np.float32)
    partition, discard = CL.cluster_discard(images, encoder=None, k=3, seed=0)
    assert discard == set()
    assert len(partition.assignments) == 12


def test_encoder_features_deterministic():
    enc = CL.build_feature_encoder(seed=5)
    images = np.random.default_rng(5).normal(size=(6, 1, 16, 16)).astype(np.float32)
    f1 = CL.encode_images(enc, images)
    f2 = CL.encode_images(enc, images)
    np.testing.assert_array_equal(f1, f2)
    assert f1.shape == (6, 16)


def test_cluster_discard_validates_k():
    with pytest.raises(CL.ClusterError):
        CL.cluster_discard(np.zeros((4, 1, 8, 8), dtype=np.float32), None, k=10)


def test_group_count_defaults():
    assert CL.FULL_SCALE_GROUPS == 200
    assert CL.DESK_SCALE_GROUPS == 16
    images = np.random.default_rng(0).normal(size=(20, 1, 8, 8)).astype(np.float32)
    partition, _ = CL.cluster_discard(images, None)  # desk default applies
    assert partition.k == 16
