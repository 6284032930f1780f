import gzip

import numpy as np
import pytest

from poisonbench.core import ConfigError, derive_stream
from poisonbench.data import (IMAGES_MAGIC, Dataset, IdxFormatError, label_histogram, load_idx, mnist_paths,
                              partition_dirichlet, partition_iid, partition_one_class, stratified_subset,
                              synth_blobs, write_idx_images, write_idx_labels)


def _idx_pair(tmp_path, n_img=10, n_lab=10, gz=False):
    rng = np.random.default_rng(0)
    imgs = rng.integers(0, 256, (n_img, 4, 4), dtype=np.uint8)
    labs = rng.integers(0, 10, n_lab).astype(np.uint8)
    suffix = ".gz" if gz else ""
    ip, lp = tmp_path / f"img{suffix}", tmp_path / f"lab{suffix}"
    write_idx_images(ip, imgs)
    write_idx_labels(lp, labs)
    return ip, lp, imgs, labs


@pytest.mark.parametrize("gz", [False, True])
def test_idx_roundtrip(tmp_path, gz):
    ip, lp, imgs, labs = _idx_pair(tmp_path, gz=gz)
    ds = load_idx(ip, lp)
    assert len(ds) == 10 and ds.feature_dim == 16 and ds.num_classes == 10
    np.testing.assert_array_equal(ds.labels, labs)
    np.testing.assert_allclose(ds.features, imgs.reshape(10, -1) / 255.0)
    if gz:
        assert ip.read_bytes()[:2] == b"\x1f\x8b"


def test_idx_bad_magic(tmp_path):
    ip, lp, _, _ = _idx_pair(tmp_path)
    with pytest.raises(IdxFormatError, match="bad magic") as exc:
        load_idx(ip, ip)  # an images file handed over as labels
    assert exc.value.field == "labels"


def test_idx_count_mismatch(tmp_path):
    ip, lp, _, _ = _idx_pair(tmp_path, n_img=10, n_lab=9)
    with pytest.raises(IdxFormatError, match="count mismatch"):
        load_idx(ip, lp)


def test_idx_truncated(tmp_path):
    ip, lp, _, _ = _idx_pair(tmp_path)
    ip.write_bytes(ip.read_bytes()[:-5])
    with pytest.raises(IdxFormatError, match="truncated"):
        load_idx(ip, lp)


def test_mnist_files(mnist_dir):
    paths = mnist_paths(mnist_dir)
    train = load_idx(paths["train_images"], paths["train_labels"])
    test = load_idx(paths["test_images"], paths["test_labels"])
    assert train.feature_dim == 784 and train.num_classes == 10
    assert len(train) >= 4000 and len(test) >= 1000
    assert 0.0 <= train.features.min() and train.features.max() <= 1.0


def test_mnist_paths_missing(tmp_path, monkeypatch):
    monkeypatch.delenv("POISONBENCH_DATA_DIR", raising=False)
    with pytest.raises(ConfigError):
        mnist_paths(None)
    with pytest.raises(ConfigError, match="missing"):
        mnist_paths(tmp_path)


def test_blobs_zero_spread():
    ds = synth_blobs(2, 2, 3, 0.0, derive_stream(0, -1, "dataset"))
    assert len(ds) == 6
    np.testing.assert_array_equal(ds.labels, [0, 0, 0, 1, 1, 1])
    for k in range(2):
        rows = ds.features[ds.labels == k]
        assert np.all(rows == rows[0])
    assert not np.array_equal(ds.features[0], ds.features[3])


def test_blobs_deterministic():
    a = synth_blobs(4, 3, 20, 0.5, derive_stream(5, -1, "dataset"))
    b = synth_blobs(4, 3, 20, 0.5, derive_stream(5, -1, "dataset"))
    np.testing.assert_array_equal(a.features, b.features)
    assert a.features.min() >= 0.0


def test_blobs_linearly_separable():
    from poisonbench.aggregators import AggregatorSpec
    from poisonbench.attacks import AttackSpec
    from poisonbench.core import HyperParams
    from poisonbench.models import SoftmaxRegression
    from poisonbench.trainer import build_workers, run

    ds = synth_blobs(3, 5, 100, 0.1, derive_stream(0, -1, "dataset"))
    shards = partition_iid(len(ds), 3, derive_stream(0, -1, "partition"))
    workers = build_workers(ds, shards, 3, AttackSpec("none"), 0)
    model = SoftmaxRegression(3, 5)
    res = run(model, workers, AggregatorSpec("mean"), HyperParams(W=3, R=3, T=300, gamma=0.5, alpha=0.5),
              AttackSpec("none"), sigma2=False)
    assert model.accuracy(res.x, ds.features, ds.labels) >= 0.99


def test_stratified_subset():
    ds = synth_blobs(3, 2, 10, 0.1, derive_stream(0, -1, "dataset"))
    sub = stratified_subset(ds, 4, derive_stream(0, -1, "subset"))
    np.testing.assert_array_equal(np.bincount(sub.labels), [4, 4, 4])
    with pytest.raises(ConfigError):
        stratified_subset(ds, 11, derive_stream(0, -1, "subset"))


def test_partition_iid_sizes():
    shards = partition_iid(10, 2, derive_stream(0, -1, "partition"))
    assert [len(s) for s in shards] == [5, 5]
    assert sorted(np.concatenate([s.indices for s in shards])) == list(range(10))
    shards = partition_iid(11, 2, derive_stream(0, -1, "partition"))
    assert [len(s) for s in shards] == [5, 5]
    assert len(set(np.concatenate([s.indices for s in shards]))) == 10


def _balanced(K=10, per_class=100):
    labels = np.repeat(np.arange(K), per_class)
    return Dataset(np.zeros((len(labels), 1)), labels, K)


def test_dirichlet_large_beta_near_uniform():
    ds = _balanced()
    worst = 0.0
    for seed in range(20):
        for s in partition_dirichlet(ds, 10, 1e6, derive_stream(seed, -1, "partition")):
            frac = label_histogram(ds, s) / len(s)
            worst = max(worst, np.abs(frac - 0.1).max())
    assert worst <= 0.05


def test_dirichlet_small_beta_concentrates():
    ds = _balanced()
    fracs = []
    for seed in range(20):
        for s in partition_dirichlet(ds, 10, 0.01, derive_stream(seed, -1, "partition")):
            h = label_histogram(ds, s)
            fracs.append(h.max() / h.sum())
    assert np.mean(fracs) >= 0.8


def test_dirichlet_deterministic_and_disjoint():
    ds = _balanced()
    a = partition_dirichlet(ds, 10, 0.5, derive_stream(3, -1, "partition"))
    b = partition_dirichlet(ds, 10, 0.5, derive_stream(3, -1, "partition"))
    for sa, sb in zip(a, b):
        np.testing.assert_array_equal(sa.indices, sb.indices)
    allidx = np.concatenate([s.indices for s in a])
    assert len(allidx) == len(set(allidx)) == 1000
    with pytest.raises(ConfigError):
        partition_dirichlet(ds, 10, 0.0, derive_stream(3, -1, "partition"))


def test_one_class():
    ds = synth_blobs(2, 2, 3, 0.0, derive_stream(0, -1, "dataset"))
    shards = partition_one_class(ds, 2)
    np.testing.assert_array_equal(shards[0].indices, [0, 1, 2])
    with pytest.raises(ConfigError) as exc:
        partition_one_class(_balanced(), 5)
    assert exc.value.field == "partition"


def test_one_class_mnist(mnist_dir):
    paths = mnist_paths(mnist_dir)
    ds = load_idx(paths["train_images"], paths["train_labels"])
    shards = partition_one_class(ds, 10)
    assert set(ds.labels[shards[3].indices]) == {3}


def test_dataset_rejects_bad_labels():
    with pytest.raises(ConfigError):
        Dataset(np.zeros((2, 1)), np.array([0, 5]), 3)


def test_images_magic_constant():
    assert IMAGES_MAGIC == 0x00000803


CHI2_DF9_P01 = 21.666  # 0.99 quantile of chi-square with 9 degrees of freedom


def test_partition_iid_matches_global_histogram():
    ds = _balanced(per_class=50)
    rejections = 0
    for seed in range(100):
        shard = partition_iid(len(ds), 10, derive_stream(seed, -1, "partition"))[seed % 10]
        h = label_histogram(ds, shard)
        expected = len(shard) / 10
        rejections += float(((h - expected) ** 2 / expected).sum()) > CHI2_DF9_P01
    assert rejections <= 5
