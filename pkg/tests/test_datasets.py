import struct

import numpy as np
import pytest

from inhibited_softmax.datasets import (
    IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC,
    BlobOodConfig,
    Dataset,
    XorToyConfig,
    gen_blobs_ood,
    gen_xor,
    holdout_class_ood,
    load_idx,
    negate_images,
    ood_centers,
    read_idx,
    split,
    write_idx,
)
from inhibited_softmax.errors import BadMagicError, CountMismatchError, DataError, TruncatedFileError


def test_xor_balance_and_labels():
    d = gen_xor(XorToyConfig(500, 0.0, 0))
    assert len(d) == 500
    assert abs(int(d.labels.sum()) - 250) <= 1
    x = d.features
    np.testing.assert_array_equal(d.labels, (np.sign(x[:, 0]) != np.sign(x[:, 1])).astype(int))
    np.testing.assert_array_equal(gen_xor(XorToyConfig(500, 0.3, 4)).features,
                                  gen_xor(XorToyConfig(500, 0.3, 4)).features)
    with pytest.raises(ValueError):
        XorToyConfig(3)


def test_blob_ood_distance():
    cfg = BlobOodConfig(per_class=2000, seed=1)
    ind, ood = gen_blobs_ood(cfg)
    centers = np.array(cfg.in_centers)
    far = ood_centers(centers, cfg.ood_shift, cfg.ood_directions)
    assert np.all(np.linalg.norm(far[:, None] - centers[None], axis=2) >= cfg.ood_shift - 1e-12)
    d = np.min(np.linalg.norm(ood.features[:, None] - centers[None], axis=2), axis=1)
    assert np.mean(d > 5 * cfg.sd) > 0.999
    assert len(ind) == 6000 and len(ood) == 2000
    assert ood_centers(centers, 10.0, 1).shape == (1, 2)


def test_idx_round_trip(tmp_path):
    imgs = np.random.default_rng(0).integers(0, 256, (5, 3, 4)).astype(np.uint8)
    labels = np.array([0, 1, 2, 1, 0], dtype=np.uint8)
    write_idx(tmp_path / "i", imgs)
    write_idx(tmp_path / "l", labels)
    np.testing.assert_array_equal(read_idx(tmp_path / "i", IDX_IMAGES_MAGIC), imgs)
    d = load_idx(tmp_path / "i", tmp_path / "l")
    assert d.features.shape == (5, 12) and d.n_classes == 3
    np.testing.assert_allclose(d.features[0], imgs[0].ravel() / 255.0)
    assert np.all(negate_images(d).features == 1.0 - d.features)


def test_idx_header_bytes(tmp_path):
    write_idx(tmp_path / "l", np.array([7, 8], dtype=np.uint8))
    raw = (tmp_path / "l").read_bytes()
    assert raw == struct.pack(">II", 2049, 2) + bytes([7, 8])


def test_idx_errors(tmp_path):
    write_idx(tmp_path / "l", np.arange(4, dtype=np.uint8))
    with pytest.raises(BadMagicError):
        read_idx(tmp_path / "l", IDX_IMAGES_MAGIC)
    (tmp_path / "t").write_bytes((tmp_path / "l").read_bytes()[:-1])
    with pytest.raises(TruncatedFileError):
        read_idx(tmp_path / "t", IDX_LABELS_MAGIC)
    (tmp_path / "h").write_bytes(b"\x00\x00")
    with pytest.raises(TruncatedFileError):
        read_idx(tmp_path / "h", IDX_LABELS_MAGIC)
    write_idx(tmp_path / "i", np.zeros((3, 2, 2), dtype=np.uint8))
    with pytest.raises(CountMismatchError):
        load_idx(tmp_path / "i", tmp_path / "l")
    with pytest.raises(FileNotFoundError):
        read_idx(tmp_path / "missing", IDX_LABELS_MAGIC)


def test_split_sizes_and_disjoint():
    d = Dataset(np.arange(103.0)[:, None], np.zeros(103), 1)
    tr, va, te = split(d, (0.8, 0.1, 0.1), seed=0)
    assert (len(tr), len(va), len(te)) == (82, 10, 11)
    ids = np.r_[tr.features[:, 0], va.features[:, 0], te.features[:, 0]]
    assert sorted(ids) == list(range(103))
    with pytest.raises(ValueError):
        split(d, (0.5, 0.5, 0.5))
    with pytest.raises(DataError):
        split(Dataset(np.zeros((2, 1)), np.zeros(2), 1), (0.8, 0.1, 0.1))


def test_holdout_classes():
    d = Dataset(np.arange(6.0)[:, None], [0, 1, 2, 0, 1, 2], 3)
    ind, ood = holdout_class_ood(d, [1])
    assert ind.n_classes == 2 and len(ood) == 2
    np.testing.assert_array_equal(ind.labels, [0, 1, 0, 1])
    np.testing.assert_array_equal(ood.features[:, 0], [1.0, 4.0])
    with pytest.raises(ValueError):
        holdout_class_ood(d, [0, 1, 2])
    with pytest.raises(ValueError):
        holdout_class_ood(d, [5])


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 1)), [0], 1)
    with pytest.raises(DataError):
        Dataset(np.zeros((1, 1)), [3], 2)
    with pytest.raises(DataError):
        negate_images(Dataset(np.full((1, 1), 2.0), [0], 1))
