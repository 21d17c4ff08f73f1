"""Tests for the IDX codec."""

import gzip
import struct

import numpy as np
import pytest

import lindistill.error
import lindistill.idx


@pytest.fixture
def fixture(tmp_path):
    images = np.array([
        [[0, 255], [128, 64]],
        [[10, 20], [30, 40]],
        [[1, 2], [3, 4]],
    ], dtype=np.uint8)
    labels = np.array([0, 7, 1], dtype=np.uint8)
    images_path = tmp_path / "images-idx3-ubyte"
    labels_path = tmp_path / "labels-idx1-ubyte"
    lindistill.idx.write_mnist_idx(images_path, labels_path, images, labels)
    return images_path, labels_path


class TestReadIdx:

    def test_header(self, fixture):
        images_path, _ = fixture
        data = images_path.read_bytes()
        assert struct.unpack(">4I", data[:16]) == (0x803, 3, 2, 2)

    def test_bad_magic(self, fixture):
        _, labels_path = fixture
        with pytest.raises(lindistill.error.FormatError, match="0x00000801"):
            lindistill.idx.read_idx(labels_path, lindistill.idx.IMAGES_MAGIC)

    def test_truncated(self, fixture):
        images_path, _ = fixture
        images_path.write_bytes(images_path.read_bytes()[:-1])
        with pytest.raises(lindistill.error.FormatError):
            lindistill.idx.read_idx(images_path, lindistill.idx.IMAGES_MAGIC)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "short"
        path.write_bytes(struct.pack(">II", 0x803, 3))
        with pytest.raises(lindistill.error.FormatError):
            lindistill.idx.read_idx(path, lindistill.idx.IMAGES_MAGIC)

    def test_gzip(self, fixture, tmp_path):
        images_path, _ = fixture
        compressed = tmp_path / "images.gz"
        with gzip.open(compressed, "wb") as file:
            file.write(images_path.read_bytes())
        np.testing.assert_array_equal(
            lindistill.idx.read_idx(compressed, lindistill.idx.IMAGES_MAGIC),
            lindistill.idx.read_idx(images_path, lindistill.idx.IMAGES_MAGIC))


class TestLoadMnistIdx:

    def test_pool(self, fixture):
        pool = lindistill.idx.load_mnist_idx(*fixture)
        assert len(pool) == 2
        np.testing.assert_array_equal(pool.labels, [0, 1])
        np.testing.assert_allclose(
            pool.X[:, 0], np.array([0, 255, 128, 64]) / 255)
        np.testing.assert_allclose(pool.X[:, 1], np.array([1, 2, 3, 4]) / 255)

    def test_count_mismatch(self, fixture, tmp_path):
        images_path, _ = fixture
        labels_path = tmp_path / "other-labels"
        lindistill.idx.write_idx(labels_path, np.array([0, 1], dtype=np.uint8))
        with pytest.raises(lindistill.error.FormatError, match="3 images"):
            lindistill.idx.load_mnist_idx(images_path, labels_path)

    def test_write_mismatch(self, tmp_path):
        with pytest.raises(lindistill.error.UsageError):
            lindistill.idx.write_mnist_idx(
                tmp_path / "i", tmp_path / "l",
                np.zeros((2, 2, 2)), np.zeros(3))
