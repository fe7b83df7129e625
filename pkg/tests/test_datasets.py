"""IDX container round trips, format validation, synthetic corpus behavior."""

import struct

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from scatgen.datasets import (
    IDX_IMAGE_MAGIC,
    ensure_dataset,
    load_idx_images,
    synthesize_digits,
    write_idx_images,
)
from scatgen.errors import FormatError, ParameterError


class TestIdxRoundTrip:
    def test_uint8_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        raw = rng.integers(0, 256, size=(5, 28, 28), dtype=np.uint8)
        path = str(tmp_path / "images.idx3-ubyte")
        write_idx_images(path, raw)
        loaded = load_idx_images(path)
        assert loaded.shape == (5, 1, 28, 28)
        assert_allclose(loaded[:, 0] * 255.0, raw.astype(np.float64), atol=1e-12)

    def test_header_layout_is_big_endian(self, tmp_path):
        path = str(tmp_path / "images.idx3-ubyte")
        write_idx_images(path, np.zeros((3, 7, 9), dtype=np.uint8))
        with open(path, "rb") as handle:
            header = handle.read(16)
        assert struct.unpack(">IIII", header) == (IDX_IMAGE_MAGIC, 3, 7, 9)

    def test_float_input_quantized(self, tmp_path):
        images = np.full((2, 1, 8, 8), 0.5)
        path = str(tmp_path / "images.idx3-ubyte")
        write_idx_images(path, images)
        loaded = load_idx_images(path)
        assert_allclose(loaded, np.full((2, 1, 8, 8), 128 / 255.0), atol=1e-12)

    def test_values_scaled_to_unit_interval(self, tmp_path):
        path = str(tmp_path / "images.idx3-ubyte")
        raw = np.array([[[0, 255], [51, 102]]], dtype=np.uint8)
        write_idx_images(path, raw)
        loaded = load_idx_images(path)
        assert loaded.min() == 0.0 and loaded.max() == 1.0

    def test_multichannel_rejected(self, tmp_path):
        with pytest.raises(ParameterError, match="single-channel"):
            write_idx_images(str(tmp_path / "x"), np.zeros((2, 3, 8, 8)))


class TestIdxValidation:
    def test_label_file_magic_rejected(self, tmp_path):
        # 0x00000801 marks an IDX1 label file, not an image file
        path = str(tmp_path / "labels.idx1-ubyte")
        with open(path, "wb") as handle:
            handle.write(struct.pack(">II", 0x00000801, 16) + bytes(16))
        with pytest.raises(FormatError, match="magic"):
            load_idx_images(path)

    def test_truncated_payload_reports_counts(self, tmp_path):
        path = str(tmp_path / "images.idx3-ubyte")
        with open(path, "wb") as handle:
            handle.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, 2, 28, 28))
            handle.write(bytes(100))
        expected = 16 + 2 * 28 * 28
        with pytest.raises(FormatError, match=f"expected {expected} bytes"):
            load_idx_images(path)
        with pytest.raises(FormatError, match="has 116"):
            load_idx_images(path)

    def test_truncated_header(self, tmp_path):
        path = str(tmp_path / "stub")
        with open(path, "wb") as handle:
            handle.write(bytes(7))
        with pytest.raises(FormatError, match="header truncated"):
            load_idx_images(path)

    def test_oversized_payload_rejected(self, tmp_path):
        path = str(tmp_path / "images.idx3-ubyte")
        with open(path, "wb") as handle:
            handle.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, 1, 4, 4))
            handle.write(bytes(20))
        with pytest.raises(FormatError, match="size mismatch"):
            load_idx_images(path)


class TestSyntheticDigits:
    def test_shapes_and_range(self):
        images, labels = synthesize_digits(20, seed=0)
        assert images.shape == (20, 1, 28, 28)
        assert labels.shape == (20,)
        assert images.min() >= 0.0 and images.max() <= 1.0
        assert images.max() > 0.85  # stroke cores stay bright

    def test_labels_cycle_classes(self):
        _, labels = synthesize_digits(25, seed=0)
        assert_array_equal(labels[:10], np.arange(10))
        assert_array_equal(labels[10:20], np.arange(10))

    def test_same_seed_reproduces(self):
        a, _ = synthesize_digits(12, seed=9)
        b, _ = synthesize_digits(12, seed=9)
        assert_array_equal(a, b)

    def test_different_seeds_differ(self):
        a, _ = synthesize_digits(12, seed=1)
        b, _ = synthesize_digits(12, seed=2)
        assert np.abs(a - b).max() > 0.1

    def test_samples_within_class_are_jittered(self):
        images, labels = synthesize_digits(30, seed=4)
        zeros = images[labels == 0]
        assert np.abs(zeros[0] - zeros[1]).max() > 0.05

    def test_glyphs_have_ink(self):
        images, _ = synthesize_digits(10, seed=0)
        ink = images.mean(axis=(1, 2, 3))
        assert (ink > 0.03).all() and (ink < 0.5).all()

    def test_custom_size(self):
        images, _ = synthesize_digits(4, seed=0, size=32)
        assert images.shape == (4, 1, 32, 32)

    def test_invalid_parameters(self):
        with pytest.raises(ParameterError, match="count"):
            synthesize_digits(0)
        with pytest.raises(ParameterError, match="size"):
            synthesize_digits(4, size=4)


class TestEnsureDataset:
    def test_creates_then_reuses(self, tmp_path):
        path = str(tmp_path / "corpus.idx3-ubyte")
        ensure_dataset(path, count=6, seed=3)
        first = load_idx_images(path)
        ensure_dataset(path, count=999, seed=5)  # existing file untouched
        second = load_idx_images(path)
        assert_array_equal(first, second)
        assert first.shape[0] == 6

    def test_loadable_corpus_matches_generator(self, tmp_path):
        path = str(tmp_path / "corpus.idx3-ubyte")
        ensure_dataset(path, count=8, seed=11)
        loaded = load_idx_images(path)
        generated, _ = synthesize_digits(8, seed=11)
        # quantization to bytes costs at most half a step
        assert np.abs(loaded - generated).max() <= 0.5 / 255.0 + 1e-12
