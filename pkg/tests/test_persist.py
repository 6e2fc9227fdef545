"""Checkpoint round-trip and corruption handling."""

import numpy as np
import pytest

from ecbm import model as em
from ecbm.persist import CheckpointError, load_checkpoint, save_checkpoint


@pytest.fixture
def theta():
    cfg = em.ModelConfig(n_concepts=3, n_classes=2, feature_dim=4, embed_dim=3)
    return em.init_theta(cfg, seed=21)


def test_round_trip_bit_exact(theta, tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, theta)
    loaded = load_checkpoint(path)
    assert loaded.config == theta.config
    for name in theta.arrays:
        np.testing.assert_array_equal(loaded.arrays[name], theta.arrays[name])


def test_save_is_byte_deterministic(theta, tmp_path):
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(a, theta)
    save_checkpoint(b, theta)
    assert a.read_bytes() == b.read_bytes()


def test_bad_magic(theta, tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, theta)
    data = bytearray(path.read_bytes())
    data[:4] = b"NOPE"
    path.write_bytes(data)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_bad_version(theta, tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, theta)
    data = bytearray(path.read_bytes())
    data[4] = 99
    path.write_bytes(data)
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)


def test_truncated_file(theta, tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, theta)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) - 16])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_trailing_bytes(theta, tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, theta)
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(path)


def test_shape_total_mismatch(theta, tmp_path):
    # a record deleted wholesale leaves the reader starved
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, theta)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
