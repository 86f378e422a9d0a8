"""Test the binary checkpoint format."""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from sengen.checkpoint import MAGIC, describe, load_checkpoint, save_checkpoint
from sengen.errors import CheckpointError
from sengen.gradcheck import toy_parameters


def _save(path, share_embeddings=True, decoder_cell="elman", rng_seed=0, **extra):
    model, encoder = toy_parameters(np.random.default_rng(rng_seed), decoder_cell, share_embeddings)
    save_checkpoint(path, model, encoder, describe(model, encoder, **extra))
    return model, encoder


def test_values_and_metadata_survive(tmp_path):
    path = tmp_path / "model.ckpt"
    model, encoder = _save(path, epoch=4, seed=11)
    loaded = load_checkpoint(path)
    for name, p in model.named_parameters():
        np.testing.assert_array_equal(loaded.model[name].value, p.value)
    for name, p in encoder.named_parameters():
        np.testing.assert_array_equal(loaded.encoder[name].value, p.value)
    assert loaded.metadata["K"] == "2" and loaded.metadata["V"] == "6"
    assert loaded.metadata["epoch"] == "4" and loaded.metadata["seed"] == "11"
    assert list(loaded.metadata)[:2] == ["K", "V"]


def test_shared_embeddings_stay_shared(tmp_path):
    path = tmp_path / "model.ckpt"
    _save(path)
    loaded = load_checkpoint(path)
    assert loaded.encoder.shares_embeddings
    assert loaded.encoder.emb is loaded.model["emb"]


def test_unshared_gru_checkpoint(tmp_path):
    path = tmp_path / "model.ckpt"
    _, encoder = _save(path, share_embeddings=False, decoder_cell="gru")
    loaded = load_checkpoint(path)
    assert loaded.model.decoder_cell == "gru"
    assert not loaded.encoder.shares_embeddings
    np.testing.assert_array_equal(loaded.encoder["emb"].value, encoder["emb"].value)


def test_same_parameters_give_same_bytes(tmp_path):
    _save(tmp_path / "a.ckpt", rng_seed=3, epoch=1)
    _save(tmp_path / "b.ckpt", rng_seed=3, epoch=1)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert (tmp_path / "a.ckpt").read_bytes().startswith(MAGIC)
    assert not (tmp_path / "a.ckpt.tmp").exists()


def test_reload_and_save_is_stable(tmp_path):
    _save(tmp_path / "a.ckpt", rng_seed=5)
    loaded = load_checkpoint(tmp_path / "a.ckpt")
    save_checkpoint(tmp_path / "b.ckpt", loaded.model, loaded.encoder, loaded.metadata)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_bad_magic(tmp_path):
    path = tmp_path / "model.ckpt"
    path.write_bytes(b"not a checkpoint\n")
    with pytest.raises(CheckpointError, match="not a sengen v1 checkpoint"):
        load_checkpoint(path)


@pytest.mark.parametrize("keep", [0.3, 0.6, 0.99])
def test_truncated_checkpoint(tmp_path, keep):
    path = tmp_path / "model.ckpt"
    _save(path)
    data = path.read_bytes()
    path.write_bytes(data[: int(len(data) * keep)])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(CheckpointError, match="Failed to read checkpoint"):
        load_checkpoint(tmp_path / "missing.ckpt")


def test_metadata_must_be_line_safe(tmp_path):
    model, encoder = toy_parameters(np.random.default_rng(0))
    with pytest.raises(CheckpointError, match="key=value"):
        save_checkpoint(tmp_path / "model.ckpt", model, encoder, {"note": "two\nlines"})
