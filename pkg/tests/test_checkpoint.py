import numpy as np
import pytest

from inkline.checkpoint import CheckpointError, load_checkpoint, save_checkpoint


def test_roundtrip(tmp_path):
    tensors = {
        "G/block0/conv/weight": np.random.default_rng(0).standard_normal((4, 3, 3, 3)).astype(np.float32),
        "G/const/value": np.random.default_rng(1).standard_normal((2, 4, 1)),
        "scalar": np.array(3.5),
    }
    config = {"model": {"style_dim": 32}, "networks": ["G"]}
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, tensors, config)
    loaded, cfg = load_checkpoint(path)
    assert cfg == config
    assert set(loaded) == set(tensors)
    for k in tensors:
        assert loaded[k].shape == tensors[k].shape
        assert np.array_equal(loaded[k], tensors[k])
    # float64 stays float64, float32 stays float32
    assert loaded["G/const/value"].dtype == np.float64
    assert loaded["G/block0/conv/weight"].dtype == np.float32


def test_save_is_byte_deterministic(tmp_path):
    tensors = {"a": np.arange(6, dtype=np.float32).reshape(2, 3)}
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(p1, tensors, {"v": 1})
    save_checkpoint(p2, tensors, {"v": 1})
    assert p1.read_bytes() == p2.read_bytes()


def test_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"NOTACKPT" + b"\x00" * 16)
    with pytest.raises(CheckpointError):
        load_checkpoint(p)
