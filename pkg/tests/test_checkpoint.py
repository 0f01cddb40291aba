import numpy as np
import pytest

from spectramba import checkpoint
from spectramba.nn import Linear


def test_bit_exact_round_trip(tmp_path, rng):
    tensors = {"a": rng.standard_normal((3, 4)), "b.c": rng.standard_normal(5).astype(np.float32),
               "scalar": np.array(2.5), "empty": np.zeros((0, 3))}
    checkpoint.save(tmp_path / "x.ckpt", tensors, {"k": "v with spaces"})
    back, meta = checkpoint.load(tmp_path / "x.ckpt")
    assert list(back) == list(tensors)
    for k, v in tensors.items():
        assert back[k].dtype == v.dtype and back[k].shape == v.shape
        assert back[k].tobytes() == v.tobytes()
    assert meta == {"k": "v with spaces"}


def test_manifest_is_human_readable(tmp_path):
    checkpoint.save(tmp_path / "x.ckpt", {"w": np.ones((2, 3))})
    blob = (tmp_path / "x.ckpt").read_bytes()
    head = blob.split(b"\nend\n")[0].decode()
    assert head.splitlines() == ["spectramba-checkpoint 1", "tensor w float64 2,3 0 48"]
    payload = blob[len(head) + len("\nend\n"):]
    assert payload == np.ones(6, dtype="<f8").tobytes()


def test_identical_content_identical_hash(tmp_path, rng):
    w = rng.standard_normal((4, 4))
    checkpoint.save(tmp_path / "a.ckpt", {"w": w})
    checkpoint.save(tmp_path / "b.ckpt", {"w": w.copy()})
    assert checkpoint.file_hash(tmp_path / "a.ckpt") == checkpoint.file_hash(tmp_path / "b.ckpt")


def test_module_state_round_trip(tmp_path):
    lin = Linear(3, 2).initialize(1)
    checkpoint.save(tmp_path / "l.ckpt", lin.state_dict())
    other = Linear(3, 2).initialize(2)
    other.load_state_dict(checkpoint.load(tmp_path / "l.ckpt")[0])
    assert np.array_equal(other.weight.data, lin.weight.data)


def test_state_mismatch_reported():
    with pytest.raises(KeyError, match="missing"):
        Linear(3, 2).load_state_dict({"weight": np.zeros((3, 2))})
    with pytest.raises(ValueError, match="shape"):
        Linear(3, 2).load_state_dict({"weight": np.zeros((2, 2)), "bias": np.zeros(2)})


@pytest.mark.parametrize("blob", [b"not a checkpoint\nend\n", b"spectramba-checkpoint 1\n",
                                  b"spectramba-checkpoint 1\ntensor w float64 4 0 32\nend\n\x00"])
def test_corrupt_files(tmp_path, blob):
    (tmp_path / "bad.ckpt").write_bytes(blob)
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load(tmp_path / "bad.ckpt")


def test_unsupported_dtype(tmp_path):
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.save(tmp_path / "x.ckpt", {"i": np.arange(3)})
