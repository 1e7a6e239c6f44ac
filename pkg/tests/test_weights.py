import numpy as np
import pytest

from minitrack.errors import IngestionError
from minitrack.nn import load_weights, save_weights


def test_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "conv0.kernels": rng.normal(size=(4, 2, 3, 3)),
        "conv0.bias": rng.normal(size=(4,)),
        "lstm.input.w": rng.normal(size=(10, 6)),
        "scalarish": rng.normal(size=(1,)),
    }
    path = tmp_path / "w.mtw"
    save_weights(path, tensors)
    back = load_weights(path)
    assert set(back) == set(tensors)
    for k in tensors:
        assert back[k].shape == tensors[k].shape
        assert np.array_equal(back[k], tensors[k])


def test_little_endian_row_major_layout(tmp_path):
    arr = np.arange(6, dtype=np.float64).reshape(2, 3)
    path = tmp_path / "w.mtw"
    save_weights(path, {"m": arr})
    raw = path.read_bytes()
    # header: magic(4) + count(4) + nlen(2) + "m"(1) + rank(1) + 2*extent(8) = 20
    data = np.frombuffer(raw, dtype="<f8", offset=20)
    assert np.array_equal(data, np.arange(6.0))


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.mtw"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(IngestionError):
        load_weights(path)


def test_trailing_bytes(tmp_path):
    path = tmp_path / "w.mtw"
    save_weights(path, {"a": np.zeros(2)})
    path.write_bytes(path.read_bytes() + b"tail")
    with pytest.raises(IngestionError):
        load_weights(path)
