import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spikeloop.weights import (
    MAGIC,
    WeightFormatError,
    load_weights,
    peek_kind,
    save_weights,
)


def test_round_trip_preserves_arrays_and_manifest(tmp_path):
    path = tmp_path / "m.jnkw"
    arrays = {
        "w0": np.arange(12, dtype=np.float64).reshape(3, 4),
        "b0": np.array([-1.5, 2.5]),
        "counts": np.array([[1, 2], [3, 4]], dtype=np.int16),
        "scalar": np.array(7.0),
    }
    manifest = {"kind": "decoder-mlp-v1", "config": {"window": 50, "hidden": [256, 128]}}
    save_weights(path, manifest, arrays)
    got_manifest, got = load_weights(path)
    assert got_manifest == manifest
    assert set(got) == set(arrays)
    for name in arrays:
        assert got[name].dtype == arrays[name].dtype
        assert got[name].shape == arrays[name].shape
        assert np.array_equal(got[name], arrays[name])


def test_file_starts_with_magic_and_version(tmp_path):
    path = tmp_path / "m.jnkw"
    save_weights(path, {"kind": "encoder-transformer-v1"}, {})
    raw = path.read_bytes()
    assert raw[:4] == MAGIC
    assert struct.unpack("<I", raw[4:8])[0] == 1


def test_peek_kind(tmp_path):
    path = tmp_path / "m.jnkw"
    save_weights(path, {"kind": "encoder-transformer-v1", "config": {}}, {})
    assert peek_kind(path) == "encoder-transformer-v1"


def test_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.jnkw"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(WeightFormatError, match="magic"):
        load_weights(path)


def test_rejects_unsupported_version(tmp_path):
    path = tmp_path / "m.jnkw"
    save_weights(path, {"kind": "decoder-mlp-v1"}, {"w": np.zeros(3)})
    raw = bytearray(path.read_bytes())
    raw[4:8] = struct.pack("<I", 9)
    path.write_bytes(bytes(raw))
    with pytest.raises(WeightFormatError, match="version"):
        load_weights(path)


def test_rejects_truncation(tmp_path):
    path = tmp_path / "m.jnkw"
    save_weights(path, {"kind": "decoder-mlp-v1"}, {"w": np.arange(100.0)})
    raw = path.read_bytes()
    path.write_bytes(raw[:-20])
    with pytest.raises(WeightFormatError, match="truncated"):
        load_weights(path)


def test_rejects_trailing_garbage(tmp_path):
    path = tmp_path / "m.jnkw"
    save_weights(path, {"kind": "decoder-mlp-v1"}, {})
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(WeightFormatError, match="trailing"):
        load_weights(path)


def test_rejects_missing_manifest(tmp_path):
    path = tmp_path / "m.jnkw"
    save_weights(path, {"kind": "decoder-mlp-v1"}, {"w": np.zeros(2)})
    raw = bytearray(path.read_bytes())
    # flip the manifest's dtype string "json" to an array dtype so it no longer counts
    idx = raw.find(b"json")
    raw[idx:idx + 4] = b"<i1\x00"[:4]
    path.write_bytes(bytes(raw))
    with pytest.raises(WeightFormatError):
        load_weights(path)


def test_save_requires_kind(tmp_path):
    with pytest.raises(ValueError, match="kind"):
        save_weights(tmp_path / "m.jnkw", {"config": {}}, {})


def test_reserved_name_rejected(tmp_path):
    with pytest.raises(ValueError, match="reserved"):
        save_weights(tmp_path / "m.jnkw", {"kind": "decoder-mlp-v1"},
                     {"__manifest__": np.zeros(1)})


@given(st.dictionaries(
    st.text(st.characters(min_codepoint=33, max_codepoint=126), min_size=1, max_size=12)
      .filter(lambda s: s != "__manifest__"),
    st.tuples(st.sampled_from([np.float64, np.float32, np.int16, np.int64]),
              st.lists(st.integers(min_value=0, max_value=5), min_size=0, max_size=3)),
    max_size=6))
@settings(max_examples=25, deadline=None)
def test_round_trip_arbitrary_sections(tmp_path_factory, layout):
    rng = np.random.default_rng(0)
    arrays = {}
    for name, (dtype, shape) in layout.items():
        if np.issubdtype(dtype, np.floating):
            arrays[name] = rng.standard_normal(shape).astype(dtype)
        else:
            arrays[name] = rng.integers(-50, 50, size=shape).astype(dtype)
    path = tmp_path_factory.mktemp("w") / "m.jnkw"
    save_weights(path, {"kind": "decoder-mlp-v1", "n": len(arrays)}, arrays)
    manifest, got = load_weights(path)
    assert manifest["n"] == len(arrays)
    for name, arr in arrays.items():
        assert got[name].dtype == arr.dtype and got[name].shape == arr.shape
        assert np.array_equal(got[name], arr)
