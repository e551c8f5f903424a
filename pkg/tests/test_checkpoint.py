import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays, array_shapes

from vacl.checkpoint import (
    CheckpointError,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)

names = st.text(min_size=0, max_size=24)
values = st.floats(allow_nan=False, allow_infinity=True, width=64)
shapes = st.one_of(
    st.just(()),
    array_shapes(min_dims=1, max_dims=3, min_side=0, max_side=5),
)
tensor_dicts = st.dictionaries(
    names, arrays(np.float64, shapes, elements=values), max_size=6)


class TestRoundTrip:
    @settings(max_examples=80, deadline=None)
    @given(tensor_dicts)
    def test_encode_decode_is_bit_identical(self, tensors):
        loaded = decode_checkpoint(encode_checkpoint(tensors))
        assert sorted(loaded) == sorted(tensors)
        for name, arr in tensors.items():
            assert loaded[name].shape == arr.shape
            assert loaded[name].tobytes() == np.ascontiguousarray(arr).tobytes()

    def test_file_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        tensors = {"a.weight": rng.normal(size=(7, 3)), "a.bias": rng.normal(size=7)}
        path = tmp_path / "t.vacl"
        save_checkpoint(path, tensors)
        loaded = load_checkpoint(path)
        assert all(np.array_equal(loaded[k], tensors[k]) for k in tensors)

    def test_empty_name_and_scalar_and_empty_tensor(self, tmp_path):
        tensors = {
            "": np.asarray(3.25),
            "empty": np.zeros((2, 0, 3)),
            "vec": np.array([1.0, -2.5]),
        }
        path = tmp_path / "edge.vacl"
        save_checkpoint(path, tensors)
        loaded = load_checkpoint(path)
        assert loaded[""].shape == ()
        assert float(loaded[""]) == 3.25
        assert loaded["empty"].shape == (2, 0, 3)

    def test_reencoding_loaded_dict_matches_bytes(self, tmp_path):
        rng = np.random.default_rng(0)
        tensors = {f"layer{i}.weight": rng.normal(size=(i + 1, 3))
                   for i in range(4)}
        blob = encode_checkpoint(tensors)
        assert encode_checkpoint(decode_checkpoint(blob)) == blob

    def test_fortran_order_input_normalized(self, tmp_path):
        arr = np.asfortranarray(np.arange(12.0).reshape(3, 4))
        blob = encode_checkpoint({"w": arr})
        assert np.array_equal(decode_checkpoint(blob)["w"], arr)


class TestCorruption:
    def test_crc_flip_rejected(self, tmp_path):
        blob = bytearray(encode_checkpoint({"w": np.ones((3, 3))}))
        blob[len(blob) // 2] ^= 0xFF
        with pytest.raises(CheckpointError, match="CRC"):
            decode_checkpoint(bytes(blob))

    def test_truncation_rejected(self, tmp_path):
        blob = encode_checkpoint({"w": np.ones(10)})
        with pytest.raises(CheckpointError):
            decode_checkpoint(blob[:-9])

    def test_bad_magic_rejected(self):
        blob = bytearray(encode_checkpoint({}))
        blob[0:4] = b"NOPE"
        import struct
        import zlib
        body = bytes(blob[:-4])
        fixed = body + struct.pack("<I", zlib.crc32(body))
        with pytest.raises(CheckpointError, match="magic"):
            decode_checkpoint(fixed)

    def test_unsupported_version_rejected(self):
        import struct
        import zlib
        body = b"VACL" + struct.pack("<II", 99, 0)
        blob = body + struct.pack("<I", zlib.crc32(body))
        with pytest.raises(CheckpointError, match="version"):
            decode_checkpoint(blob)

    def test_trailing_garbage_rejected(self):
        import struct
        import zlib
        body = b"VACL" + struct.pack("<II", 1, 0) + b"junk"
        blob = body + struct.pack("<I", zlib.crc32(body))
        with pytest.raises(CheckpointError, match="trailing"):
            decode_checkpoint(blob)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "absent.vacl")

    def test_failed_write_leaves_no_partial_file(self, tmp_path, monkeypatch):
        target = tmp_path / "sub" / "c.vacl"

        def boom(*_args, **_kwargs):
            raise OSError("disk gone")

        import vacl.io
        monkeypatch.setattr(vacl.io.os, "replace", boom)
        with pytest.raises(OSError):
            save_checkpoint(target, {"w": np.ones(3)})
        assert not target.exists()
        assert list(target.parent.glob("*.tmp")) == []
