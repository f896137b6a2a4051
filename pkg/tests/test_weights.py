import struct
import zlib

import numpy as np
import pytest

from patnet.fusion import fuse_model
from patnet.model import ParamStore, init_params
from patnet.weights import (
    BadMagicError,
    CrcError,
    NameSetError,
    VersionError,
    deserialize_store,
    expected_file_size,
    load_weights,
    save_weights,
    serialize_store,
)

from test_model import tiny_spec


@pytest.fixture(scope="module")
def t0_store():
    from patnet.config import build_variant
    return build_variant("T0"), init_params(build_variant("T0"), seed=4)


class TestRoundTrip:
    def test_bitwise_round_trip(self, t0_store, tmp_path):
        spec, store = t0_store
        path = tmp_path / "t0.patw"
        save_weights(store, path)
        loaded, variant = load_weights(path)
        assert variant == "T0"
        assert not loaded.fused
        assert loaded.names() == store.names()
        assert all(np.array_equal(loaded[k], store[k]) for k in store.names())

    def test_identical_seed_identical_bytes(self, t0_store):
        spec, store = t0_store
        again = init_params(spec, seed=4)
        assert serialize_store(store) == serialize_store(again)

    def test_fused_store_round_trips(self, tmp_path):
        spec = tiny_spec()
        store = init_params(spec, seed=1)
        fused, _ = fuse_model(store, spec)
        path = tmp_path / "tiny.patw"
        save_weights(fused, path)
        loaded, variant = load_weights(path, spec=spec)
        assert loaded.fused
        assert all(np.array_equal(loaded[k], fused[k]) for k in fused.names())


class TestByteLayout:
    def test_single_small_tensor_layout(self):
        store = ParamStore(tensors={"a": np.arange(6, dtype=np.float32).reshape(2, 3)})
        blob = serialize_store(store)
        # field-by-field arithmetic: magic 4 + version 4 + count 4
        # + name_len 2 + name 1 + dtype 1 + ndim 1 + dims 2*4 + payload 6*4
        # + crc 4
        by_hand = 4 + 4 + 4 + (2 + 1) + 1 + 1 + 8 + 24 + 4
        assert by_hand == 53
        assert len(blob) == by_hand
        assert expected_file_size(store) == by_hand

    def test_header_fields(self):
        store = ParamStore(tensors={"a": np.zeros((2, 3), np.float32)})
        blob = serialize_store(store)
        assert blob[:4] == b"PATW"
        version, count = struct.unpack_from("<II", blob, 4)
        assert version == 1 and count == 1
        (crc,) = struct.unpack("<I", blob[-4:])
        assert crc == zlib.crc32(blob[:-4]) & 0xFFFFFFFF

    def test_expected_size_matches_blob_for_model(self, t0_store):
        _, store = t0_store
        assert expected_file_size(store) == len(serialize_store(store))


class TestLoadErrors:
    def make_blob(self):
        store = ParamStore(tensors={"a": np.ones((2, 2), np.float32)})
        return serialize_store(store)

    def test_truncated_file_is_crc_error(self, tmp_path):
        spec = tiny_spec()
        path = tmp_path / "t.patw"
        save_weights(init_params(spec, seed=0), path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(CrcError):
            load_weights(path)

    def test_flipped_payload_byte_is_crc_error(self):
        blob = bytearray(self.make_blob())
        blob[20] ^= 0xFF
        with pytest.raises(CrcError):
            deserialize_store(bytes(blob))

    def test_bad_magic(self):
        blob = bytearray(self.make_blob())
        blob[:4] = b"XXXX"
        with pytest.raises(BadMagicError):
            deserialize_store(bytes(blob))

    def test_unknown_version(self):
        blob = bytearray(self.make_blob())
        struct.pack_into("<I", blob, 4, 9)
        body = bytes(blob[:-4])
        blob = body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
        with pytest.raises(VersionError):
            deserialize_store(blob)

    def test_name_set_mismatch(self, tmp_path):
        spec = tiny_spec()
        store = init_params(spec, seed=0)
        renamed = dict(store.tensors)
        renamed["bogus.weight"] = renamed.pop("embed.conv.weight")
        path = tmp_path / "bad.patw"
        save_weights(ParamStore(tensors=renamed), path)
        with pytest.raises(NameSetError, match="bogus"):
            load_weights(path, spec=spec)

    def test_non_model_names_rejected_without_spec(self, tmp_path):
        path = tmp_path / "x.patw"
        path.write_bytes(self.make_blob())
        with pytest.raises(NameSetError):
            load_weights(path)
