import io

import numpy as np
import pytest

from mmtlab.mmtf import MAGIC, MmtfReader, MmtfWriter, read_record, write_record


def test_record_roundtrip_is_float32_exact(rng):
    arr = rng.normal(size=(3, 4, 5))
    buf = io.BytesIO()
    write_record(buf, arr)
    buf.seek(0)
    back = read_record(buf)
    np.testing.assert_array_equal(back, arr.astype("<f4").astype(np.float64))
    assert back.shape == (3, 4, 5)


def test_record_layout(rng):
    buf = io.BytesIO()
    write_record(buf, np.zeros((2, 3)))
    raw = buf.getvalue()
    assert raw[:5] == MAGIC
    assert raw[5:9] == (2).to_bytes(4, "little")
    assert raw[9:13] == (2).to_bytes(4, "little")
    assert raw[13:17] == (3).to_bytes(4, "little")
    assert len(raw) == 17 + 4 * 6


def test_scalar_rank_rejected():
    with pytest.raises(ValueError):
        write_record(io.BytesIO(), np.float64(3.0))


def test_bad_magic_rejected():
    buf = io.BytesIO(b"JUNK!" + b"\x00" * 16)
    with pytest.raises(ValueError):
        read_record(buf)


def test_truncated_payload_rejected(rng):
    buf = io.BytesIO()
    write_record(buf, rng.normal(size=(4,)))
    truncated = io.BytesIO(buf.getvalue()[:-3])
    with pytest.raises(ValueError):
        read_record(truncated)


class TestKeyedContainer:
    def test_write_read_many(self, tmp_path, rng):
        path = tmp_path / "feats.mmtf"
        arrays = {str(i): rng.normal(size=(i + 1, 3)) for i in range(5)}
        with MmtfWriter(path) as w:
            for key, arr in arrays.items():
                w.add(key, arr)
        with MmtfReader(path) as r:
            assert set(r.keys()) == set(arrays)
            for key, arr in arrays.items():
                np.testing.assert_allclose(r.read(key), arr, atol=1e-6)

    def test_index_file_is_plain_text(self, tmp_path, rng):
        path = tmp_path / "feats.mmtf"
        with MmtfWriter(path) as w:
            w.add("seg0", rng.normal(size=(2,)))
        lines = (tmp_path / "feats.mmtf.idx").read_text().splitlines()
        key, off = lines[0].split("\t")
        assert key == "seg0" and off == "0"

    def test_missing_key_rejected(self, tmp_path, rng):
        path = tmp_path / "feats.mmtf"
        with MmtfWriter(path) as w:
            w.add("0", rng.normal(size=(2,)))
        with MmtfReader(path) as r:
            with pytest.raises(KeyError, match="nope"):
                r.read("nope")

    def test_duplicate_key_rejected(self, tmp_path, rng):
        with MmtfWriter(tmp_path / "f.mmtf") as w:
            w.add("0", rng.normal(size=(2,)))
            with pytest.raises(ValueError):
                w.add("0", rng.normal(size=(2,)))

    def test_random_access_after_seek(self, tmp_path, rng):
        path = tmp_path / "feats.mmtf"
        arrays = [rng.normal(size=(3,)) for _ in range(4)]
        with MmtfWriter(path) as w:
            for i, arr in enumerate(arrays):
                w.add(str(i), arr)
        with MmtfReader(path) as r:
            np.testing.assert_allclose(r.read("3"), arrays[3], atol=1e-6)
            np.testing.assert_allclose(r.read("1"), arrays[1], atol=1e-6)
