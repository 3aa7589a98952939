"""MMTF tensor record files.

A record is: ASCII magic ``MMTF1``, a little-endian uint32 rank, rank
little-endian uint32 dimensions, then the row-major payload as little-endian
32-bit floats. A container file concatenates records; a plain-text index file
(``<path>.idx`` by convention) maps record keys to byte offsets, one
``key<TAB>offset`` line per record.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterator

import numpy as np

MAGIC = b"MMTF1"


def write_record(f, array: np.ndarray) -> int:
    """Append one record; returns the byte offset it starts at."""
    arr = np.asarray(array, dtype="<f4")
    if arr.ndim == 0:
        raise ValueError("MMTF records must have rank >= 1")
    offset = f.tell()
    f.write(MAGIC)
    f.write(struct.pack("<I", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(np.ascontiguousarray(arr).tobytes())
    return offset


def read_record(f) -> np.ndarray:
    """Read one record at the current position; returns a float64 array."""
    magic = f.read(len(MAGIC))
    if magic != MAGIC:
        raise ValueError(f"bad MMTF magic {magic!r}")
    (rank,) = struct.unpack("<I", f.read(4))
    if rank == 0 or rank > 8:
        raise ValueError(f"unreasonable MMTF rank {rank}")
    shape = struct.unpack(f"<{rank}I", f.read(4 * rank))
    count = int(np.prod(shape))
    payload = f.read(4 * count)
    if len(payload) != 4 * count:
        raise ValueError("truncated MMTF record payload")
    flat = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return flat.reshape(shape)


def index_path(path) -> Path:
    return Path(str(path) + ".idx")


class MmtfWriter:
    """Writes keyed records plus the text index file."""

    def __init__(self, path):
        self.path = Path(path)
        self._f = open(self.path, "wb")
        self._index: dict[str, int] = {}

    def add(self, key: str, array: np.ndarray) -> None:
        key = str(key)
        if "\t" in key or "\n" in key:
            raise ValueError(f"record key {key!r} contains tab/newline")
        if key in self._index:
            raise ValueError(f"duplicate record key {key!r}")
        self._index[key] = write_record(self._f, array)

    def close(self) -> None:
        self._f.close()
        with open(index_path(self.path), "w", encoding="utf-8",
                  newline="\n") as f:
            for key, off in self._index.items():
                f.write(f"{key}\t{off}\n")

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class MmtfReader:
    """Random access to keyed records through the index file."""

    def __init__(self, path):
        self.path = Path(path)
        self._f = open(self.path, "rb")
        self._index: dict[str, int] = {}
        with open(index_path(self.path), "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                try:
                    key, off = line.split("\t")
                    self._index[key] = int(off)
                except ValueError:
                    raise ValueError(
                        f"{index_path(self.path)}:{lineno}: bad index line "
                        f"{line!r}") from None

    def keys(self) -> list[str]:
        return list(self._index)

    def __contains__(self, key: str) -> bool:
        return str(key) in self._index

    def read(self, key: str) -> np.ndarray:
        key = str(key)
        if key not in self._index:
            raise KeyError(f"no MMTF record for key {key!r} in {self.path}")
        self._f.seek(self._index[key])
        return read_record(self._f)

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        for key in self._index:
            yield key, self.read(key)

    def close(self) -> None:
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
