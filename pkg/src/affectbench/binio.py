"""Length-checked little-endian struct reading shared by the file formats."""

from __future__ import annotations

import struct
from typing import BinaryIO

from affectbench.errors import TruncatedFileError


class ByteReader:
    """Wraps a binary stream; every short read raises with the byte offset."""

    def __init__(self, fh: BinaryIO):
        self._fh = fh
        self.offset = 0

    def read(self, n: int, what: str) -> bytes:
        buf = self._fh.read(n)
        if len(buf) != n:
            raise TruncatedFileError(
                f"truncated while reading {what} at byte {self.offset} "
                f"(wanted {n}, got {len(buf)})"
            )
        self.offset += n
        return buf

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.read(struct.calcsize(fmt), what))

    def at_eof(self) -> bool:
        probe = self._fh.read(1)
        if probe:
            self._fh.seek(-1, 1)
            return False
        return True
