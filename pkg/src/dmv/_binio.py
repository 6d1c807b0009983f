"""Little-endian binary packing helpers for versioned artifact files."""

from __future__ import annotations

import struct

from .errors import BadMagic


def pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


class Reader:
    """Cursor over a byte buffer; short reads raise BadMagic."""

    def __init__(self, data: bytes, what: str = "artifact"):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise BadMagic(f"{self.what} is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def read_str(self) -> str:
        (ln,) = self.unpack("<I")
        return self.take(ln).decode("utf-8")

    def expect_end(self) -> None:
        if self.pos != len(self.data):
            raise BadMagic(f"{self.what} has trailing bytes")
