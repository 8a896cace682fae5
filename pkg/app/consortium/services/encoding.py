"""
Canonical byte encoding shared by hashing, signing and the wire codec.

Integers are big-endian and fixed width; variable-length byte strings and
sequences carry a 4-byte length prefix.
"""
import struct

from app.consortium.errors import WireFormatError

_U8 = struct.Struct(">B")
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")


def u8(value: int) -> bytes:
    return _U8.pack(value)


def u32(value: int) -> bytes:
    return _U32.pack(value)


def u64(value: int) -> bytes:
    return _U64.pack(value)


def var_bytes(value: bytes) -> bytes:
    return _U32.pack(len(value)) + value


def var_text(value: str) -> bytes:
    return var_bytes(value.encode("utf-8"))


class Reader:
    """Cursor over an encoded buffer; every read is bounds-checked."""

    def __init__(self, data: bytes):
        self._data = memoryview(data)
        self._offset = 0

    def _take(self, size: int) -> bytes:
        end = self._offset + size
        if size < 0 or end > len(self._data):
            raise WireFormatError(f"truncated input: need {size} bytes at offset {self._offset}")
        chunk = bytes(self._data[self._offset:end])
        self._offset = end
        return chunk

    def u8(self) -> int:
        return _U8.unpack(self._take(1))[0]

    def u32(self) -> int:
        return _U32.unpack(self._take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self._take(8))[0]

    def fixed(self, size: int) -> bytes:
        return self._take(size)

    def var_bytes(self) -> bytes:
        return self._take(self.u32())

    def var_text(self) -> str:
        try:
            return self.var_bytes().decode("utf-8")
        except UnicodeDecodeError as e:
            raise WireFormatError(f"invalid utf-8 text: {e}") from e

    @property
    def remaining(self) -> int:
        return len(self._data) - self._offset

    def finish(self) -> None:
        if self.remaining:
            raise WireFormatError(f"{self.remaining} trailing bytes")
