"""Little-endian binary helpers shared by the model file formats."""
import struct

import numpy as np

from .errors import FormatError


class Reader:
    def __init__(self, data, name):
        self.data = data
        self.name = name
        self.pos = 0

    def take(self, nbytes, section):
        if self.pos + nbytes > len(self.data):
            raise FormatError(
                f"{self.name}: truncated file, missing {section} "
                f"({nbytes} bytes needed, {len(self.data) - self.pos} left)",
                section=section, offset=self.pos)
        chunk = self.data[self.pos:self.pos + nbytes]
        self.pos += nbytes
        return chunk

    def unpack(self, fmt, section):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, section))

    def floats(self, count, section, dtype="<f4"):
        dt = np.dtype(dtype)
        raw = self.take(count * dt.itemsize, section)
        return np.frombuffer(raw, dtype=dt).astype(dt.newbyteorder("="))

    def finish(self):
        if self.pos != len(self.data):
            raise FormatError(f"{self.name}: {len(self.data) - self.pos} trailing bytes",
                              section="trailer", offset=self.pos)


def read_magic(reader, expected):
    magic = reader.take(len(expected), "magic")
    if magic != expected:
        raise FormatError(f"{reader.name}: bad magic {magic!r}, expected {expected!r}",
                          section="magic", offset=0)


def f32(arr):
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def f32_colmajor(mat):
    return np.asarray(mat, dtype="<f4").tobytes(order="F")
