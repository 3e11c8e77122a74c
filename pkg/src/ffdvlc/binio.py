"""Little-endian binary helpers shared by the checkpoint, dataset and MMSE
file formats.

Arrays are written as ``u32 rank``, ``rank x u32`` dimensions, then the
elements in C order.
"""

import struct

import numpy as np

from .utils import FormatError


class BinaryWriter:
    def __init__(self):
        self.chunks = []

    def raw(self, data):
        self.chunks.append(bytes(data))

    def u32(self, value):
        self.chunks.append(struct.pack("<I", int(value)))

    def f64(self, value):
        self.chunks.append(struct.pack("<d", float(value)))

    def array(self, arr, dtype="<f4"):
        arr = np.asarray(arr)
        self.u32(arr.ndim)
        for dim in arr.shape:
            self.u32(dim)
        self.chunks.append(np.ascontiguousarray(arr, dtype=dtype).tobytes())

    def getvalue(self):
        return b"".join(self.chunks)


class BinaryReader:
    def __init__(self, data, source="<bytes>"):
        self.data = data
        self.pos = 0
        self.source = source

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.source}: truncated file")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def expect_magic(self, magic):
        found = self.take(len(magic))
        if found != magic:
            raise FormatError(
                f"{self.source}: bad magic {found!r}, expected {magic!r}"
            )

    def expect_version(self, version):
        found = self.u32()
        if found != version:
            raise FormatError(
                f"{self.source}: unsupported format version {found},"
                f" expected {version}"
            )

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def f64(self):
        return struct.unpack("<d", self.take(8))[0]

    def array(self, dtype="<f4", max_rank=8):
        rank = self.u32()
        if rank > max_rank:
            raise FormatError(f"{self.source}: implausible array rank {rank}")
        shape = tuple(self.u32() for _ in range(rank))
        dtype = np.dtype(dtype)
        count = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(self.take(count * dtype.itemsize), dtype=dtype)
        return data.reshape(shape).astype(dtype.newbyteorder("="))

    def finish(self):
        if self.pos != len(self.data):
            raise FormatError(
                f"{self.source}: {len(self.data) - self.pos} trailing bytes"
            )


__all__ = ["BinaryReader", "BinaryWriter"]
