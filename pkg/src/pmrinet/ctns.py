"""Binary tensor file format "CTNS".

Layout (all integers little-endian):

    bytes 0..3   magic  43 54 4E 53  ("CTNS")
    u32          version, must be 1
    u32          ndim
    ndim x u64   extents
    payload      interleaved IEEE-754 little-endian (real, imag) float64 pairs,
                 row-major order

Readers reject wrong magic, unsupported versions and truncated payloads.
"""

import struct

import numpy as np

MAGIC = b"CTNS"
VERSION = 1


class FormatError(ValueError):
    """Malformed CTNS container."""


def write_ctns(path, array):
    """Write a complex array to ``path`` in CTNS format (always float64 pairs)."""
    arr = np.ascontiguousarray(np.asarray(array), dtype=np.complex128)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.astype("<c16").tobytes())


def read_ctns(path):
    """Read a CTNS file back into a complex128 array."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r} at offset 0")
    if len(data) < 12:
        raise FormatError(f"{path}: truncated header at offset {len(data)}")
    version, ndim = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version} at offset 4")
    off = 12
    if len(data) < off + 8 * ndim:
        raise FormatError(f"{path}: truncated extents at offset {len(data)}")
    shape = struct.unpack_from(f"<{ndim}Q", data, off)
    off += 8 * ndim
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    need = off + 16 * count
    if len(data) != need:
        raise FormatError(f"{path}: payload length {len(data) - off} != {16 * count} at offset {off}")
    arr = np.frombuffer(data, dtype="<c16", count=count, offset=off)
    return arr.reshape(shape).astype(np.complex128)
