"""Binary persistence for snapshot matrices, bases and reduced operators.

One record = header (magic, version, rows, cols, 16-byte tag) followed by the
matrix entries as column-major little-endian float64.  A file may hold several
records back to back; reading simply walks records until EOF.  Third-order
tensors are flattened to (d0, d1*d2) with the trailing dimension appended to
the tag after a '|', so a record is always self-describing.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

MAGIC = b"SWEOCP01"
VERSION = 1
_TAG_LEN = 16
_HEADER = struct.Struct("<8sIQQ16s")


class StorageError(IOError):
    pass


def _encode_tag(tag: str) -> bytes:
    raw = tag.encode("ascii")
    if len(raw) > _TAG_LEN:
        raise StorageError(f"tag {tag!r} longer than {_TAG_LEN} bytes")
    return raw.ljust(_TAG_LEN, b"\0")


def _pack(array: np.ndarray, tag: str) -> bytes:
    a = np.asarray(array, dtype="<f8")
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim == 3:
        tag = f"{tag}|{a.shape[2]}"
        a = a.reshape(a.shape[0], a.shape[1] * a.shape[2])
    if a.ndim != 2:
        raise StorageError(f"cannot store array of ndim {a.ndim}")
    header = _HEADER.pack(MAGIC, VERSION, a.shape[0], a.shape[1], _encode_tag(tag))
    return header + a.tobytes(order="F")


def _unpack(buf: bytes, offset: int) -> tuple[np.ndarray, str, int]:
    if len(buf) - offset < _HEADER.size:
        raise StorageError("truncated record header")
    magic, version, rows, cols, tag = _HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise StorageError(f"bad magic {magic!r}")
    if version != VERSION:
        raise StorageError(f"unsupported version {version}")
    tag = tag.rstrip(b"\0").decode("ascii")
    nbytes = 8 * rows * cols
    start = offset + _HEADER.size
    if len(buf) - start < nbytes:
        raise StorageError(f"truncated payload for record {tag!r}")
    a = np.frombuffer(buf[start:start + nbytes], dtype="<f8").reshape(
        (rows, cols), order="F").copy()
    if "|" in tag:
        tag, d2 = tag.rsplit("|", 1)
        d2 = int(d2)
        a = a.reshape(rows, cols // d2, d2)
    return a, tag, start + nbytes


def write_matrix(path, array: np.ndarray, tag: str) -> None:
    with open(path, "wb") as fh:
        fh.write(_pack(array, tag))


def read_matrix(path) -> tuple[np.ndarray, str]:
    with open(path, "rb") as fh:
        buf = fh.read()
    a, tag, end = _unpack(buf, 0)
    if end != len(buf):
        raise StorageError("trailing bytes after single-matrix record")
    return a, tag


def write_sections(path, sections: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        for tag, array in sections.items():
            fh.write(_pack(array, tag))


def read_sections(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        buf = fh.read()
    out = {}
    offset = 0
    while offset < len(buf):
        a, tag, offset = _unpack(buf, offset)
        if tag in out:
            raise StorageError(f"duplicate section tag {tag!r}")
        out[tag] = a
    return out


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]
