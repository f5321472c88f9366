"""Manifest + raw buffer container shared by models and patch sets.

A container is two files: a JSON manifest at ``path`` and a buffer at
``path`` with its suffix replaced by ``.bin``. The buffer is a concatenation
of little-endian float32 arrays, each stored row-major. The manifest records,
per named array, its shape and byte offset, plus the buffer length and its
CRC-32.
"""
import json
import os
import tempfile
import zlib
from pathlib import Path

import numpy as np

from .errors import ChecksumError, FormatError, TruncatedBufferError, VersionMismatchError

FORMAT_VERSION = 1
_LE_F32 = np.dtype("<f4")


def buffer_path(path):
    path = Path(path)
    bpath = path.with_suffix(".bin")
    return bpath if bpath != path else path.with_name(path.name + ".bin")


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def pack(arrays):
    """Return ``(buffer bytes, {name: {"shape", "offset"}})`` for named arrays."""
    chunks, index, offset = [], {}, 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype=_LE_F32)
        raw = data.tobytes()
        index[name] = {"shape": list(data.shape), "offset": offset}
        chunks.append(raw)
        offset += len(raw)
    return b"".join(chunks), index


def write_container(path, kind, body, arrays):
    path = Path(path)
    buf, index = pack(arrays)
    bpath = buffer_path(path)
    manifest = {
        "format": kind,
        "version": FORMAT_VERSION,
        "dtype": "float32",
        "byte_order": "little",
        "buffer": {"file": bpath.name, "length": len(buf), "crc32": zlib.crc32(buf)},
        "arrays": index,
        **body,
    }
    # Buffer first: a manifest never points at a buffer that is not fully written.
    atomic_write_bytes(bpath, buf)
    atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_container(path, kind):
    path = Path(path)
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable manifest: {exc}") from exc
    if not isinstance(manifest, dict) or manifest.get("format") != kind:
        raise FormatError(f"{path}: not a {kind} manifest")
    if manifest.get("version") != FORMAT_VERSION:
        raise VersionMismatchError(
            f"{path}: format version {manifest.get('version')!r}, expected {FORMAT_VERSION}"
        )
    try:
        info = manifest["buffer"]
        bpath = path.with_name(info["file"])
        length = int(info["length"])
        crc = int(info["crc32"])
        index = manifest["arrays"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed manifest: {exc}") from exc
    try:
        buf = bpath.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read buffer {bpath}: {exc}") from exc
    if len(buf) < length:
        raise TruncatedBufferError(f"{bpath}: {len(buf)} bytes, manifest declares {length}")
    buf = buf[:length]
    if zlib.crc32(buf) != crc:
        raise ChecksumError(f"{bpath}: CRC-32 mismatch")
    arrays = {}
    for name, entry in index.items():
        shape = tuple(int(s) for s in entry["shape"])
        start = int(entry["offset"])
        count = int(np.prod(shape, dtype=np.int64))
        stop = start + 4 * count
        if start < 0 or stop > length:
            raise TruncatedBufferError(f"{path}: array {name!r} runs past the buffer end")
        arrays[name] = np.frombuffer(buf, dtype=_LE_F32, count=count, offset=start).reshape(shape).astype(np.float32)
    return manifest, arrays
