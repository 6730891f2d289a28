"""Self-describing binary container used for checkpoints and ensembles.

Layout::

    b"TBGBIN\\n" | u32 version | u64 header length | header (UTF-8 JSON) | payload

The header lists every array (name, dtype, shape, byte offset) and the
SHA-256 of the payload.  Serialisation is canonical (sorted JSON keys,
little-endian arrays), so equal content gives byte-identical files.
"""
from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from ..errors import IntegrityError, ParseError, VersionError
from .atomic import atomic_write_bytes

MAGIC = b"TBGBIN\n"
VERSION = 1


def encode(kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    chunks = []
    table = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder not in ("|", "<") else arr.dtype
        raw = arr.astype(dt, copy=False).tobytes()
        table.append({"name": name, "dtype": dt.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "kind": kind,
        "meta": meta,
        "arrays": table,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<IQ", VERSION, len(hbytes)) + hbytes + payload


def decode(data: bytes, kind: str | None = None):
    if not data.startswith(MAGIC):
        raise ParseError("not a tbg binary file (bad magic)")
    pos = len(MAGIC)
    if len(data) < pos + 12:
        raise IntegrityError("truncated header")
    version, hlen = struct.unpack("<IQ", data[pos : pos + 12])
    if version != VERSION:
        raise VersionError(f"binary format version {version} unsupported")
    pos += 12
    try:
        header = json.loads(data[pos : pos + hlen])
    except ValueError as exc:
        raise ParseError(f"corrupt header: {exc}") from None
    if kind is not None and header["kind"] != kind:
        raise ParseError(f"expected a {kind} file, found {header['kind']}")
    payload = data[pos + hlen :]
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise IntegrityError("payload hash mismatch")
    arrays = {}
    for entry in header["arrays"]:
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()
    return header["meta"], arrays


def write(path, kind: str, meta: dict, arrays: dict) -> bytes:
    data = encode(kind, meta, arrays)
    atomic_write_bytes(path, data)
    return data


def read(path, kind: str | None = None):
    with open(path, "rb") as fh:
        return decode(fh.read(), kind)


def file_hash(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
