"""Parameter checkpoint files.

Layout: 4-byte magic, uint32 little-endian header length, UTF-8 JSON header,
then a flat payload of little-endian 32-bit floats. The header records layer
names, shapes, byte offsets, arbitrary metadata, and a CRC32 of the payload.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"TPCK"
FORMAT_VERSION = 1


class ChecksumMismatch(ValueError):
    """Checkpoint header is inconsistent with the payload."""


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named float arrays plus JSON metadata to a checkpoint file."""
    path = Path(path)
    entries = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append(
            {"name": name, "shape": list(np.asarray(arr).shape), "offset": offset,
             "nbytes": len(data)}
        )
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)
    header = {
        "format": "trusspose-checkpoint",
        "version": FORMAT_VERSION,
        "dtype": "<f4",
        "tensors": entries,
        "payload_nbytes": len(payload),
        "payload_crc32": zlib.crc32(payload),
        "meta": meta or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def load_checkpoint(path):
    """Read a checkpoint; returns (tensors dict, meta dict).

    Raises ChecksumMismatch when the header disagrees with the payload
    (bad magic, truncated payload, offset overlap, or CRC failure).
    """
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ChecksumMismatch(f"{path}: bad magic {magic!r}")
        (header_len,) = struct.unpack("<I", fh.read(4))
        try:
            header = json.loads(fh.read(header_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ChecksumMismatch(f"{path}: unreadable header: {exc}") from exc
        payload = fh.read()

    if header.get("payload_nbytes") != len(payload):
        raise ChecksumMismatch(
            f"{path}: payload is {len(payload)} bytes, header says "
            f"{header.get('payload_nbytes')}"
        )
    if zlib.crc32(payload) != header.get("payload_crc32"):
        raise ChecksumMismatch(f"{path}: payload CRC32 mismatch")

    tensors = {}
    for entry in header["tensors"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        if start < 0 or start + nbytes > len(payload):
            raise ChecksumMismatch(f"{path}: tensor {entry['name']!r} offset out of range")
        flat = np.frombuffer(payload[start : start + nbytes], dtype="<f4")
        expected = int(np.prod(entry["shape"])) if entry["shape"] else 1
        if flat.size != expected:
            raise ChecksumMismatch(
                f"{path}: tensor {entry['name']!r} has {flat.size} values, "
                f"shape {entry['shape']} needs {expected}"
            )
        tensors[entry["name"]] = flat.reshape(entry["shape"]).copy()
    return tensors, header.get("meta", {})
