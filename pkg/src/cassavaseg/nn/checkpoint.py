"""Tensor container file.

Layout: an 8-byte little-endian header length, the UTF-8 JSON header
``{"format_version": 1, "tensors": [{"name", "shape", "offset"}, ...]}``,
then the little-endian float32 payloads. Offsets count bytes from the start
of the payload section.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

FORMAT_VERSION = 1


def dumps(tensors: Mapping[str, np.ndarray]) -> bytes:
    entries, chunks, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.require(tensors[name], dtype="<f4", requirements="C")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunk = arr.tobytes()
        chunks.append(chunk)
        offset += len(chunk)
    header = json.dumps({"format_version": FORMAT_VERSION, "tensors": entries},
                        separators=(",", ":")).encode("utf-8")
    return struct.pack("<Q", len(header)) + header + b"".join(chunks)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < 8:
        raise ValueError("checkpoint truncated")
    (hlen,) = struct.unpack("<Q", blob[:8])
    header = json.loads(blob[8:8 + hlen].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('format_version')}")
    payload = memoryview(blob)[8 + hlen:]
    out = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        arr = np.frombuffer(payload[start:start + 4 * count], dtype="<f4").astype(np.float32)
        out[entry["name"]] = arr.reshape(entry["shape"])
    return out


def save(tensors: Mapping[str, np.ndarray], path: str | Path) -> None:
    Path(path).write_bytes(dumps(tensors))


def load(path: str | Path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
