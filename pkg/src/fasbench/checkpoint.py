"""Self-describing binary container for named arrays plus JSON metadata.

Layout:  magic (8 bytes) | header length (uint64 LE) | canonical JSON header
| concatenated raw array bytes (little-endian, C order).

The header records format version, free-form metadata, and one entry per
array (name, dtype, shape, byte offset, byte length).  Canonical JSON
(sorted keys, no whitespace) plus fixed byte order makes files byte-stable:
identical contents always serialize to identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"FASCKPT\x01"
FORMAT_VERSION = 1


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_container(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Write named arrays and JSON-serializable metadata to `path`."""
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        blob = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        entries.append(
            {
                "name": name,
                "dtype": arr.dtype.str.replace(">", "<").replace("=", "<"),
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    header = _canonical_json(
        {"format_version": FORMAT_VERSION, "meta": meta, "arrays": entries}
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_container(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a container written by save_container -> (arrays, meta)."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[: len(MAGIC)] != MAGIC:
        raise DataError(f"{path} is not a checkpoint file (bad magic)")
    header_len = int.from_bytes(raw[len(MAGIC) : len(MAGIC) + 8], "little")
    body_start = len(MAGIC) + 8 + header_len
    header = json.loads(raw[len(MAGIC) + 8 : body_start])
    if header.get("format_version") != FORMAT_VERSION:
        raise DataError(
            f"{path}: unsupported checkpoint format version {header.get('format_version')}"
        )
    arrays = {}
    for entry in header["arrays"]:
        start = body_start + entry["offset"]
        blob = raw[start : start + entry["nbytes"]]
        arr = np.frombuffer(blob, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        arrays[entry["name"]] = arr.copy()
    return arrays, header["meta"]
