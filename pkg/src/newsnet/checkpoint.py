"""Versioned binary checkpoint container.

Layout: 4-byte magic, uint32 format version, uint32 manifest length, the
manifest as UTF-8 JSON, then one raw little-endian float64 payload per
tensor in manifest order.  Writing is fully deterministic (tensor entries
are sorted by name), so identical state produces identical bytes and a
reload is byte-exact.
"""

import json
import struct

import numpy as np

from .errors import DataError

MAGIC = b"NNC1"
VERSION = 1


def save_checkpoint(path, tensors, meta=None):
    """Write a name->ndarray mapping plus JSON-serializable metadata."""
    names = sorted(tensors)
    manifest = {
        "version": VERSION,
        "meta": meta or {},
        "tensors": [
            {"name": n, "shape": list(tensors[n].shape), "dtype": "<f8"}
            for n in names
        ],
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(tensors[n], dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read back (tensors, meta); inverse of :func:`save_checkpoint`."""
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise DataError(f"cannot open checkpoint {path}: {exc}") from exc
    with fh:
        if fh.read(4) != MAGIC:
            raise DataError(f"{path} is not a checkpoint file")
        version, manifest_len = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        manifest = json.loads(fh.read(manifest_len).decode("utf-8"))
        tensors = {}
        for entry in manifest["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(8 * count)
            if len(raw) != 8 * count:
                raise DataError(f"truncated payload for tensor {entry['name']!r}")
            tensors[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        trailing = fh.read(1)
        if trailing:
            raise DataError("trailing bytes after final tensor payload")
    return tensors, manifest["meta"]
