"""Tensor container files.

Layout: one UTF-8 JSON header line (format tag, free-form ``meta`` and the
tensor manifest) terminated by ``\\n``, followed by the little-endian float32
payload of every tensor in manifest order.
"""
import json

import numpy as np

from ..errors import ParseError, ValidationError

FORMAT = "kercnn-tensors"
VERSION = 1
_DTYPE = np.dtype("<f4")


def save_tensors(path, tensors, meta=None):
    manifest = []
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"tensor {name!r} contains non-finite values")
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": "float32"})
    header = {"format": FORMAT, "version": VERSION, "meta": meta or {}, "tensors": manifest}
    line = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(line + b"\n")
        for name in tensors:
            fh.write(np.ascontiguousarray(tensors[name], dtype=_DTYPE).tobytes())


def load_tensors(path):
    """Return ``(tensors, meta)``; tensors come back as float32 arrays."""
    with open(path, "rb") as fh:
        blob = fh.read()
    end = blob.find(b"\n")
    if end < 0:
        raise ParseError(f"{path}: missing header line", line=1)
    try:
        header = json.loads(blob[:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: bad header: {exc}", line=1,
                         offset=getattr(exc, "colno", None)) from None
    if not isinstance(header, dict) or header.get("format") != FORMAT:
        raise ParseError(f"{path}: not a {FORMAT} file", line=1)
    if header.get("version") != VERSION:
        raise ParseError(f"{path}: unsupported version {header.get('version')!r}", line=1)
    offset = end + 1
    tensors = {}
    for entry in header.get("tensors", []):
        try:
            name, shape = entry["name"], tuple(int(n) for n in entry["shape"])
        except (KeyError, TypeError, ValueError):
            raise ParseError(f"{path}: malformed manifest entry {entry!r}", line=1) from None
        if entry.get("dtype", "float32") != "float32":
            raise ParseError(f"{path}: tensor {name!r} has unsupported dtype {entry['dtype']!r}")
        count = int(np.prod(shape, dtype=np.int64))
        nbytes = count * _DTYPE.itemsize
        if offset + nbytes > len(blob):
            raise ParseError(f"{path}: payload truncated in tensor {name!r}", offset=offset)
        arr = np.frombuffer(blob, dtype=_DTYPE, count=count, offset=offset).reshape(shape)
        tensors[name] = arr.astype(np.float32)
        offset += nbytes
    if offset != len(blob):
        raise ParseError(f"{path}: {len(blob) - offset} trailing bytes", offset=offset)
    return tensors, header.get("meta", {})
