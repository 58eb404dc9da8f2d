"""Single-file parameter serialisation.

Layout: 4-byte magic ``AFNP``, little-endian u32 header length, UTF-8 JSON
header, then every array as little-endian float32 in header order. The
header lists layers (module path, kind, arrays with shapes); trainable
parameters come before buffers within a layer.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .layers import Module

MAGIC = b"AFNP"


def _layer_entries(module: Module):
    for path, m in module.named_modules():
        arrays = [(k, v, "param") for k, v in m.params.items()]
        arrays += [(k, v, "buffer") for k, v in m.buffers.items()]
        if arrays:
            yield path, type(m).__name__, arrays


def header_of(module: Module) -> dict:
    return {
        "layers": [
            {
                "name": path,
                "kind": kind,
                "arrays": [{"name": k, "role": role, "shape": list(v.shape)} for k, v, role in arrays],
            }
            for path, kind, arrays in _layer_entries(module)
        ]
    }


def dumps(module: Module) -> bytes:
    header = json.dumps(header_of(module), sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", len(header)), header]
    for _, _, arrays in _layer_entries(module):
        for _, v, _ in arrays:
            chunks.append(np.ascontiguousarray(v, dtype="<f4").tobytes())
    return b"".join(chunks)


def save(module: Module, path) -> None:
    Path(path).write_bytes(dumps(module))


def read_header(path) -> dict:
    raw = Path(path).read_bytes()
    return _parse(raw)[0]


def _parse(raw: bytes):
    if raw[:4] != MAGIC:
        raise ValueError("not a parameter file (bad magic)")
    (n,) = struct.unpack_from("<I", raw, 4)
    header = json.loads(raw[8:8 + n].decode("utf-8"))
    return header, 8 + n


def loads(module: Module, raw: bytes) -> None:
    """Copy arrays from ``raw`` into ``module``; architectures must match."""
    header, offset = _parse(raw)
    expected = header_of(module)
    if header != expected:
        raise ValueError("parameter file does not match the model architecture")
    for _, _, arrays in _layer_entries(module):
        for _, v, _ in arrays:
            count = v.size
            data = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
            v[...] = data.reshape(v.shape).astype(v.dtype)
            offset += 4 * count
    if offset != len(raw):
        raise ValueError("trailing bytes in parameter file")


def load(module: Module, path) -> None:
    loads(module, Path(path).read_bytes())
