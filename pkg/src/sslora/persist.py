"""Binary tensor container and atomic file helpers.

Layout (all integers little-endian)::

    b"SSLW" | version: u32 | header_len: u64 | header: UTF-8 JSON | payload

The header maps each tensor name to ``{"shape", "dtype", "offset",
"length"}`` with offsets relative to the start of the payload. An optional
``"__metadata__"`` entry holds a flat string-to-string map.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import SsloraError

MAGIC = b"SSLW"
VERSION = 1
METADATA_KEY = "__metadata__"
_PREFIX = struct.Struct("<4sIQ")
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_DTYPE_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}


class ContainerError(SsloraError, ValueError):
    code = "container_error"


class BadMagicError(ContainerError):
    code = "bad_magic"


class BadVersionError(ContainerError):
    code = "bad_version"


class HeaderError(ContainerError):
    """Header truncated, not valid JSON, or with an invalid tensor entry."""

    code = "bad_header"


class OverlapError(ContainerError):
    code = "overlap"


class PayloadError(ContainerError):
    """Payload shorter (truncated) or longer than the header declares."""

    code = "bad_payload"


@dataclass
class TensorContainer:
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)


def write(container: TensorContainer) -> bytes:
    header: dict = {}
    chunks = []
    offset = 0
    for name in sorted(container.tensors):
        if name == METADATA_KEY:
            raise ContainerError(f"tensor name {METADATA_KEY!r} is reserved")
        arr = np.asarray(container.tensors[name])
        dtype_name = _DTYPE_NAMES.get(arr.dtype)
        if dtype_name is None:
            raise ContainerError(f"tensor {name}: unsupported dtype {arr.dtype}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[dtype_name]).tobytes()
        header[name] = {"shape": list(arr.shape), "dtype": dtype_name,
                        "offset": offset, "length": len(raw)}
        chunks.append(raw)
        offset += len(raw)
    if container.metadata:
        header[METADATA_KEY] = {str(k): str(v) for k, v in container.metadata.items()}
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(head)) + head + b"".join(chunks)


def read(data: bytes) -> TensorContainer:
    """Parse container bytes; every malformed input raises a ContainerError subclass."""
    if data[:4] != MAGIC[:min(len(data), 4)]:
        raise BadMagicError("not an SSLW container")
    if len(data) < _PREFIX.size:
        raise HeaderError(f"file too short for prefix ({len(data)} bytes)")
    _, version, head_len = _PREFIX.unpack_from(data)
    if version != VERSION:
        raise BadVersionError(f"unsupported container version {version}")
    start = _PREFIX.size + head_len
    if len(data) < start:
        raise HeaderError(f"header truncated: need {start} bytes, have {len(data)}")
    try:
        header = json.loads(data[_PREFIX.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderError(f"header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise HeaderError("header must be a JSON object")
    metadata = header.pop(METADATA_KEY, {})
    if not isinstance(metadata, dict):
        raise HeaderError("metadata must be an object")

    spans = []
    for name, entry in header.items():
        try:
            shape = tuple(int(n) for n in entry["shape"])
            dtype = _DTYPES[entry["dtype"]]
            off, length = int(entry["offset"]), int(entry["length"])
        except (KeyError, TypeError, ValueError) as exc:
            raise HeaderError(f"tensor {name}: bad header entry") from exc
        if any(n < 0 for n in shape) or off < 0 or length < 0:
            raise HeaderError(f"tensor {name}: negative shape, offset or length")
        if int(np.prod(shape, dtype=np.int64)) * dtype.itemsize != length:
            raise HeaderError(f"tensor {name}: shape {shape} does not match length {length}")
        spans.append((off, off + length, name, shape, dtype))
    spans.sort()
    for prev, cur in zip(spans, spans[1:]):
        if cur[0] < prev[1]:
            raise OverlapError(f"tensors {prev[2]} and {cur[2]} overlap")
    payload_len = len(data) - start
    end = spans[-1][1] if spans else 0
    if payload_len < end:
        raise PayloadError(f"payload truncated: need {end} bytes, have {payload_len}")
    if payload_len > end:
        raise PayloadError(f"{payload_len - end} unexpected trailing bytes")

    tensors = {}
    for off, stop, name, shape, dtype in spans:
        arr = np.frombuffer(data, dtype=dtype, count=(stop - off) // dtype.itemsize,
                            offset=start + off)
        tensors[name] = arr.astype(dtype.newbyteorder("="), copy=True).reshape(shape)
    return TensorContainer(tensors=tensors, metadata={str(k): str(v) for k, v in metadata.items()})


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
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


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def save(path: str | os.PathLike, tensors: Mapping[str, np.ndarray],
         metadata: Mapping[str, str] | None = None) -> None:
    atomic_write_bytes(path, write(TensorContainer(dict(tensors), dict(metadata or {}))))


def load(path: str | os.PathLike) -> TensorContainer:
    return read(Path(path).read_bytes())


def save_json(path: str | os.PathLike, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")
