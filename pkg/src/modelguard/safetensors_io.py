"""Minimal safetensors writer/reader.

Layout: 8-byte little-endian header length, a JSON header mapping
tensor name -> {dtype, shape, data_offsets}, then tightly packed tensor
bytes in header order. The header is padded with spaces to an 8-byte
multiple, matching the reference implementation. Offsets are exact and
gapless; nothing here can carry code.
"""

import json
import struct
from dataclasses import dataclass

MAX_HEADER = 100 * 1024 * 1024  # same guard the reference reader uses

ST_DTYPES = {
    "f16": "F16", "f32": "F32", "f64": "F64", "bf16": "BF16",
    "i8": "I8", "i16": "I16", "i32": "I32", "i64": "I64",
    "u8": "U8", "bool": "BOOL",
}
ST_DTYPES_REVERSE = {v: k for k, v in ST_DTYPES.items()}


class SafetensorsError(ValueError):
    pass


@dataclass(frozen=True)
class RawTensor:
    name: str
    dtype: str  # internal dtype name (f32, bf16, ...)
    shape: "tuple[int, ...]"
    data: bytes


def serialize(tensors: "list[RawTensor]", metadata: "dict[str, str] | None" = None) -> bytes:
    header: dict = {}
    if metadata:
        header["__metadata__"] = dict(metadata)
    offset = 0
    seen = set()
    for t in tensors:
        if t.name in seen:
            raise SafetensorsError(f"duplicate tensor name {t.name!r}")
        seen.add(t.name)
        if t.dtype not in ST_DTYPES:
            raise SafetensorsError(f"dtype {t.dtype!r} has no safetensors encoding")
        end = offset + len(t.data)
        header[t.name] = {
            "dtype": ST_DTYPES[t.dtype],
            "shape": list(t.shape),
            "data_offsets": [offset, end],
        }
        offset = end
    raw = json.dumps(header, separators=(",", ":")).encode("utf-8")
    if len(raw) % 8:
        raw += b" " * (8 - len(raw) % 8)
    out = bytearray(struct.pack("<Q", len(raw)))
    out += raw
    for t in tensors:
        out += t.data
    return bytes(out)


def deserialize(data: bytes) -> "tuple[list[RawTensor], dict[str, str]]":
    """Tensors in header order plus the metadata map."""
    if len(data) < 8:
        raise SafetensorsError("shorter than the length prefix")
    (hlen,) = struct.unpack_from("<Q", data, 0)
    if hlen > MAX_HEADER or 8 + hlen > len(data):
        raise SafetensorsError(f"header length {hlen} out of bounds")
    try:
        header = json.loads(data[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SafetensorsError(f"bad header: {exc}")
    if not isinstance(header, dict):
        raise SafetensorsError("header is not an object")
    metadata = header.pop("__metadata__", {}) or {}
    payload = data[8 + hlen :]
    tensors: list[RawTensor] = []
    expected = 0
    for name, spec in header.items():
        try:
            dtype = ST_DTYPES_REVERSE[spec["dtype"]]
            shape = tuple(int(x) for x in spec["shape"])
            begin, end = (int(x) for x in spec["data_offsets"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SafetensorsError(f"bad tensor entry {name!r}: {exc}")
        if begin != expected or end < begin or end > len(payload):
            raise SafetensorsError(f"tensor {name!r} offsets [{begin},{end}) not gapless in bounds")
        expected = end
        tensors.append(RawTensor(name, dtype, shape, bytes(payload[begin:end])))
    if expected != len(payload):
        raise SafetensorsError(f"{len(payload) - expected} trailing payload bytes")
    return tensors, metadata
