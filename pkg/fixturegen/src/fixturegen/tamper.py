"""Tampered-weight variants of benign containers.

Simulates physical weight attacks (bit flips, LSB steganography) on the
tensor payloads. The ZIP is rewritten so entry CRCs stay valid: a real
weight attack leaves a well-formed file, only the weights change.
"""

import io
import random
import zipfile
from collections import OrderedDict

from .containers import write_zip


def _entries(container: bytes) -> "OrderedDict[str, bytes]":
    out: "OrderedDict[str, bytes]" = OrderedDict()
    with zipfile.ZipFile(io.BytesIO(container)) as zf:
        for name in zf.namelist():
            out[name] = zf.read(name)
    return out


def _storage_names(entries: "OrderedDict[str, bytes]") -> list[str]:
    return [n for n in entries if ("/data/" in n or n.startswith("data/")) and entries[n]]


def flip_one_bit(container: bytes, seed: int) -> tuple[bytes, dict]:
    """Flip a single seeded bit inside one storage entry."""
    entries = _entries(container)
    names = _storage_names(entries)
    rng = random.Random(seed)
    name = names[rng.randrange(len(names))]
    data = bytearray(entries[name])
    bit = rng.randrange(len(data) * 8)
    data[bit // 8] ^= 1 << (bit % 8)
    entries[name] = bytes(data)
    return write_zip(entries), {"method": "bit_flip", "entry": name, "bit_offset": bit}


def rewrite_lsb_plane(container: bytes, seed: int, element_size: int = 4) -> tuple[bytes, dict]:
    """Overwrite the least-significant bit of every element in one storage."""
    entries = _entries(container)
    names = _storage_names(entries)
    rng = random.Random(seed)
    name = names[rng.randrange(len(names))]
    data = bytearray(entries[name])
    n = len(data) // element_size
    for i in range(n):
        lsb_byte = i * element_size  # little-endian: lowest-order byte first
        payload_bit = rng.randrange(2)
        data[lsb_byte] = (data[lsb_byte] & 0xFE) | payload_bit
    entries[name] = bytes(data)
    return write_zip(entries), {"method": "lsb_plane", "entry": name, "elements": n}
