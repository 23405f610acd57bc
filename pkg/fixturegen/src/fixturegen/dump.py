"""Canonical tagged-JSON dumps of Python values.

These dumps are the ground-truth oracle the loader test suite compares
its reconstructed trees against, so the encoding must be unambiguous:

- floats as ``float.hex()`` strings (exact, no repr rounding)
- ints as decimal strings (JSON numbers would mangle bigints)
- bytes/bytearray as base64
- dicts as ordered ``[key, value]`` pair lists
- sets/frozensets sorted by the canonical JSON of their members

Sharing: list/tuple/dict nodes referenced more than once get an ``id``
on first encounter and ``{"t": "ref", "id": n}`` afterwards, numbered in
DFS pre-order. Only references from list items, tuple items and dict
*values* count; dict keys and set members are always dumped inline
(they can only hold immutables, so the inline dump is closed).
"""

import base64
import json
from collections import OrderedDict


def _b64(data) -> str:
    return base64.b64encode(bytes(data)).decode("ascii")


def _float_hex(x: float) -> str:
    return float(x).hex()


def _count_shared(root) -> set[int]:
    """ids of list/tuple/dict nodes reachable more than once."""
    counts: dict[int, int] = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if isinstance(node, (list, tuple)) or isinstance(node, dict):
            key = id(node)
            counts[key] = counts.get(key, 0) + 1
            if counts[key] > 1:
                continue
            if isinstance(node, dict):
                stack.extend(node.values())
            else:
                stack.extend(node)
    return {k for k, n in counts.items() if n > 1}


def _inline(node) -> dict:
    """Dump with no sharing ids; legal only for hashable immutables."""
    if node is None:
        return {"t": "none"}
    if isinstance(node, bool):
        return {"t": "bool", "v": node}
    if isinstance(node, int):
        return {"t": "int", "v": str(node)}
    if isinstance(node, float):
        return {"t": "float", "v": _float_hex(node)}
    if isinstance(node, complex):
        return {"t": "complex", "re": _float_hex(node.real), "im": _float_hex(node.imag)}
    if isinstance(node, str):
        return {"t": "str", "v": node}
    if isinstance(node, bytes):
        return {"t": "bytes", "v": _b64(node)}
    if isinstance(node, tuple):
        return {"t": "tuple", "v": [_inline(x) for x in node]}
    if isinstance(node, frozenset):
        return {"t": "frozenset", "v": _sorted_members(node)}
    raise TypeError(f"not an inline-dumpable value: {type(node).__name__}")


def _sorted_members(node) -> list[dict]:
    members = [_inline(x) for x in node]
    members.sort(key=lambda d: json.dumps(d, sort_keys=True, separators=(",", ":")))
    return members


def dump_value(root) -> dict:
    """Canonical dump of an arbitrary supported Python value."""
    shared = _count_shared(root)
    ids: dict[int, int] = {}

    def go(node):
        if isinstance(node, (list, tuple)) or isinstance(node, dict):
            key = id(node)
            if key in ids:
                return {"t": "ref", "id": ids[key]}
            out: dict = {}
            if key in shared:
                ids[key] = len(ids)
                out["id"] = ids[key]
            if isinstance(node, dict):
                out["t"] = "dict"
                out["v"] = [[_inline(k), go(v)] for k, v in node.items()]
            elif isinstance(node, list):
                out["t"] = "list"
                out["v"] = [go(x) for x in node]
            else:
                out["t"] = "tuple"
                out["v"] = [go(x) for x in node]
            # keep key order stable: id (if any), t, v
            return {k: out[k] for k in ("id", "t", "v") if k in out}
        if isinstance(node, set):
            return {"t": "set", "v": _sorted_members(node)}
        if isinstance(node, frozenset):
            return {"t": "frozenset", "v": _sorted_members(node)}
        if isinstance(node, bytearray):
            return {"t": "bytearray", "v": _b64(node)}
        return _inline(node)

    return go(root)


def dump_state_dict(tensors: "OrderedDict[str, tuple[str, tuple[int, ...], bytes]]") -> dict:
    """Oracle dump for a model container: name -> (dtype, shape, raw bytes).

    Bytes are the contiguous little-endian element encoding.
    """
    return {
        "kind": "state_dict",
        "tensors": [
            {"name": name, "dtype": dtype, "shape": list(shape), "data": _b64(data)}
            for name, (dtype, shape, data) in tensors.items()
        ],
    }


def dump_pickle_value(root) -> dict:
    return {"kind": "value", "root": dump_value(root)}
