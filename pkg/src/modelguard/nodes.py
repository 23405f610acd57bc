"""The inert object tree produced by safe interpretation.

Plain Python values carry the data cases: None, bool, int, float,
complex, str, bytes, bytearray, list, tuple, dict, set, frozenset.
Everything the machine cannot (or must not) materialize becomes one of
the node classes below. Trees may contain shared and cyclic references;
every traversal in this module is iterative and id-aware.
"""

import base64
import json
from dataclasses import dataclass
from typing import Any

from .opcodes import OpcodeKind

PNode = Any  # union of the plain types above and the node classes below


@dataclass(frozen=True)
class GlobalRef:
    """A (module, name) import reference, never resolved to real code."""

    module: str
    name: str

    def fqn(self) -> str:
        return f"{self.module}.{self.name}"


@dataclass(frozen=True)
class BlockedEvent:
    callee_module: str
    callee_name: str
    arg_summary: str
    opcode: OpcodeKind
    offset: int
    rule: str

    def to_json(self) -> dict:
        return {
            "callee": f"{self.callee_module}.{self.callee_name}",
            "args": self.arg_summary,
            "opcode": self.opcode.name,
            "offset": self.offset,
            "rule": self.rule,
        }


@dataclass(eq=False)
class Reduced:
    """A call the policy allowed but no constructor hook materialized.

    built_state comes from BUILD; items_state absorbs SETITEMS/APPENDS
    aimed at the symbolic object (dict or list); kwargs from NEWOBJ_EX.
    """

    callee: GlobalRef
    args: tuple
    built_state: PNode = None
    items_state: "dict | list | None" = None
    kwargs: "dict | None" = None
    constructed: PNode = None  # set only by constructor hooks; normally the
    # hook's value replaces the node entirely, so this stays None


@dataclass(eq=False)
class Disarmed:
    """Placeholder left where a blocked call used to be."""

    blocked: BlockedEvent


@dataclass(eq=False)
class PersistentRef:
    """PERSID/BINPERSID with no resolver registered."""

    pid: PNode


@dataclass(frozen=True)
class MemoBackRef:
    """Back-reference marker used in canonical dumps of shared subtrees."""

    ref_id: int


_CONTAINERS = (list, tuple, dict)


def iter_children(node: PNode):
    if isinstance(node, list) or isinstance(node, tuple):
        yield from node
    elif isinstance(node, dict):
        yield from node.values()
    elif isinstance(node, Reduced):
        yield from node.args
        if node.built_state is not None:
            yield node.built_state
        if node.items_state is not None:
            yield node.items_state
        if node.kwargs is not None:
            yield node.kwargs
    elif isinstance(node, PersistentRef):
        yield node.pid


def walk(root: PNode):
    """Every node reachable from root, visiting shared nodes once."""
    seen: set[int] = set()
    stack = [root]
    while stack:
        node = stack.pop()
        if isinstance(node, (list, tuple, dict, Reduced, PersistentRef)):
            if id(node) in seen:
                continue
            seen.add(id(node))
        yield node
        stack.extend(iter_children(node))


def tree_depth(root: PNode) -> int:
    """Max container nesting depth, cycle-safe (cycles count once)."""
    depths: dict[int, int] = {}

    def children(n):
        return list(iter_children(n))

    stack: list[tuple[PNode, int]] = [(root, 0)]
    best = 1
    on_path: set[int] = set()
    while stack:
        node, state = stack.pop()
        if not isinstance(node, (list, tuple, dict, Reduced, PersistentRef)):
            continue
        key = id(node)
        if state == 0:
            if key in depths or key in on_path:
                continue
            on_path.add(key)
            stack.append((node, 1))
            for c in children(node):
                stack.append((c, 0))
        else:
            on_path.discard(key)
            d = 1 + max(
                (depths.get(id(c), 1 if isinstance(c, (list, tuple, dict, Reduced, PersistentRef)) else 0))
                for c in children(node)
            ) if children(node) else 1
            depths[key] = d
            best = max(best, d)
    return best


def contains_disarmed(root: PNode) -> bool:
    return any(isinstance(n, Disarmed) for n in walk(root))


def blocked_globals(root: PNode, is_blocked) -> "list[GlobalRef]":
    return [n for n in walk(root) if isinstance(n, GlobalRef) and is_blocked(n)]


# --- canonical dumps ---------------------------------------------------------
# The tagged-JSON format shared with the fixture corpus oracles: leaves are
# dumped inline; list/tuple/dict nodes referenced more than once get an "id"
# at first encounter and {"t": "ref"} afterwards; dict keys and set members
# are always inline. TensorSpec values (from torch_container) dump as tensors.


def _b64(data) -> str:
    return base64.b64encode(bytes(data)).decode("ascii")


def _shared_ids(root: PNode) -> set[int]:
    counts: dict[int, int] = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if isinstance(node, _CONTAINERS):
            key = id(node)
            counts[key] = counts.get(key, 0) + 1
            if counts[key] > 1:
                continue
            if isinstance(node, dict):
                stack.extend(node.values())
            else:
                stack.extend(node)
    return {k for k, v in counts.items() if v > 1}


def _dump_inline(node: PNode) -> dict:
    if node is None:
        return {"t": "none"}
    if isinstance(node, bool):
        return {"t": "bool", "v": node}
    if isinstance(node, int):
        return {"t": "int", "v": str(node)}
    if isinstance(node, float):
        return {"t": "float", "v": node.hex()}
    if isinstance(node, complex):
        return {"t": "complex", "re": node.real.hex(), "im": node.imag.hex()}
    if isinstance(node, str):
        return {"t": "str", "v": node}
    if isinstance(node, bytes):
        return {"t": "bytes", "v": _b64(node)}
    if isinstance(node, tuple):
        return {"t": "tuple", "v": [_dump_inline(x) for x in node]}
    if isinstance(node, frozenset):
        return {"t": "frozenset", "v": _sorted_members(node)}
    raise TypeError(f"cannot dump {type(node).__name__} inline")


def _sorted_members(node) -> list[dict]:
    members = [_dump_inline(x) for x in node]
    members.sort(key=lambda d: json.dumps(d, sort_keys=True, separators=(",", ":")))
    return members


def to_canonical_dump(root: PNode) -> dict:
    """Convert a loaded tree to the corpus oracle dump format."""
    from .container import TensorSpec  # local import to avoid a cycle

    shared = _shared_ids(root)
    ids: dict[int, int] = {}

    def go(node: PNode) -> dict:
        if isinstance(node, _CONTAINERS):
            key = id(node)
            if key in ids:
                return {"t": "ref", "id": ids[key]}
            out: dict = {}
            if key in shared:
                ids[key] = len(ids)
                out["id"] = ids[key]
            if isinstance(node, dict):
                out["t"] = "dict"
                out["v"] = [[_dump_inline(k), go(v)] for k, v in node.items()]
            elif isinstance(node, list):
                out["t"] = "list"
                out["v"] = [go(x) for x in node]
            else:
                out["t"] = "tuple"
                out["v"] = [go(x) for x in node]
            return {k: out[k] for k in ("id", "t", "v") if k in out}
        if isinstance(node, set):
            return {"t": "set", "v": _sorted_members(node)}
        if isinstance(node, frozenset):
            return {"t": "frozenset", "v": _sorted_members(node)}
        if isinstance(node, bytearray):
            return {"t": "bytearray", "v": _b64(node)}
        if isinstance(node, TensorSpec):
            return {
                "t": "tensor",
                "dtype": node.dtype.name,
                "shape": list(node.shape),
                "v": _b64(node.data),
            }
        if isinstance(node, GlobalRef):
            return {"t": "global", "module": node.module, "name": node.name}
        if isinstance(node, Reduced):
            out = {
                "t": "reduce",
                "callee": {"module": node.callee.module, "name": node.callee.name},
                "args": go(tuple(node.args)),
                "state": go(node.built_state) if node.built_state is not None else None,
            }
            if node.items_state is not None:
                out["items"] = go(node.items_state)
            return out
        if isinstance(node, Disarmed):
            return {"t": "disarmed", "callee": f"{node.blocked.callee_module}.{node.blocked.callee_name}"}
        if isinstance(node, PersistentRef):
            return {"t": "persistent", "pid": go(node.pid)}
        return _dump_inline(node)

    return go(root)


def structural_equal(a: PNode, b: PNode) -> bool:
    """Order-sensitive deep equality that terminates on cyclic trees."""
    done: set[tuple[int, int]] = set()
    stack: list[tuple[PNode, PNode]] = [(a, b)]
    while stack:
        x, y = stack.pop()
        pair = (id(x), id(y))
        if pair in done:
            continue
        tx = type(x) if not isinstance(x, dict) else dict
        ty = type(y) if not isinstance(y, dict) else dict
        if isinstance(x, (list, tuple)) and isinstance(y, (list, tuple)) and tx is ty:
            if len(x) != len(y):
                return False
            done.add(pair)
            stack.extend(zip(x, y))
        elif isinstance(x, dict) and isinstance(y, dict):
            if len(x) != len(y) or list(x.keys()) != list(y.keys()):
                return False
            done.add(pair)
            stack.extend(zip(x.values(), y.values()))
        elif isinstance(x, Reduced) and isinstance(y, Reduced):
            if x.callee != y.callee:
                return False
            done.add(pair)
            stack.append((x.args, y.args))
            stack.append((x.built_state, y.built_state))
            stack.append((x.items_state, y.items_state))
            stack.append((x.kwargs, y.kwargs))
        elif isinstance(x, float) and isinstance(y, float):
            if x.hex() != y.hex() and not (x != x and y != y):
                return False
        else:
            if type(x) is not type(y) or x != y:
                return False
    return True
