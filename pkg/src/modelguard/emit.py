"""Re-serialization of loaded trees into clean pickle streams.

Only data opcodes are emitted, plus GLOBAL/REDUCE for calls the given
ruleset allows (reconstruction calls, data constructors). Mutable
containers are memoized before they are filled, so shared subtrees and
cycles survive a round trip. Disarmed placeholders must be stripped by
the caller first.
"""

import struct
import sys

from .container import StorageHandle, TensorSpec
from .nodes import Disarmed, GlobalRef, PersistentRef, Reduced
from .opcodes import OpcodeKind as K
from .policy import Ruleset, check_call

BATCH = 1000


class EmitError(ValueError):
    pass


class UnsupportedNode(EmitError):
    pass


class DisarmedPresent(EmitError):
    pass


def _op(kind: K) -> bytes:
    return bytes([kind.value])


def _encode_long(x: int) -> bytes:
    if x == 0:
        return b""
    nbytes = (x.bit_length() >> 3) + 1
    raw = x.to_bytes(nbytes, "little", signed=True)
    if x < 0 and nbytes > 1 and raw[-1] == 0xFF and (raw[-2] & 0x80) != 0:
        raw = raw[:-1]
    return raw


def _children(node):
    if isinstance(node, dict):
        for k, v in node.items():
            yield k
            yield v
    elif isinstance(node, (list, tuple, set, frozenset)):
        yield from node
    elif isinstance(node, Reduced):
        yield from node.args
        for extra in (node.built_state, node.items_state, node.kwargs):
            if extra is not None:
                yield extra
    elif isinstance(node, PersistentRef):
        yield node.pid


_SHAREABLE = (list, tuple, dict, set, frozenset, Reduced)


def _shared_ids(root) -> "set[int]":
    counts: dict[int, int] = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if isinstance(node, _SHAREABLE):
            key = id(node)
            counts[key] = counts.get(key, 0) + 1
            if counts[key] > 1:
                continue
        stack.extend(_children(node))
    return {k for k, v in counts.items() if v > 1}


class _Emitter:
    def __init__(self, protocol: int, ruleset: Ruleset, shared: "set[int]"):
        self.protocol = protocol
        self.ruleset = ruleset
        self.shared = shared
        self.out = bytearray()
        # id -> (index, node); holding the node keeps its id from being
        # recycled for a later temporary (the same trick the reference
        # pickler's memo uses)
        self.memo: "dict[int, tuple[int, object]]" = {}

    # --- memo ---------------------------------------------------------------

    def _memoize(self, node) -> None:
        index = len(self.memo)
        self.memo[id(node)] = (index, node)
        if self.protocol >= 4:
            self.out += _op(K.MEMOIZE)
        elif index < 256:
            self.out += _op(K.BINPUT) + struct.pack("<B", index)
        else:
            self.out += _op(K.LONG_BINPUT) + struct.pack("<I", index)

    def _get(self, index: int) -> None:
        if index < 256:
            self.out += _op(K.BINGET) + struct.pack("<B", index)
        else:
            self.out += _op(K.LONG_BINGET) + struct.pack("<I", index)

    # --- leaves ---------------------------------------------------------------

    def _emit_int(self, x: int) -> None:
        if 0 <= x <= 0xFF:
            self.out += _op(K.BININT1) + struct.pack("<B", x)
        elif 0x100 <= x <= 0xFFFF:
            self.out += _op(K.BININT2) + struct.pack("<H", x)
        elif -(2**31) <= x < 2**31:
            self.out += _op(K.BININT) + struct.pack("<i", x)
        else:
            raw = _encode_long(x)
            if len(raw) < 256:
                self.out += _op(K.LONG1) + struct.pack("<B", len(raw)) + raw
            else:
                self.out += _op(K.LONG4) + struct.pack("<i", len(raw)) + raw

    def _emit_str(self, s: str) -> None:
        raw = s.encode("utf-8", "surrogatepass")
        if self.protocol >= 4 and len(raw) < 256:
            self.out += _op(K.SHORT_BINUNICODE) + struct.pack("<B", len(raw)) + raw
        elif len(raw) < 2**32:
            self.out += _op(K.BINUNICODE) + struct.pack("<I", len(raw)) + raw
        elif self.protocol >= 4:
            self.out += _op(K.BINUNICODE8) + struct.pack("<Q", len(raw)) + raw
        else:
            raise UnsupportedNode("string too long for protocol < 4")

    def _emit_bytes(self, b: bytes) -> None:
        if self.protocol >= 3:
            if self.protocol >= 4 and len(b) < 256:
                self.out += _op(K.SHORT_BINBYTES) + struct.pack("<B", len(b)) + b
            elif len(b) < 2**32:
                self.out += _op(K.BINBYTES) + struct.pack("<I", len(b)) + b
            elif self.protocol >= 4:
                self.out += _op(K.BINBYTES8) + struct.pack("<Q", len(b)) + b
            else:
                raise UnsupportedNode("bytes too long for protocol 3")
        else:
            # protocol 2 spells bytes the way the reference pickler does
            self._emit_call(GlobalRef("_codecs", "encode"), (b.decode("latin-1"), "latin1"))

    # --- calls ---------------------------------------------------------------

    def _check(self, callee: GlobalRef, args) -> None:
        verdict = check_call(self.ruleset, callee, args)
        if not verdict.allow:
            raise UnsupportedNode(
                f"callee {callee.fqn()} is outside the {self.ruleset.name} allowlist"
            )

    def _emit_global(self, ref: GlobalRef) -> None:
        self._check(ref, None)
        if id(ref) in self.memo:
            self._get(self.memo[id(ref)][0])
            return
        if self.protocol >= 4:
            self._emit_str(ref.module)
            self._emit_str(ref.name)
            self.out += _op(K.STACK_GLOBAL)
        else:
            try:
                module = ref.module.encode("ascii")
                name = ref.name.encode("ascii")
            except UnicodeEncodeError:
                raise UnsupportedNode(f"non-ascii global {ref.fqn()} needs protocol 4")
            if b"\n" in module or b"\n" in name:
                raise UnsupportedNode("newline in global reference")
            self.out += _op(K.GLOBAL) + module + b"\n" + name + b"\n"
        if id(ref) in self.shared:
            self._memoize(ref)

    def _emit_call(self, callee: GlobalRef, args: tuple, node=None) -> None:
        self._check(callee, tuple(args))
        self._emit_global(callee)
        self._save_tuple(tuple(args))
        self.out += _op(K.REDUCE)
        if node is not None:
            self._memoize(node)

    # --- containers -----------------------------------------------------------

    def _batch_appends(self, values) -> None:
        values = list(values)
        for start in range(0, len(values), BATCH):
            chunk = values[start : start + BATCH]
            if len(chunk) == 1:
                self.save(chunk[0])
                self.out += _op(K.APPEND)
            else:
                self.out += _op(K.MARK)
                for value in chunk:
                    self.save(value)
                self.out += _op(K.APPENDS)

    def _batch_setitems(self, pairs) -> None:
        pairs = list(pairs)
        for start in range(0, len(pairs), BATCH):
            chunk = pairs[start : start + BATCH]
            if len(chunk) == 1:
                self.save(chunk[0][0])
                self.save(chunk[0][1])
                self.out += _op(K.SETITEM)
            else:
                self.out += _op(K.MARK)
                for key, value in chunk:
                    self.save(key)
                    self.save(value)
                self.out += _op(K.SETITEMS)

    def _batch_additems(self, values) -> None:
        values = list(values)
        for start in range(0, len(values), BATCH):
            chunk = values[start : start + BATCH]
            self.out += _op(K.MARK)
            for value in chunk:
                self.save(value)
            self.out += _op(K.ADDITEMS)

    def _save_tuple(self, node: tuple) -> None:
        if id(node) in self.memo:
            self._get(self.memo[id(node)][0])
            return
        if not node:
            self.out += _op(K.EMPTY_TUPLE)
            return
        if len(node) > 3:
            self.out += _op(K.MARK)
        for item in node:
            self.save(item)
        if id(node) in self.memo:
            # items reached this tuple through a cycle and built it already
            if len(node) > 3:
                self.out += _op(K.POP_MARK)
            else:
                self.out += _op(K.POP) * len(node)
            self._get(self.memo[id(node)][0])
            return
        if len(node) > 3:
            self.out += _op(K.TUPLE)
        else:
            self.out += _op((K.TUPLE1, K.TUPLE2, K.TUPLE3)[len(node) - 1])
        if id(node) in self.shared:
            self._memoize(node)

    # --- dispatch ---------------------------------------------------------------

    def save(self, node) -> None:
        key = id(node)
        if isinstance(node, _SHAREABLE) and key in self.memo:
            self._get(self.memo[key][0])
            return

        if node is None:
            self.out += _op(K.NONE)
        elif isinstance(node, bool):
            self.out += _op(K.NEWTRUE if node else K.NEWFALSE)
        elif isinstance(node, int):
            self._emit_int(node)
        elif isinstance(node, float):
            self.out += _op(K.BINFLOAT) + struct.pack(">d", node)
        elif isinstance(node, str):
            self._emit_str(node)
        elif isinstance(node, bytes):
            self._emit_bytes(node)
        elif isinstance(node, bytearray):
            self._emit_call(GlobalRef("builtins", "bytearray"), (bytes(node),))
        elif isinstance(node, complex):
            self._emit_call(GlobalRef("builtins", "complex"), (node.real, node.imag))
        elif isinstance(node, tuple):
            self._save_tuple(node)
        elif isinstance(node, list):
            self.out += _op(K.EMPTY_LIST)
            self._memoize(node)
            self._batch_appends(node)
        elif isinstance(node, dict):
            self.out += _op(K.EMPTY_DICT)
            self._memoize(node)
            self._batch_setitems(node.items())
        elif isinstance(node, set):
            if self.protocol >= 4:
                self.out += _op(K.EMPTY_SET)
                self._memoize(node)
                if node:
                    self._batch_additems(node)
            else:
                self._emit_call(GlobalRef("builtins", "set"), (list(node),), node)
        elif isinstance(node, frozenset):
            if self.protocol >= 4:
                self.out += _op(K.MARK)
                for item in node:
                    self.save(item)
                self.out += _op(K.FROZENSET)
                if key in self.shared:
                    self._memoize(node)
            else:
                self._emit_call(GlobalRef("builtins", "frozenset"), (list(node),), node)
        elif isinstance(node, GlobalRef):
            self._emit_global(node)
        elif isinstance(node, Reduced):
            self._save_reduced(node)
        elif isinstance(node, PersistentRef):
            self.save(node.pid)
            self.out += _op(K.BINPERSID)
        elif isinstance(node, Disarmed):
            raise DisarmedPresent("tree still contains Disarmed placeholders")
        elif isinstance(node, (TensorSpec, StorageHandle)):
            raise UnsupportedNode(
                "tensors cannot ride in a bare pickle; use a container or safetensors output"
            )
        else:
            raise UnsupportedNode(f"no pickle encoding for {type(node).__name__}")

    def _save_reduced(self, node: Reduced) -> None:
        if node.kwargs:
            raise UnsupportedNode("NEWOBJ_EX keyword construction is not re-emitted")
        self._check(node.callee, node.args)
        self._emit_global(node.callee)
        self._save_tuple(tuple(node.args))
        self.out += _op(K.REDUCE)
        self._memoize(node)
        if isinstance(node.items_state, dict):
            self._batch_setitems(node.items_state.items())
        elif isinstance(node.items_state, list):
            self._batch_appends(node.items_state)
        if node.built_state is not None:
            self.save(node.built_state)
            self.out += _op(K.BUILD)


def emit_pickle(root, protocol: int, ruleset: Ruleset) -> bytes:
    """Clean pickle bytes for a tree; raises on Disarmed or blocked nodes."""
    if protocol not in (2, 3, 4):
        raise ValueError(f"emit protocol must be 2, 3 or 4, not {protocol}")
    emitter = _Emitter(protocol, ruleset, _shared_ids(root))
    limit = sys.getrecursionlimit()
    try:
        sys.setrecursionlimit(100_000)
        emitter.save(root)
    finally:
        sys.setrecursionlimit(limit)
    body = bytes(emitter.out) + _op(K.STOP)
    head = _op(K.PROTO) + struct.pack("<B", protocol)
    if protocol >= 4:
        head += _op(K.FRAME) + struct.pack("<Q", len(body))
    return head + body
