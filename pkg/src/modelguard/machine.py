"""A reimplemented Pickle Machine that builds inert trees under policy.

Faithful stack/memo/mark semantics for the data opcodes; every import
(GLOBAL, STACK_GLOBAL) and every call application (REDUCE, NEWOBJ,
NEWOBJ_EX, INST, OBJ) is gated through the active ruleset. There is no
path from here to importlib, eval, the filesystem or the network: an
allowed call either hits a registered pure constructor hook or stays a
symbolic Reduced node.

Two modes:

- SAFE_REDUCE_GATE: blocked calls become Disarmed placeholders and
  interpretation continues (partial loading).
- STRICT_FIND_CLASS: the classic restricted-unpickler baseline; the
  first blocked import aborts the whole load.

Blocked imports in SAFE mode stay symbolic GlobalRef nodes (inert here,
unlike in a real unpickler) and are reported as BlockedEvents. The
baseline-dominance property (strict Complete implies safe Complete)
holds for rulesets without argument predicates, which includes every
shipped ruleset.
"""

from collections import OrderedDict
from dataclasses import dataclass
from enum import Enum

from .nodes import BlockedEvent, Disarmed, GlobalRef, PersistentRef, Reduced
from .opcodes import OpcodeKind as K
from .policy import Ruleset, Verdict, check_call, stringify_arg
from .stream import PickleProgram, RawOp

MAX_NESTING = 10_000


class MachineError(Exception):
    def __init__(self, message: str, offset: int = -1):
        super().__init__(message if offset < 0 else f"{message} (op at byte {offset})")
        self.offset = offset


class StackUnderflow(MachineError):
    pass


class MemoMiss(MachineError):
    pass


class UnsupportedOpcode(MachineError):
    pass


class OutOfBandUnsupported(UnsupportedOpcode):
    """Protocol-5 out-of-band buffers are decoded but never interpreted."""


class RecursionDepthExceeded(MachineError):
    pass


class InvalidProgram(MachineError):
    pass


class HookDecline(Exception):
    """A constructor hook bowing out; the node stays symbolic."""


class HookError(Exception):
    """A constructor hook rejecting malformed arguments; the load fails.

    Subclasses with passthrough=True propagate to the caller unchanged
    (domain errors like a missing storage key)."""

    passthrough = False


class PmMode(Enum):
    SAFE_REDUCE_GATE = "safe"
    STRICT_FIND_CLASS = "strict"


class LoadStatus(Enum):
    COMPLETE = "complete"
    PARTIALLY_DISARMED = "partially_disarmed"
    FAILED = "failed"


@dataclass
class LoadResult:
    root: object
    blocked: "list[BlockedEvent]"
    status: LoadStatus
    ops_executed: int
    failure: "str | None" = None

    @property
    def ok(self) -> bool:
        return self.status is not LoadStatus.FAILED


IMPORT_ARGS = "<import>"


class ConstructorRegistry:
    """Pure constructors the machine may run for allowed calls."""

    def __init__(self):
        self._hooks: "dict[str, object]" = {}

    def register(self, fqn: str, hook) -> None:
        self._hooks[fqn] = hook

    def get(self, fqn: str):
        return self._hooks.get(fqn)

    def copy(self) -> "ConstructorRegistry":
        out = ConstructorRegistry()
        out._hooks.update(self._hooks)
        return out


def _hook_list(args, kwargs):
    if not args:
        return []
    if len(args) == 1 and isinstance(args[0], (list, tuple)):
        return list(args[0])
    raise HookDecline


def _hook_dict(args, kwargs):
    if not args:
        return {}
    if len(args) == 1 and isinstance(args[0], dict):
        return dict(args[0])
    if len(args) == 1 and isinstance(args[0], (list, tuple)):
        try:
            return dict(_pairs(args[0]))
        except (TypeError, ValueError):
            raise HookDecline
    raise HookDecline


def _pairs(items):
    for item in items:
        if not isinstance(item, (list, tuple)) or len(item) != 2:
            raise ValueError("not a pair")
        yield item[0], item[1]


def _hook_set(args, kwargs):
    if not args:
        return set()
    if len(args) == 1 and isinstance(args[0], (list, tuple, set, frozenset)):
        try:
            return set(args[0])
        except TypeError:
            raise HookDecline
    raise HookDecline


def _hook_frozenset(args, kwargs):
    return frozenset(_hook_set(args, kwargs))


def _hook_tuple(args, kwargs):
    if not args:
        return ()
    if len(args) == 1 and isinstance(args[0], (list, tuple)):
        return tuple(args[0])
    raise HookDecline


def _hook_complex(args, kwargs):
    if len(args) in (1, 2) and all(isinstance(a, (int, float)) and not isinstance(a, bool) for a in args):
        return complex(*args)
    raise HookDecline


def _hook_bytes(args, kwargs):
    if not args:
        return b""
    if len(args) == 1 and isinstance(args[0], (bytes, bytearray)):
        return bytes(args[0])
    raise HookDecline


def _hook_bytearray(args, kwargs):
    if not args:
        return bytearray()
    if len(args) == 1 and isinstance(args[0], (bytes, bytearray)):
        return bytearray(args[0])
    raise HookDecline


def _hook_ordered_dict(args, kwargs):
    if not args:
        return OrderedDict()
    if len(args) == 1 and isinstance(args[0], (list, tuple)):
        try:
            return OrderedDict(_pairs(args[0]))
        except (TypeError, ValueError):
            raise HookDecline
    raise HookDecline


def _hook_codecs_encode(args, kwargs):
    # the reference pickler spells bytes as _codecs.encode(str, 'latin1')
    # in protocols 0-2
    if len(args) == 2 and isinstance(args[0], str) and args[1] in ("latin1", "latin-1", "latin_1"):
        try:
            return args[0].encode("latin-1")
        except UnicodeEncodeError:
            raise HookDecline
    raise HookDecline


def default_registry() -> ConstructorRegistry:
    reg = ConstructorRegistry()
    for mod in ("builtins", "__builtin__"):
        reg.register(f"{mod}.list", _hook_list)
        reg.register(f"{mod}.dict", _hook_dict)
        reg.register(f"{mod}.set", _hook_set)
        reg.register(f"{mod}.frozenset", _hook_frozenset)
        reg.register(f"{mod}.tuple", _hook_tuple)
        reg.register(f"{mod}.complex", _hook_complex)
        reg.register(f"{mod}.bytes", _hook_bytes)
        reg.register(f"{mod}.bytearray", _hook_bytearray)
    reg.register("collections.OrderedDict", _hook_ordered_dict)
    reg.register("_codecs.encode", _hook_codecs_encode)
    return reg


class _Machine:
    def __init__(self, program: PickleProgram, ruleset: Ruleset, mode: PmMode,
                 hooks: "ConstructorRegistry | None", persistent_resolver=None):
        self.program = program
        self.ruleset = ruleset
        self.mode = mode
        self.hooks = hooks or default_registry()
        self.persistent_resolver = persistent_resolver
        self.stack: list = []
        self.metastack: list = []
        self.memo: dict = {}
        self.blocked: list[BlockedEvent] = []
        self.ops_executed = 0
        # container -> nesting depth; the keepalive list pins ids so a
        # popped-and-collected node cannot leak its depth to a newcomer
        self._depths: dict[int, int] = {}
        self._keepalive: list = []
        self._strict_failure: "str | None" = None

    # --- helpers ---------------------------------------------------------

    def _pop(self, op: RawOp):
        if not self.stack:
            raise StackUnderflow(f"{op.kind.name} on empty stack", op.offset)
        return self.stack.pop()

    def _top(self, op: RawOp):
        if not self.stack:
            raise StackUnderflow(f"{op.kind.name} on empty stack", op.offset)
        return self.stack[-1]

    def _pop_mark(self, op: RawOp) -> list:
        if not self.metastack:
            raise StackUnderflow(f"{op.kind.name} with no MARK", op.offset)
        items = self.stack
        self.stack = self.metastack.pop()
        return items

    def _depth(self, node) -> int:
        return self._depths.get(id(node), 0)

    def _register_container(self, node, children=()) -> None:
        depth = 1
        for child in children:
            d = self._depth(child)
            if d >= depth:
                depth = d + 1
        if depth > MAX_NESTING:
            raise RecursionDepthExceeded(f"nesting exceeds {MAX_NESTING}")
        if id(node) not in self._depths:
            self._keepalive.append(node)
        self._depths[id(node)] = max(self._depths.get(id(node), 0), depth)

    def _block(self, op: RawOp, ref: GlobalRef, args, verdict: Verdict, push: bool) -> bool:
        """Record a policy block; returns False when strict mode must abort."""
        summary = IMPORT_ARGS if args is None else stringify_arg(tuple(args))
        event = BlockedEvent(
            callee_module=ref.module,
            callee_name=ref.name,
            arg_summary=summary,
            opcode=op.kind,
            offset=op.offset,
            rule=verdict.rule_label,
        )
        if self.mode is PmMode.STRICT_FIND_CLASS:
            self._strict_failure = f"blocked {ref.fqn()} (rule: {event.rule})"
            return False
        self.blocked.append(event)
        if push:
            self.stack.append(Disarmed(event))
        return True

    def _apply_call(self, op: RawOp, callee, args: tuple, kwargs=None) -> bool:
        if isinstance(callee, Disarmed):
            self.stack.append(callee)  # the placeholder swallows the call
            return True
        if not isinstance(callee, GlobalRef):
            ref = GlobalRef("<dynamic>", type(callee).__name__)
            verdict = Verdict(False, None, "default")
            return self._block(op, ref, args, verdict, push=True)
        verdict = check_call(self.ruleset, callee, args)
        if not verdict.allow:
            return self._block(op, callee, args, verdict, push=True)
        hook = self.hooks.get(callee.fqn()) if callee.fqn() in self.ruleset.constructor_hooks else None
        if hook is not None:
            try:
                value = hook(args, kwargs)
            except HookDecline:
                value = None
                hook = None
            except HookError as exc:
                if exc.passthrough:
                    raise
                raise InvalidProgram(f"constructor {callee.fqn()} rejected arguments: {exc}", op.offset)
            if hook is not None:
                self._register_container(value, list(args))
                self.stack.append(value)
                return True
        node = Reduced(callee=callee, args=tuple(args), kwargs=kwargs or None)
        self._register_container(node, list(args))
        self.stack.append(node)
        return True

    def _import(self, op: RawOp, module, name) -> bool:
        if not isinstance(module, str) or not isinstance(name, str):
            raise InvalidProgram("STACK_GLOBAL expects two strings", op.offset)
        ref = GlobalRef(module, name)
        verdict = check_call(self.ruleset, ref, None)
        if not verdict.allow:
            if not self._block(op, ref, None, verdict, push=False):
                return False
        self.stack.append(ref)
        return True

    # --- the dispatch loop -------------------------------------------------

    def run(self) -> LoadResult:
        try:
            root = self._execute()
        except MachineError as exc:
            return LoadResult(None, self.blocked, LoadStatus.FAILED, self.ops_executed, failure=str(exc))
        if self._strict_failure is not None:
            return LoadResult(None, self.blocked, LoadStatus.FAILED, self.ops_executed,
                              failure=self._strict_failure)
        status = LoadStatus.PARTIALLY_DISARMED if self.blocked else LoadStatus.COMPLETE
        return LoadResult(root, self.blocked, status, self.ops_executed)

    def _execute(self):
        stack = self.stack
        for op in self.program.ops:
            self.ops_executed += 1
            kind = op.kind
            if kind in _PUSH_CONST:
                stack.append(_PUSH_CONST[kind])
            elif kind in (K.INT, K.BININT, K.BININT1, K.BININT2, K.LONG, K.LONG1, K.LONG4,
                          K.FLOAT, K.BINFLOAT, K.STRING, K.BINSTRING, K.SHORT_BINSTRING,
                          K.UNICODE, K.BINUNICODE, K.SHORT_BINUNICODE, K.BINUNICODE8,
                          K.BINBYTES, K.SHORT_BINBYTES, K.BINBYTES8):
                stack.append(op.arg)
            elif kind is K.BYTEARRAY8:
                stack.append(bytearray(op.arg))
            elif kind is K.MEMOIZE:
                self.memo[len(self.memo)] = self._top(op)
            elif kind in (K.PUT, K.BINPUT, K.LONG_BINPUT):
                self.memo[op.arg] = self._top(op)
            elif kind in (K.GET, K.BINGET, K.LONG_BINGET):
                if op.arg not in self.memo:
                    raise MemoMiss(f"memo id {op.arg} never stored", op.offset)
                stack.append(self.memo[op.arg])
            elif kind is K.MARK:
                self.metastack.append(stack)
                self.stack = stack = []
            elif kind is K.POP:
                if stack:
                    stack.pop()
                else:
                    self._pop_mark(op)
                    stack = self.stack
            elif kind is K.POP_MARK:
                self._pop_mark(op)
                stack = self.stack
            elif kind is K.DUP:
                stack.append(self._top(op))
            elif kind is K.EMPTY_LIST:
                node = []
                self._register_container(node)
                stack.append(node)
            elif kind is K.EMPTY_DICT:
                node = {}
                self._register_container(node)
                stack.append(node)
            elif kind is K.EMPTY_SET:
                node = set()
                self._register_container(node)
                stack.append(node)
            elif kind is K.LIST:
                items = self._pop_mark(op)
                stack = self.stack
                self._register_container(items, items)
                stack.append(items)
            elif kind is K.TUPLE:
                items = tuple(self._pop_mark(op))
                stack = self.stack
                self._register_container(items, items)
                stack.append(items)
            elif kind is K.TUPLE1:
                node = (self._pop(op),)
                self._register_container(node, node)
                stack.append(node)
            elif kind is K.TUPLE2:
                b, a = self._pop(op), self._pop(op)
                node = (a, b)
                self._register_container(node, node)
                stack.append(node)
            elif kind is K.TUPLE3:
                c, b, a = self._pop(op), self._pop(op), self._pop(op)
                node = (a, b, c)
                self._register_container(node, node)
                stack.append(node)
            elif kind is K.DICT:
                items = self._pop_mark(op)
                stack = self.stack
                if len(items) % 2:
                    raise InvalidProgram("DICT with odd number of stack items", op.offset)
                node = {}
                self._fill_dict(node, zip(items[::2], items[1::2]), op)
                stack.append(node)
            elif kind is K.FROZENSET:
                items = self._pop_mark(op)
                stack = self.stack
                node = self._make_set(items, op, frozen=True)
                stack.append(node)
            elif kind is K.APPEND:
                value = self._pop(op)
                self._append(self._top(op), [value], op)
            elif kind is K.APPENDS:
                items = self._pop_mark(op)
                stack = self.stack
                self._append(self._top(op), items, op)
            elif kind is K.SETITEM:
                value, key = self._pop(op), self._pop(op)
                self._setitems(self._top(op), [(key, value)], op)
            elif kind is K.SETITEMS:
                items = self._pop_mark(op)
                stack = self.stack
                if len(items) % 2:
                    raise InvalidProgram("SETITEMS with odd number of stack items", op.offset)
                self._setitems(self._top(op), zip(items[::2], items[1::2]), op)
            elif kind is K.ADDITEMS:
                items = self._pop_mark(op)
                stack = self.stack
                self._additems(self._top(op), items, op)
            elif kind in (K.GLOBAL, K.INST):
                module, name = op.arg
                if kind is K.INST:
                    args = tuple(self._pop_mark(op))
                    stack = self.stack
                    if not self._apply_call(op, GlobalRef(module, name), args):
                        return None
                else:
                    if not self._import(op, module, name):
                        return None
            elif kind is K.STACK_GLOBAL:
                name, module = self._pop(op), self._pop(op)
                if not self._import(op, module, name):
                    return None
            elif kind is K.REDUCE:
                args = self._pop(op)
                callee = self._pop(op)
                if not isinstance(args, tuple):
                    raise InvalidProgram("REDUCE arguments are not a tuple", op.offset)
                if not self._apply_call(op, callee, args):
                    return None
            elif kind is K.NEWOBJ:
                args = self._pop(op)
                cls = self._pop(op)
                if not isinstance(args, tuple):
                    raise InvalidProgram("NEWOBJ arguments are not a tuple", op.offset)
                if not self._apply_call(op, cls, args):
                    return None
            elif kind is K.NEWOBJ_EX:
                kwargs = self._pop(op)
                args = self._pop(op)
                cls = self._pop(op)
                if not isinstance(args, tuple) or not isinstance(kwargs, dict):
                    raise InvalidProgram("NEWOBJ_EX arguments malformed", op.offset)
                if not self._apply_call(op, cls, args, kwargs):
                    return None
            elif kind is K.OBJ:
                items = self._pop_mark(op)
                stack = self.stack
                if not items:
                    raise StackUnderflow("OBJ with empty mark slice", op.offset)
                if not self._apply_call(op, items[0], tuple(items[1:])):
                    return None
            elif kind is K.BUILD:
                state = self._pop(op)
                self._build(self._top(op), state, op)
            elif kind is K.PERSID:
                self._persistent(op, op.arg)
            elif kind is K.BINPERSID:
                self._persistent(op, self._pop(op))
            elif kind is K.PROTO:
                if not 0 <= op.arg <= 5:
                    raise InvalidProgram(f"PROTO {op.arg} unsupported", op.offset)
            elif kind is K.FRAME:
                pass
            elif kind in (K.EXT1, K.EXT2, K.EXT4):
                ref = GlobalRef("<extension-registry>", f"code_{op.arg}")
                if not self._block(op, ref, (), Verdict(False, None, "default"), push=True):
                    return None
            elif kind in (K.NEXT_BUFFER, K.READONLY_BUFFER):
                raise OutOfBandUnsupported("protocol-5 out-of-band buffer opcodes are not interpreted",
                                           op.offset)
            elif kind is K.STOP:
                value = self._pop(op)
                if stack or self.metastack:
                    raise InvalidProgram(
                        f"STOP with {len(stack)} extra stack item(s) and {len(self.metastack)} open mark(s)",
                        op.offset)
                return value
            else:
                raise UnsupportedOpcode(f"opcode {kind.name} not interpretable", op.offset)
        raise InvalidProgram("program has no STOP", -1)

    # --- mutation of in-progress containers --------------------------------

    def _append(self, target, items, op: RawOp) -> None:
        items = list(items)
        if isinstance(target, list):
            target.extend(items)
            self._register_container(target, items)
        elif isinstance(target, Disarmed):
            pass  # swallowed with the blocked call
        elif isinstance(target, Reduced):
            if not isinstance(target.items_state, list):
                target.items_state = []
            target.items_state.extend(items)
            self._register_container(target, items)
        elif isinstance(target, (set, frozenset)):
            raise InvalidProgram("APPEND target is a set", op.offset)
        else:
            raise InvalidProgram(f"APPEND target is {type(target).__name__}", op.offset)

    def _fill_dict(self, node: dict, pairs, op: RawOp) -> None:
        children = []
        for key, value in pairs:
            try:
                node[key] = value
            except TypeError:
                raise InvalidProgram(f"unhashable dict key of type {type(key).__name__}", op.offset)
            children.append(value)
        self._register_container(node, children)

    def _setitems(self, target, pairs, op: RawOp) -> None:
        pairs = list(pairs)
        if isinstance(target, dict):
            self._fill_dict(target, pairs, op)
        elif isinstance(target, Disarmed):
            pass
        elif isinstance(target, Reduced):
            if not isinstance(target.items_state, dict):
                target.items_state = {}
            self._fill_dict(target.items_state, pairs, op)
            self._register_container(target, [v for _, v in pairs])
        else:
            raise InvalidProgram(f"SETITEMS target is {type(target).__name__}", op.offset)

    def _make_set(self, items, op: RawOp, frozen: bool):
        try:
            node = frozenset(items) if frozen else set(items)
        except TypeError:
            raise InvalidProgram("unhashable set member", op.offset)
        self._register_container(node, items)
        return node

    def _additems(self, target, items, op: RawOp) -> None:
        if isinstance(target, set):
            try:
                target.update(items)
            except TypeError:
                raise InvalidProgram("unhashable set member", op.offset)
            self._register_container(target, items)
        elif isinstance(target, Disarmed):
            pass
        else:
            raise InvalidProgram(f"ADDITEMS target is {type(target).__name__}", op.offset)

    def _build(self, target, state, op: RawOp) -> None:
        if isinstance(target, Disarmed):
            return  # state of a blocked object is dropped with it
        if isinstance(target, Reduced):
            if target.built_state is None:
                target.built_state = state
            else:
                target.built_state = (target.built_state, state)
            self._register_container(target, [state])
            return
        if isinstance(target, (dict, list, set, bytearray)):
            # attribute state aimed at a hook-materialized container; real
            # state dicts do this (OrderedDict._metadata). The attributes
            # have no slot on the inert value, so they are absorbed; the
            # items themselves were applied by SETITEMS as usual.
            return
        raise InvalidProgram(f"BUILD target is {type(target).__name__}", op.offset)

    def _persistent(self, op: RawOp, pid) -> None:
        if self.persistent_resolver is not None:
            self.stack.append(self.persistent_resolver(pid))
        else:
            node = PersistentRef(pid)
            self._register_container(node, [pid])
            self.stack.append(node)


_PUSH_CONST = {
    K.NONE: None,
    K.NEWTRUE: True,
    K.NEWFALSE: False,
    K.EMPTY_TUPLE: (),
}


def run(program: PickleProgram, ruleset: Ruleset, mode: PmMode = PmMode.SAFE_REDUCE_GATE,
        hooks: "ConstructorRegistry | None" = None, persistent_resolver=None) -> LoadResult:
    """Interpret a decoded program under the given policy."""
    return _Machine(program, ruleset, mode, hooks, persistent_resolver).run()
