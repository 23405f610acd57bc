"""Call-authorization policy: rulesets of allow/block rules.

A rule matches on the callee's dotted module path and attribute name
(glob patterns) and optionally on the call arguments. Evaluation is
block-first, then allow, then the ruleset default; a matching block
rule always wins. Patterns are pure string matchers — argument
predicates compare stringified values and never evaluate anything.

Glob semantics: ``*`` matches within one dotted segment, ``**`` matches
across segments, anything else matches literally. ``subprocess.*``
covers ``subprocess.Popen`` but not ``subprocessx.run``.
"""

import functools
import json
import re
from dataclasses import dataclass, field
from importlib import resources

from .nodes import GlobalRef


@functools.lru_cache(maxsize=4096)
def _glob_regex(pattern: str) -> "re.Pattern[str]":
    out = []
    i = 0
    while i < len(pattern):
        if pattern.startswith("**", i):
            out.append(".*")
            i += 2
        elif pattern[i] == "*":
            out.append(r"[^.]*")
            i += 1
        else:
            out.append(re.escape(pattern[i]))
            i += 1
    return re.compile("".join(out) + r"\Z")


def glob_match(pattern: str, text: str) -> bool:
    return _glob_regex(pattern).match(text) is not None


def stringify_arg(value, limit: int = 256) -> str:
    """Bounded repr used for predicate matching and event reports."""
    try:
        text = repr(value)
    except Exception:  # reprs of hostile trees must never take us down
        text = f"<{type(value).__name__}>"
    if len(text) > limit:
        text = text[: limit - 3] + "..."
    return text


@dataclass(frozen=True)
class ArgPredicate:
    """any | arity(n) | arg_equals(index, literal) | arg_matches(index, glob)"""

    kind: str = "any"
    index: int = 0
    value: object = None
    pattern: str = ""

    def evaluate(self, args: "tuple | None") -> bool:
        if self.kind == "any":
            return True
        if args is None:
            # import-level checks carry no arguments; only "any" applies
            return False
        if self.kind == "arity":
            return len(args) == self.value
        if self.index >= len(args):
            return False
        if self.kind == "arg_equals":
            return args[self.index] == self.value
        if self.kind == "arg_matches":
            return glob_match(self.pattern, stringify_arg(args[self.index]))
        raise ValueError(f"unknown predicate kind {self.kind!r}")

    def to_json(self):
        if self.kind == "any":
            return None
        if self.kind == "arity":
            return {"kind": "arity", "n": self.value}
        if self.kind == "arg_equals":
            return {"kind": "arg_equals", "index": self.index, "value": self.value}
        return {"kind": "arg_matches", "index": self.index, "pattern": self.pattern}

    @classmethod
    def from_json(cls, obj) -> "ArgPredicate":
        if obj is None:
            return cls()
        kind = obj["kind"]
        if kind == "arity":
            return cls(kind="arity", value=int(obj["n"]))
        if kind == "arg_equals":
            return cls(kind="arg_equals", index=int(obj["index"]), value=obj["value"])
        if kind == "arg_matches":
            return cls(kind="arg_matches", index=int(obj["index"]), pattern=obj["pattern"])
        if kind == "any":
            return cls()
        raise ValueError(f"unknown predicate kind {kind!r}")


@dataclass(frozen=True)
class CallRule:
    module_pattern: str
    name_pattern: str
    arg_predicate: ArgPredicate = field(default_factory=ArgPredicate)

    def matches(self, module: str, name: str, args: "tuple | None") -> bool:
        if not glob_match(self.module_pattern, module):
            return False
        if not glob_match(self.name_pattern, name):
            return False
        if self.arg_predicate.kind == "any":
            return True
        if args is None:
            # module/name-only check: argument-conditional rules still
            # match, so an import check is at least as strict as any
            # call check with the same callee
            return True
        return self.arg_predicate.evaluate(args)

    def pattern(self) -> str:
        return f"{self.module_pattern}.{self.name_pattern}"

    def to_json(self) -> dict:
        out = {"module": self.module_pattern, "name": self.name_pattern}
        pred = self.arg_predicate.to_json()
        if pred is not None:
            out["args"] = pred
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "CallRule":
        return cls(obj["module"], obj["name"], ArgPredicate.from_json(obj.get("args")))


@dataclass(frozen=True)
class Verdict:
    allow: bool
    matched_rule: "CallRule | None"
    source: str  # "block" | "allow" | "default"

    @property
    def rule_label(self) -> str:
        return self.matched_rule.pattern() if self.matched_rule else "default"


@dataclass(frozen=True)
class Ruleset:
    name: str
    block: "tuple[CallRule, ...]"
    allow: "tuple[CallRule, ...]"
    default_allow: bool = False
    constructor_hooks: "frozenset[str]" = frozenset()
    description: str = ""

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "default": "allow" if self.default_allow else "block",
            "block": [r.to_json() for r in self.block],
            "allow": [r.to_json() for r in self.allow],
            "hooks": sorted(self.constructor_hooks),
        }

    @classmethod
    def from_json(cls, obj: dict, base: "Ruleset | None" = None) -> "Ruleset":
        block = tuple(CallRule.from_json(r) for r in obj.get("block", ()))
        allow = tuple(CallRule.from_json(r) for r in obj.get("allow", ()))
        hooks = frozenset(obj.get("hooks", ()))
        if base is not None:
            block = base.block + block
            allow = base.allow + allow
            hooks = base.constructor_hooks | hooks
        return cls(
            name=obj["name"],
            block=block,
            allow=allow,
            default_allow=obj.get("default", "block") == "allow",
            constructor_hooks=hooks,
            description=obj.get("description", ""),
        )


def check_call(ruleset: Ruleset, callee: GlobalRef, args: "tuple | None" = None) -> Verdict:
    """Deterministic verdict for a call (or, with args=None, an import)."""
    for rule in ruleset.block:
        if rule.matches(callee.module, callee.name, args):
            return Verdict(False, rule, "block")
    for rule in ruleset.allow:
        if rule.matches(callee.module, callee.name, args):
            return Verdict(True, rule, "allow")
    return Verdict(ruleset.default_allow, None, "default")


@functools.lru_cache(maxsize=None)
def builtin_rulesets() -> "dict[str, Ruleset]":
    out: dict[str, Ruleset] = {}
    pending: dict[str, dict] = {}
    for name in ("FICKLING", "TORCH"):
        raw = resources.files("modelguard.rulesets").joinpath(f"{name}.json").read_text()
        pending[name] = json.loads(raw)
    for name, obj in pending.items():
        base = None
        if "extends" in obj:
            base_obj = pending[obj["extends"]]
            base = Ruleset.from_json(base_obj)
        out[name] = Ruleset.from_json(obj, base=base)
    return out


def load_ruleset(spec: str) -> Ruleset:
    """A builtin name (FICKLING, TORCH) or a path to a ruleset JSON file."""
    builtins_ = builtin_rulesets()
    if spec in builtins_:
        return builtins_[spec]
    with open(spec, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    base = builtins_.get(obj.get("extends", ""))
    return Ruleset.from_json(obj, base=base)
