"""Static severity scoring of pickle programs.

The scale mirrors the -1..5 convention of public pickle scanners:

    -1 DeserializationFailed   0 LikelySafe        1 PossiblyUnsafe
     2 Suspicious              3 LikelyUnsafe      4 LikelyOvertlyMalicious
     5 OvertlyMalicious

Scoring walks the opcode stream with a small abstract stack (enough to
resolve STACK_GLOBAL pairs and attribute calls to their callees) and
applies the threat table: a direct-execution callee that is actually
applied scores 5; any execution-class or indirection-class import, or a
base64 decode chain, scores 4; any import outside the data allowlist
scores 3 (which pins benign torch models at 3); loader-class imports
alone score 2; allowlisted imports beyond pure data score 1; pure data
scores 0.
"""

import json
from dataclasses import dataclass
from enum import IntEnum

from .nodes import GlobalRef
from .opcodes import OpcodeKind as K
from .stream import PickleProgram

REPORT_VERSION = 1


class SeverityLevel(IntEnum):
    DESERIALIZATION_FAILED = -1
    LIKELY_SAFE = 0
    POSSIBLY_UNSAFE = 1
    SUSPICIOUS = 2
    LIKELY_UNSAFE = 3
    LIKELY_OVERTLY_MALICIOUS = 4
    OVERTLY_MALICIOUS = 5

    @property
    def label(self) -> str:
        return _LABELS[self]


_LABELS = {
    SeverityLevel.DESERIALIZATION_FAILED: "DeserializationFailed",
    SeverityLevel.LIKELY_SAFE: "LikelySafe",
    SeverityLevel.POSSIBLY_UNSAFE: "PossiblyUnsafe",
    SeverityLevel.SUSPICIOUS: "Suspicious",
    SeverityLevel.LIKELY_UNSAFE: "LikelyUnsafe",
    SeverityLevel.LIKELY_OVERTLY_MALICIOUS: "LikelyOvertlyMalicious",
    SeverityLevel.OVERTLY_MALICIOUS: "OvertlyMalicious",
}


class ThreatClass(IntEnum):
    DIRECT_EXEC = 4
    INDIRECT_EXEC = 3
    LOADER = 2
    BENIGN = 1
    UNKNOWN = 0


# exact fully-qualified names; the Python-2 builtins spelling is folded
# into the modern one before lookup
_DIRECT_EXEC = {
    "builtins.eval", "builtins.exec", "builtins.compile",
    "os.system", "os.popen", "os.execv", "os.execve", "os.execl", "os.execlp",
    "os.execvp", "os.execvpe", "os.spawnl", "os.spawnv", "os.spawnve", "os.startfile",
    "posix.system", "posix.popen", "pty.spawn",
    "numpy.testing._private.utils.runstring",
}
_DIRECT_EXEC_MODULES = ("subprocess", "runpy", "commands")
_INDIRECT_EXEC = {
    "builtins.getattr", "builtins.__import__", "builtins.apply", "builtins.vars",
    "operator.attrgetter", "operator.methodcaller",
    "importlib.import_module", "importlib.__import__",
    "torch.load", "torch.serialization.load",
    "base64.b64decode", "base64.b32decode", "base64.b16decode", "base64.decodebytes",
    "codecs.decode", "pickle.loads", "pickle.load", "dill.loads", "dill.load",
    "functools.partial",
}
_B64_DECODERS = {"base64.b64decode", "base64.b32decode", "base64.b16decode", "base64.decodebytes"}
_LOADER = {
    "joblib.load", "numpy.load", "pandas.read_pickle", "shelve.open",
    "torch.hub.load_state_dict_from_url",
}
_BENIGN = {
    "builtins.list", "builtins.dict", "builtins.set", "builtins.frozenset",
    "builtins.tuple", "builtins.complex", "builtins.bytearray", "builtins.bytes",
    "builtins.str", "builtins.int", "builtins.float", "builtins.bool",
    "builtins.object", "builtins.range", "builtins.slice",
    "collections.OrderedDict", "collections.defaultdict", "collections.Counter",
    "collections.deque", "_codecs.encode", "copyreg._reconstructor",
}


def classify_import(module: str, name: str) -> ThreatClass:
    """Threat-table lookup for a (module, name) import."""
    if module == "__builtin__":
        module = "builtins"
    fqn = f"{module}.{name}"
    if fqn in _DIRECT_EXEC or module.split(".")[0] in _DIRECT_EXEC_MODULES:
        return ThreatClass.DIRECT_EXEC
    if fqn in _INDIRECT_EXEC:
        return ThreatClass.INDIRECT_EXEC
    if fqn in _LOADER:
        return ThreatClass.LOADER
    if fqn in _BENIGN:
        return ThreatClass.BENIGN
    return ThreatClass.UNKNOWN


@dataclass(frozen=True)
class Finding:
    kind: str  # "import" | "reduce" | "encoding"
    module: str
    name: str
    threat: ThreatClass
    offset: int

    def key(self) -> tuple:
        # identity for before/after diffing; offsets shift during CDR
        return (self.kind, self.module, self.name, self.threat)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "callee": f"{self.module}.{self.name}",
            "threat_class": self.threat.name.lower(),
            "offset": self.offset,
        }


@dataclass
class ScanReport:
    severity: SeverityLevel
    findings: "list[Finding]"
    imports: "list[GlobalRef]"
    stats: "dict[str, int]"

    def to_json(self) -> dict:
        return {
            "report_version": REPORT_VERSION,
            "severity": int(self.severity),
            "label": self.severity.label,
            "findings": [f.to_json() for f in self.findings],
            "imports": [ref.fqn() for ref in self.imports],
            "stats": dict(self.stats),
        }


def failed_report(reason: str = "decode failed") -> ScanReport:
    return ScanReport(
        SeverityLevel.DESERIALIZATION_FAILED,
        [],
        [],
        {"n_ops": 0, "n_globals": 0, "n_reduces": 0, "error": reason},  # type: ignore[dict-item]
    )


_MARK = object()
_STR_OPS = (K.STRING, K.BINSTRING, K.SHORT_BINSTRING, K.UNICODE, K.BINUNICODE,
            K.SHORT_BINUNICODE, K.BINUNICODE8)


class _AbstractStack:
    """Just enough machine to track strings, globals and call shapes."""

    def __init__(self):
        self.stack: list = []
        self.memo: dict = {}

    def push(self, value) -> None:
        self.stack.append(value)

    def pop(self):
        return self.stack.pop() if self.stack else None

    def pop_mark(self) -> list:
        items = []
        while self.stack and self.stack[-1] is not _MARK:
            items.append(self.stack.pop())
        if self.stack:
            self.stack.pop()
        items.reverse()
        return items


def scan(program: PickleProgram) -> ScanReport:
    """Pure static severity scan of a decoded program."""
    findings: list[Finding] = []
    imports: list[GlobalRef] = []
    n_reduces = 0
    st = _AbstractStack()

    def note_import(module: str, name: str, offset: int) -> GlobalRef:
        ref = GlobalRef(module, name)
        imports.append(ref)
        threat = classify_import(module, name)
        findings.append(Finding("import", module, name, threat, offset))
        fqn = f"{'builtins' if module == '__builtin__' else module}.{name}"
        if fqn in _B64_DECODERS:
            findings.append(Finding("encoding", module, name, ThreatClass.INDIRECT_EXEC, offset))
        return ref

    def note_reduce(callee, offset: int) -> None:
        nonlocal n_reduces
        n_reduces += 1
        if isinstance(callee, GlobalRef):
            threat = classify_import(callee.module, callee.name)
            findings.append(Finding("reduce", callee.module, callee.name, threat, offset))

    for op in program.ops:
        kind = op.kind
        if kind in (K.GLOBAL, K.INST):
            module, name = op.arg
            ref = note_import(module, name, op.offset)
            if kind is K.INST:
                st.pop_mark()
                note_reduce(ref, op.offset)
                st.push(("reduced", ref))
            else:
                st.push(ref)
        elif kind is K.STACK_GLOBAL:
            name, module = st.pop(), st.pop()
            if isinstance(module, str) and isinstance(name, str):
                st.push(note_import(module, name, op.offset))
            else:
                st.push(None)
        elif kind is K.REDUCE or kind is K.NEWOBJ:
            st.pop()
            callee = st.pop()
            note_reduce(callee, op.offset)
            st.push(("reduced", callee))
        elif kind is K.NEWOBJ_EX:
            st.pop(), st.pop()
            callee = st.pop()
            note_reduce(callee, op.offset)
            st.push(("reduced", callee))
        elif kind is K.OBJ:
            items = st.pop_mark()
            callee = items[0] if items else None
            note_reduce(callee, op.offset)
            st.push(("reduced", callee))
        elif kind is K.MARK:
            st.push(_MARK)
        elif kind in _STR_OPS:
            st.push(op.arg)
        elif kind in (K.PUT, K.BINPUT, K.LONG_BINPUT):
            if st.stack:
                st.memo[op.arg] = st.stack[-1]
        elif kind is K.MEMOIZE:
            if st.stack:
                st.memo[len(st.memo)] = st.stack[-1]
        elif kind in (K.GET, K.BINGET, K.LONG_BINGET):
            st.push(st.memo.get(op.arg))
        elif kind in (K.APPENDS, K.SETITEMS, K.ADDITEMS):
            st.pop_mark()
        elif kind in (K.TUPLE, K.DICT, K.LIST, K.FROZENSET):
            st.pop_mark()
            st.push(None)
        elif kind is K.TUPLE1:
            st.pop()
            st.push(None)
        elif kind is K.TUPLE2 or kind is K.SETITEM:
            st.pop(), st.pop()
            st.push(None)
        elif kind is K.TUPLE3:
            st.pop(), st.pop(), st.pop()
            st.push(None)
        elif kind in (K.APPEND, K.POP, K.BUILD, K.BINPERSID):
            st.pop()
            if kind is K.BUILD or kind is K.BINPERSID:
                st.push(None)
        elif kind is K.POP_MARK:
            st.pop_mark()
        elif kind in (K.PROTO, K.FRAME, K.STOP):
            pass
        else:
            st.push(None)

    severity = _classify_findings(findings)
    report = ScanReport(
        severity=severity,
        findings=findings,
        imports=imports,
        stats={"n_ops": len(program.ops), "n_globals": len(imports), "n_reduces": n_reduces},
    )
    return report


def _classify_findings(findings: "list[Finding]") -> SeverityLevel:
    classes_imported = {f.threat for f in findings if f.kind == "import"}
    classes_reduced = {f.threat for f in findings if f.kind == "reduce"}
    if ThreatClass.DIRECT_EXEC in classes_reduced:
        return SeverityLevel.OVERTLY_MALICIOUS
    if ThreatClass.DIRECT_EXEC in classes_imported or ThreatClass.INDIRECT_EXEC in classes_imported \
            or any(f.kind == "encoding" for f in findings):
        return SeverityLevel.LIKELY_OVERTLY_MALICIOUS
    if ThreatClass.UNKNOWN in classes_imported:
        return SeverityLevel.LIKELY_UNSAFE
    if ThreatClass.LOADER in classes_imported:
        return SeverityLevel.SUSPICIOUS
    if classes_imported:
        return SeverityLevel.POSSIBLY_UNSAFE
    return SeverityLevel.LIKELY_SAFE


@dataclass
class Delta:
    severity_before: SeverityLevel
    severity_after: SeverityLevel
    removed_findings: "list[Finding]"

    def to_json(self) -> dict:
        return {
            "before": int(self.severity_before),
            "after": int(self.severity_after),
            "removed": [f.to_json() for f in self.removed_findings],
        }


def compare_reports(before: ScanReport, after: ScanReport) -> Delta:
    after_keys = {f.key() for f in after.findings}
    removed = [f for f in before.findings if f.key() not in after_keys]
    return Delta(before.severity, after.severity, removed)


def report_to_json_str(report: ScanReport) -> str:
    return json.dumps(report.to_json(), indent=2)
