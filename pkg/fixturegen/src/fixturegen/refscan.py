"""Reference maliciousness scan recorded into the manifest at build time.

Prefers fickling (the public reference scanner). When it is not
installed — the build environment's package mirror does not carry it —
falls back to a deliberately separate mini-scanner built on
pickletools.genops, so the corpus is still independently vetted before
the system under test ever sees it.
"""

import io
import zipfile

import pickletools

_EXEC_CALLS = {
    ("builtins", "eval"),
    ("builtins", "exec"),
    ("builtins", "compile"),
    ("os", "system"),
    ("os", "popen"),
    ("posix", "system"),
    ("posix", "popen"),
    ("numpy.testing._private.utils", "runstring"),
}
_EXEC_MODULES = ("subprocess", "runpy", "os", "posix", "pty", "commands")
_INDIRECT_CALLS = {
    ("builtins", "getattr"),
    ("builtins", "__import__"),
    ("torch", "load"),
    ("torch.serialization", "load"),  # torch.load's defining module
    ("base64", "b64decode"),
    ("base64", "decodebytes"),
    ("importlib", "import_module"),
}


def _classify(module: str, name: str) -> str:
    if module == "__builtin__":  # protocol <= 2 spells builtins the Python 2 way
        module = "builtins"
    if (module, name) in _EXEC_CALLS or module.split(".")[0] in _EXEC_MODULES:
        return "exec"
    if (module, name) in _INDIRECT_CALLS:
        return "indirect"
    return "other"


_MARK = object()


def _scan_pickle_fallback(data: bytes) -> int:
    """Severity on the fickling scale, from a one-pass stack sketch.

    Stack effects of uninteresting opcodes come from pickletools' own
    opcode descriptors, so the sketch stays aligned without reproducing
    the whole machine.
    """
    stack: list = []
    imports: list[tuple[str, str]] = []
    reduced: list[tuple[str, str]] = []
    memo: dict = {}

    def pop():
        return stack.pop() if stack else None

    def resolve(v):
        if isinstance(v, tuple) and len(v) == 2 and v[0] == "#global":
            return v[1]
        return None

    try:
        ops = list(pickletools.genops(data))
    except Exception:
        return -1
    for op, arg, _pos in ops:
        name = op.name
        if name in ("GLOBAL", "INST"):
            module, qual = arg.split(" ", 1)
            imports.append((module, qual))
            if name == "INST":
                reduced.append((module, qual))
                while stack and stack[-1] is not _MARK:
                    stack.pop()
                pop()
            stack.append(("#global", (module, qual)))
        elif name == "STACK_GLOBAL":
            b, a = pop(), pop()
            if isinstance(a, str) and isinstance(b, str):
                imports.append((a, b))
                stack.append(("#global", (a, b)))
            else:
                stack.append(None)
        elif name in ("REDUCE", "NEWOBJ"):
            pop()
            g = resolve(pop())
            if g:
                reduced.append(g)
            stack.append(None)
        elif name == "NEWOBJ_EX":
            pop(), pop()
            g = resolve(pop())
            if g:
                reduced.append(g)
            stack.append(None)
        elif name == "OBJ":
            while stack and stack[-1] is not _MARK:
                g = resolve(stack.pop())
                if g:
                    reduced.append(g)
            pop()
            stack.append(None)
        elif name == "MARK":
            stack.append(_MARK)
        elif name in ("BINPUT", "LONG_BINPUT", "PUT"):
            if stack:
                memo[int(arg)] = stack[-1]
        elif name == "MEMOIZE":
            if stack:
                memo[len(memo)] = stack[-1]
        elif name in ("BINGET", "LONG_BINGET", "GET"):
            stack.append(memo.get(int(arg)))
        elif name in ("SHORT_BINUNICODE", "BINUNICODE", "BINUNICODE8", "UNICODE", "STRING",
                      "BINSTRING", "SHORT_BINSTRING"):
            stack.append(arg)
        elif name == "STOP":
            break
        else:
            before, after = op.stack_before, op.stack_after
            mark_at = next((i for i, x in enumerate(before) if x.name == "mark"), None)
            if mark_at is not None:
                while stack and stack[-1] is not _MARK:
                    stack.pop()
                pop()
                for _ in range(mark_at):  # entries sitting below the mark
                    pop()
            else:
                for _ in before:
                    pop()
            for _ in after:
                stack.append(None)

    if any(_classify(m, n) == "exec" for m, n in reduced):
        return 5
    if any(_classify(m, n) in ("exec", "indirect") for m, n in imports):
        return 4
    if imports:
        return 3
    return 0


def _iter_pickle_payloads(data: bytes):
    if data[:4] == b"PK\x03\x04":
        with zipfile.ZipFile(io.BytesIO(data)) as zf:
            for n in zf.namelist():
                if n.endswith(".pkl"):
                    yield zf.read(n)
    else:
        yield data


def reference_scan(data: bytes) -> dict:
    """Returns {"scanner": ..., "severity": int} for one fixture file."""
    try:
        import fickling.fickle as _fickle
        from fickling.analysis import check_safety

        severity = -1
        for payload in _iter_pickle_payloads(data):
            res = check_safety(_fickle.Pickled.load(payload))
            severity = max(severity, int(res.severity.value) - 1)  # enum is 1-based
        return {"scanner": "fickling", "severity": severity}
    except ImportError:
        severity = max(_scan_pickle_fallback(p) for p in _iter_pickle_payloads(data))
        return {"scanner": "fixturegen-fallback", "severity": severity}
