"""Content disarm and reconstruction: detect, safely load, re-emit clean.

The pipeline never trusts its input: the source file's bytes are parsed
and interpreted under policy, and the output is freshly generated from
the surviving tree, so nothing from the source stream is copied
verbatim. Safetensors output removes the pickle layer entirely and
rescans at severity 0 by construction.
"""

import hashlib
import io
import sys
import zipfile
from dataclasses import dataclass
from enum import Enum

from . import machine as pm
from .analyzer import ScanReport, SeverityLevel, failed_report, scan
from .container import (
    ContainerError,
    StateDict,
    extract_state_dict,
    open_container,
    write_container,
    write_safetensors,
)
from .emit import emit_pickle
from .machine import LoadResult, LoadStatus, PmMode
from .nodes import BlockedEvent, Disarmed, GlobalRef, PersistentRef, Reduced
from .opcodes import DecodeError
from .policy import Ruleset, check_call
from .stream import FormatKind, decode_stream, detect_format


class OutputFormat(Enum):
    SAFETENSORS = "safetensors"
    CLEAN_PICKLE = "pickle"
    CLEAN_CONTAINER = "container"


class DisarmStatus(Enum):
    CLEAN = "clean"
    DISARMED = "disarmed"
    REJECTED = "rejected"


@dataclass
class CdrConfig:
    ruleset: Ruleset
    output_format: OutputFormat = OutputFormat.SAFETENSORS
    mode: PmMode = PmMode.SAFE_REDUCE_GATE
    weight_disarm_hook: "object | None" = None  # StateDict -> StateDict
    placeholder: str = "auto"  # auto: omit map entries, None for positions
    emit_protocol: int = 4


@dataclass
class DisarmReport:
    input_format: FormatKind
    scan_before: ScanReport
    scan_after: ScanReport
    blocked: "list[BlockedEvent]"
    status: DisarmStatus
    reason: str = ""
    output_digest: str = ""

    def to_json(self) -> dict:
        return {
            "report_version": 1,
            "input_format": self.input_format.value,
            "status": self.status.value,
            "reason": self.reason,
            "scan_before": self.scan_before.to_json(),
            "scan_after": self.scan_after.to_json(),
            "blocked": [b.to_json() for b in self.blocked],
            "output_digest": self.output_digest,
        }


def _no_pickle_report() -> ScanReport:
    return ScanReport(SeverityLevel.LIKELY_SAFE, [], [], {"n_ops": 0, "n_globals": 0, "n_reduces": 0})


def _rejected(fmt: FormatKind, reason: str, before: "ScanReport | None" = None) -> "tuple[None, DisarmReport]":
    return None, DisarmReport(
        input_format=fmt,
        scan_before=before or failed_report(reason),
        scan_after=failed_report("no output"),
        blocked=[],
        status=DisarmStatus.REJECTED,
        reason=reason,
    )


def strip_disarmed(root, ruleset: Ruleset, placeholder: str = "auto"):
    """Rebuild the tree without Disarmed nodes and blocked import refs.

    placeholder "auto" omits blocked map entries and replaces blocked
    positional slots with None; "none" always substitutes None; "omit"
    drops map entries and list items, substituting None where nothing
    can be dropped (tuple slots, call arguments, the root).
    """

    memo: dict[int, object] = {}

    def is_blocked(node) -> bool:
        if isinstance(node, Disarmed):
            return True
        return isinstance(node, GlobalRef) and not check_call(ruleset, node, None).allow

    def go(node, *, in_map: bool):
        key = id(node)
        if key in memo:
            return memo[key]
        if is_blocked(node):
            return _OMIT if (in_map and placeholder in ("auto", "omit")) else None
        if isinstance(node, list):
            out: list = []
            memo[key] = out
            for item in node:
                r = go(item, in_map=(placeholder == "omit"))
                if r is not _OMIT:
                    out.append(r)
            return out
        if isinstance(node, tuple):
            out_t = tuple(x for x in (go(i, in_map=False) for i in node))
            memo[key] = out_t
            return out_t
        if isinstance(node, dict):
            out_d: dict = {}
            memo[key] = out_d
            for k, v in node.items():
                if is_blocked(k):
                    continue
                r = go(v, in_map=True)
                if r is not _OMIT:
                    out_d[go(k, in_map=False)] = r
            return out_d
        if isinstance(node, set):
            return {go(x, in_map=False) for x in node if not is_blocked(x)}
        if isinstance(node, frozenset):
            return frozenset(go(x, in_map=False) for x in node if not is_blocked(x))
        if isinstance(node, Reduced):
            out_r = Reduced(node.callee, tuple(go(a, in_map=False) for a in node.args))
            memo[key] = out_r
            if node.built_state is not None:
                out_r.built_state = go(node.built_state, in_map=False)
            if node.items_state is not None:
                out_r.items_state = go(node.items_state, in_map=False)
            if node.kwargs is not None:
                out_r.kwargs = go(node.kwargs, in_map=False)
            return out_r
        if isinstance(node, PersistentRef):
            out_p = PersistentRef(go(node.pid, in_map=False))
            memo[key] = out_p
            return out_p
        return node

    limit = sys.getrecursionlimit()
    try:
        sys.setrecursionlimit(100_000)
        result = go(root, in_map=False)
    finally:
        sys.setrecursionlimit(limit)
    return None if result is _OMIT else result


_OMIT = object()


def _scan_container_bytes(data: bytes) -> ScanReport:
    """Worst-case severity over every pickle payload in a container."""
    try:
        zf = zipfile.ZipFile(io.BytesIO(data))
        reports = [
            scan(decode_stream(zf.read(name)))
            for name in zf.namelist()
            if name.endswith(".pkl")
        ]
    except Exception as exc:
        return failed_report(str(exc))
    if not reports:
        return failed_report("container has no pickle payload")
    return max(reports, key=lambda r: r.severity)


def disarm_file(data: bytes, cfg: CdrConfig) -> "tuple[bytes | None, DisarmReport]":
    """Run the full pipeline on one file; returns (output bytes, report)."""
    if not data:
        return _rejected(FormatKind.UNKNOWN, "UnknownFormat: empty input")
    fmt = detect_format(data)
    if fmt is FormatKind.UNKNOWN:
        return _rejected(fmt, "UnknownFormat")
    if fmt is FormatKind.MTD_PACKAGE_FILE:
        return _rejected(fmt, "UnknownFormat: MTD package, load it through the MTD path")
    if fmt is FormatKind.RAW_PICKLE:
        return _disarm_raw(data, cfg)
    return _disarm_container(data, cfg)


def _disarm_raw(data: bytes, cfg: CdrConfig) -> "tuple[bytes | None, DisarmReport]":
    try:
        program = decode_stream(data)
    except DecodeError as exc:
        return _rejected(FormatKind.RAW_PICKLE, f"DecodeError: {exc}")
    before = scan(program)
    result = pm.run(program, cfg.ruleset, mode=cfg.mode)
    if result.status is LoadStatus.FAILED:
        return _rejected(FormatKind.RAW_PICKLE, f"LoadFailed: {result.failure}", before)
    if cfg.output_format is not OutputFormat.CLEAN_PICKLE:
        return _rejected(
            FormatKind.RAW_PICKLE,
            "NothingLoadable: raw pickles carry no tensors; use pickle output",
            before,
        )
    stripped = strip_disarmed(result.root, cfg.ruleset, cfg.placeholder)
    try:
        output = emit_pickle(stripped, cfg.emit_protocol, cfg.ruleset)
    except ValueError as exc:
        return _rejected(FormatKind.RAW_PICKLE, f"EmitFailed: {exc}", before)
    after = scan(decode_stream(output))
    return output, _report(FormatKind.RAW_PICKLE, before, after, result, output)


def _disarm_container(data: bytes, cfg: CdrConfig) -> "tuple[bytes | None, DisarmReport]":
    try:
        container = open_container(data)
    except ContainerError as exc:
        return _rejected(FormatKind.ZIP_MODEL_CONTAINER, f"DecodeError: {exc}")
    try:
        before = scan(decode_stream(container.data_pkl))
    except DecodeError as exc:
        return _rejected(FormatKind.ZIP_MODEL_CONTAINER, f"DecodeError: {exc}")
    try:
        sd, result = extract_state_dict(container, cfg.ruleset, mode=cfg.mode)
    except ContainerError as exc:
        return _rejected(FormatKind.ZIP_MODEL_CONTAINER, f"DecodeError: {exc}", before)
    if result.status is LoadStatus.FAILED:
        return _rejected(FormatKind.ZIP_MODEL_CONTAINER, f"LoadFailed: {result.failure}", before)
    if cfg.output_format is OutputFormat.CLEAN_PICKLE:
        return _rejected(
            FormatKind.ZIP_MODEL_CONTAINER,
            "NothingLoadable: container tensors need safetensors or container output",
            before,
        )
    if not len(sd):
        return _rejected(
            FormatKind.ZIP_MODEL_CONTAINER,
            "NothingLoadable: no tensors survived the load",
            before,
        )
    if cfg.weight_disarm_hook is not None:
        sd = cfg.weight_disarm_hook(sd)
        if not isinstance(sd, StateDict):
            raise TypeError("weight_disarm_hook must return a StateDict")
    if cfg.output_format is OutputFormat.SAFETENSORS:
        output = write_safetensors(sd)
        after = _no_pickle_report()
    else:
        output = write_container(sd)
        after = _scan_container_bytes(output)
    return output, _report(FormatKind.ZIP_MODEL_CONTAINER, before, after, result, output)


def _report(fmt: FormatKind, before: ScanReport, after: ScanReport,
            result: LoadResult, output: bytes) -> DisarmReport:
    status = DisarmStatus.DISARMED if result.blocked else DisarmStatus.CLEAN
    return DisarmReport(
        input_format=fmt,
        scan_before=before,
        scan_after=after,
        blocked=list(result.blocked),
        status=status,
        output_digest=hashlib.sha256(output).hexdigest(),
    )
