"""Operator CLI: scan, disarm, and MTD protect/load/verify.

Exit codes are a stable contract:
    0  clean / success
    2  findings present but handled (disarmed, threshold exceeded)
    3  input rejected (unreadable, unparseable, unknown format)
    4  MTD verification failure (alert raised)
    5  internal error
"""

import argparse
import concurrent.futures
import io
import json
import os
import sys
import zipfile
from pathlib import Path

from . import mtd as mtd_mod
from .analyzer import ScanReport, failed_report, scan
from .cdr import CdrConfig, DisarmStatus, OutputFormat, disarm_file
from .container import StateDict, TensorSpec, Dtype, extract_state_dict, open_container
from .machine import PmMode
from .mtd import AlertEvent, MalformedPackage, SigningKey, is_mtd_protected
from .opcodes import DecodeError
from .policy import load_ruleset
from .safetensors_io import deserialize as st_deserialize
from .store import DirectoryMappingStore, StoreRecord
from .stream import FormatKind, decode_stream, detect_format

EXIT_CLEAN = 0
EXIT_FINDINGS = 2
EXIT_REJECTED = 3
EXIT_VERIFY_FAILED = 4
EXIT_INTERNAL = 5

STORE_ENV = "MODELGUARD_STORE"


def _iter_files(paths) -> "list[Path]":
    out: list[Path] = []
    for p in paths:
        path = Path(p)
        if path.is_dir():
            out.extend(sorted(q for q in path.rglob("*") if q.is_file()))
        else:
            out.append(path)
    return out


def _scan_bytes(data: bytes) -> ScanReport:
    fmt = detect_format(data) if data else FormatKind.UNKNOWN
    if fmt is FormatKind.RAW_PICKLE:
        return scan(decode_stream(data))
    if fmt is FormatKind.ZIP_MODEL_CONTAINER:
        try:
            zf = zipfile.ZipFile(io.BytesIO(data))
            reports = [scan(decode_stream(zf.read(n))) for n in zf.namelist() if n.endswith(".pkl")]
        except Exception as exc:
            return failed_report(f"container unreadable: {exc}")
        if not reports:
            return failed_report("container has no pickle payload")
        return max(reports, key=lambda r: r.severity)
    if fmt is FormatKind.MTD_PACKAGE_FILE:
        return _no_pickle_report("mtd package: no pickle content")
    try:
        st_deserialize(data)
        return _no_pickle_report("safetensors: no pickle content")
    except Exception:
        pass
    return failed_report("unknown format")


def _no_pickle_report(note: str) -> ScanReport:
    from .analyzer import SeverityLevel

    return ScanReport(SeverityLevel.LIKELY_SAFE, [], [],
                      {"n_ops": 0, "n_globals": 0, "n_reduces": 0, "note": note})


def cmd_scan(args) -> int:
    files = _iter_files(args.paths)
    results = []
    worst = EXIT_CLEAN

    def one(path: Path):
        try:
            data = path.read_bytes()
        except OSError as exc:
            return path, None, f"unreadable: {exc}"
        try:
            return path, _scan_bytes(data), None
        except DecodeError as exc:
            return path, failed_report(str(exc)), None

    with concurrent.futures.ThreadPoolExecutor(max_workers=args.jobs) as pool:
        for path, report, error in pool.map(one, files):
            if error is not None:
                print(f"{path}: {error}", file=sys.stderr)
                worst = max(worst, EXIT_REJECTED)
                results.append({"path": str(path), "error": error})
                continue
            line = f"{path}: severity {int(report.severity)} ({report.severity.label})"
            if report.findings:
                line += f", {len(report.findings)} finding(s)"
            print(line)
            if int(report.severity) > args.max_severity:
                worst = max(worst, EXIT_FINDINGS)
            results.append({"path": str(path), **report.to_json()})

    if args.json:
        Path(args.json).write_text(json.dumps(results, indent=2) + "\n")
    return worst


def _pick_format(name: str, data: bytes) -> OutputFormat:
    if name != "auto":
        return OutputFormat(name)
    if detect_format(data) is FormatKind.ZIP_MODEL_CONTAINER:
        return OutputFormat.SAFETENSORS
    return OutputFormat.CLEAN_PICKLE


_SUFFIX = {
    OutputFormat.SAFETENSORS: ".safetensors",
    OutputFormat.CLEAN_PICKLE: ".clean.pkl",
    OutputFormat.CLEAN_CONTAINER: ".clean.pt",
}


def cmd_disarm(args) -> int:
    path = Path(args.input)
    try:
        data = path.read_bytes()
    except OSError as exc:
        print(f"{path}: unreadable: {exc}", file=sys.stderr)
        return EXIT_REJECTED
    out_format = _pick_format(args.format, data)
    cfg = CdrConfig(
        ruleset=load_ruleset(args.policy),
        output_format=out_format,
        mode=PmMode.STRICT_FIND_CLASS if args.mode == "strict" else PmMode.SAFE_REDUCE_GATE,
    )
    output, report = disarm_file(data, cfg)
    out_path = Path(args.output) if args.output else path.with_suffix(_SUFFIX[out_format])
    report_path = Path(args.report) if args.report else Path(str(out_path) + ".report.json")
    report_path.write_text(json.dumps(report.to_json(), indent=2) + "\n")
    if report.status is DisarmStatus.REJECTED:
        print(f"{path}: rejected ({report.reason}); report: {report_path}")
        return EXIT_REJECTED
    out_path.write_bytes(output)
    before, after = int(report.scan_before.severity), int(report.scan_after.severity)
    print(f"{path}: {report.status.value}, severity {before} -> {after}, "
          f"{len(report.blocked)} blocked call(s)")
    print(f"  output: {out_path}")
    print(f"  report: {report_path}")
    print(f"  cross-check: fickling --check-safety {out_path}" if out_format is OutputFormat.CLEAN_PICKLE
          else f"  cross-check: point your reference scanner at {out_path}")
    return EXIT_CLEAN if report.status is DisarmStatus.CLEAN else EXIT_FINDINGS


def _read_key(path: str) -> SigningKey:
    raw = Path(path).read_bytes()
    if len(raw) == 64:  # hex-encoded
        raw = bytes.fromhex(raw.decode("ascii").strip())
    return SigningKey.from_bytes(raw)


def _store_dir(args) -> Path:
    spec = args.store_dir or os.environ.get(STORE_ENV)
    if not spec:
        raise SystemExit(f"--store-dir or ${STORE_ENV} is required")
    return Path(spec)


def _load_state_dict(path: Path) -> StateDict:
    data = path.read_bytes()
    fmt = detect_format(data)
    if fmt is FormatKind.ZIP_MODEL_CONTAINER:
        sd, result = extract_state_dict(open_container(data), load_ruleset("TORCH"))
        if not result.ok:
            raise SystemExit(f"{path}: container load failed: {result.failure}")
        if result.blocked:
            print(f"warning: {len(result.blocked)} blocked call(s) dropped while reading {path}",
                  file=sys.stderr)
        return sd
    if data[:8] and not is_mtd_protected(data):
        try:
            tensors, _ = st_deserialize(data)
            sd = StateDict()
            for t in tensors:
                stride = _contig(t.shape)
                sd.append(TensorSpec(t.name, Dtype(t.dtype), t.shape, stride, 0, "", t.data))
            return sd
        except Exception:
            pass
    raise SystemExit(f"{path}: not a model container or safetensors file")


def _contig(shape):
    stride = [1] * len(shape)
    for i in range(len(shape) - 2, -1, -1):
        stride[i] = stride[i + 1] * shape[i + 1]
    return tuple(stride)


def cmd_mtd_protect(args) -> int:
    import time

    sd = _load_state_dict(Path(args.model))
    key = _read_key(args.key)
    store = DirectoryMappingStore(_store_dir(args))
    if args.bench:
        from .mtd import obfuscate_tensor

        obfuscate_tensor(bytes(4 * 4096), 4, 1)  # pay the JIT cost off the clock
    t0 = time.perf_counter()
    pkg, mapping = mtd_mod.protect(sd, key)
    t1 = time.perf_counter()
    out = Path(args.out) if args.out else Path(args.model).with_suffix(".mtd")
    blob = pkg.serialize()
    out.write_bytes(blob)
    t2 = time.perf_counter()
    store.put_mapping(StoreRecord.for_mapping(mapping, pkg.weights_hash), key.verify_bytes)
    print(f"protected {args.model} -> {out}")
    print(f"  model_id {pkg.model_id.hex()}  mapping_id {pkg.mapping_id.hex()}")
    if args.bench:
        size_mb = sd.total_bytes() / 1e6
        print(f"  bench: size_mb={size_mb:.1f} obfuscate_s={t1 - t0:.3f} save_s={t2 - t1:.3f}")
    return EXIT_CLEAN


def _mtd_load_common(args) -> "tuple[StateDict | AlertEvent | None, int]":
    path = Path(args.model)
    data = path.read_bytes()
    if not is_mtd_protected(data):
        return None, EXIT_CLEAN
    key = _read_key(args.key)
    store = DirectoryMappingStore(_store_dir(args))
    try:
        result = mtd_mod.load(data, store, key.verify_bytes)
    except MalformedPackage as exc:
        print(f"{path}: malformed package: {exc}", file=sys.stderr)
        return None, EXIT_REJECTED
    return result, EXIT_CLEAN


def cmd_mtd_load(args) -> int:
    path = Path(args.model)
    data = path.read_bytes()
    if not is_mtd_protected(data):
        print(f"{path}: not MTD protected; falling back to CDR")
        args.input = args.model
        args.format = "auto"
        args.policy = "TORCH"
        args.mode = "safe"
        args.output = args.out
        args.report = None
        return cmd_disarm(args)
    result, code = _mtd_load_common(args)
    if code != EXIT_CLEAN:
        return code
    if isinstance(result, AlertEvent):
        print(json.dumps(result.to_json(), indent=2))
        return EXIT_VERIFY_FAILED
    out = Path(args.out) if args.out else path.with_suffix(".safetensors")
    from .container import write_safetensors

    out.write_bytes(write_safetensors(result))
    print(f"verified and reconstructed {path} -> {out} ({len(result)} tensors)")
    return EXIT_CLEAN


def cmd_mtd_verify(args) -> int:
    result, code = _mtd_load_common(args)
    if code != EXIT_CLEAN:
        return code
    if result is None:
        print(f"{args.model}: not an MTD package", file=sys.stderr)
        return EXIT_REJECTED
    if isinstance(result, AlertEvent):
        print(json.dumps(result.to_json(), indent=2))
        return EXIT_VERIFY_FAILED
    print(f"{args.model}: verified ({len(result)} tensors, bit-exact reconstruction)")
    return EXIT_CLEAN


def cmd_mtd_keygen(args) -> int:
    key = SigningKey.generate()
    out = Path(args.out)
    out.write_bytes(key.private_bytes)
    try:
        out.chmod(0o600)
    except OSError:
        pass
    print(f"private key written to {out}")
    print(f"public key: {key.verify_bytes.hex()}")
    return EXIT_CLEAN


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="modelguard",
                                 description="model-file security: scan, disarm, MTD-protect")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scan", help="static severity scan of pickle/model files")
    p.add_argument("paths", nargs="+")
    p.add_argument("--policy", default="FICKLING", help="(reserved for rule-aware scans)")
    p.add_argument("--json", help="write the aggregated JSON report here")
    p.add_argument("--max-severity", type=int, default=3)
    p.add_argument("--jobs", type=int, default=min(8, (os.cpu_count() or 1) * 2))
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("disarm", help="CDR: safely load and re-emit a clean model")
    p.add_argument("input")
    p.add_argument("--output", "-o")
    p.add_argument("--format", choices=["safetensors", "pickle", "container", "auto"], default="auto")
    p.add_argument("--policy", default="TORCH", help="builtin ruleset name or JSON file")
    p.add_argument("--mode", choices=["safe", "strict"], default="safe")
    p.add_argument("--report")
    p.set_defaults(func=cmd_disarm)

    p = sub.add_parser("mtd", help="moving-target defense for model weights")
    mtd_sub = p.add_subparsers(dest="mtd_command", required=True)

    q = mtd_sub.add_parser("protect", help="obfuscate, sign, and register a model")
    q.add_argument("model")
    q.add_argument("--key", required=True, help="32-byte private key file")
    q.add_argument("--store-dir", help=f"mapping store directory (or ${STORE_ENV})")
    q.add_argument("--out")
    q.add_argument("--bench", action="store_true", help="print timing rows")
    q.set_defaults(func=cmd_mtd_protect)

    q = mtd_sub.add_parser("load", help="verify and reconstruct (CDR fallback for foreign files)")
    q.add_argument("model")
    q.add_argument("--key", required=True)
    q.add_argument("--store-dir")
    q.add_argument("--out")
    q.set_defaults(func=cmd_mtd_load)

    q = mtd_sub.add_parser("verify", help="verify a package without writing output")
    q.add_argument("model")
    q.add_argument("--key", required=True)
    q.add_argument("--store-dir")
    q.set_defaults(func=cmd_mtd_verify)

    q = mtd_sub.add_parser("keygen", help="generate a signing key")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_mtd_keygen)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except BrokenPipeError:
        return EXIT_CLEAN
    except Exception as exc:  # the 5 contract: never a bare traceback
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    raise SystemExit(main())
