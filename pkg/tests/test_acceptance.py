"""Acceptance criteria, one test per criterion, one PASS/FAIL line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines as
they print. Every tolerance is pinned here; nothing is calibrated at
run time.
"""

import io
import json
import os
import time
import zipfile
from pathlib import Path

import numpy as np
import pytest

from modelguard.analyzer import scan
from modelguard.cdr import CdrConfig, DisarmStatus, OutputFormat, disarm_file
from modelguard.container import Dtype, extract_state_dict, open_container
from modelguard.machine import LoadStatus, PmMode, run
from modelguard.mtd import (
    AlertEvent,
    MalformedPackage,
    MtdPackage,
    SigningKey,
    deobfuscate_tensor,
    load,
    obfuscate_tensor,
    protect,
)
from modelguard.nodes import to_canonical_dump
from modelguard.policy import builtin_rulesets, check_call
from modelguard.safetensors_io import deserialize as our_st_read
from modelguard.store import InMemoryMappingStore, StoreRecord
from modelguard.stream import decode_stream

from conftest import FIXTURES, Watchdog, b64, entries_of, fixture_bytes, oracle_json

TORCH = builtin_rulesets()["TORCH"]
FICKLING = builtin_rulesets()["FICKLING"]
KEY = SigningKey.from_bytes(bytes(range(32)))


def _report(number: int, name: str, ok: bool, detail: str) -> None:
    verdict = "PASS" if ok else "FAIL"
    print(f"[criterion {number}] {verdict} — {name}: {detail}", flush=True)
    assert ok, f"criterion {number} ({name}): {detail}"


def _extract(entry):
    return extract_state_dict(open_container(fixture_bytes(entry)), TORCH)


def _tensor_dump_matches(sd, oracle_tensors) -> bool:
    if sd.names() != [t["name"] for t in oracle_tensors]:
        return False
    for got, want in zip(sd, oracle_tensors):
        if got.dtype.name != want["dtype"] or list(got.shape) != want["shape"]:
            return False
        if got.data != b64(want["data"]):
            return False
    return True


def test_criterion_1_benign_load_parity(manifest):
    """100% of the benign corpus loads with oracle equality in < 60 s."""
    t0 = time.perf_counter()
    mismatches = []
    pickles = entries_of(manifest, "benign_pickle")
    containers = entries_of(manifest, "benign_container")
    for entry in pickles:
        result = run(decode_stream(fixture_bytes(entry)), TORCH)
        if result.status is not LoadStatus.COMPLETE or to_canonical_dump(result.root) != \
                oracle_json(entry, "oracle_value_dump")["root"]:
            mismatches.append(entry["path"])
    for entry in containers:
        sd, result = _extract(entry)
        if result.status is not LoadStatus.COMPLETE or not _tensor_dump_matches(
                sd, oracle_json(entry, "oracle_value_dump")["tensors"]):
            mismatches.append(entry["path"])
    elapsed = time.perf_counter() - t0
    total = len(pickles) + len(containers)
    ok = not mismatches and total >= 200 and elapsed < 60.0
    _report(1, "benign load parity",
            ok, f"{total - len(mismatches)}/{total} files bit/structure-exact in {elapsed:.1f}s"
                + (f"; mismatches: {mismatches[:3]}" if mismatches else ""))


def test_criterion_2_attack_mitigation(manifest):
    """No canary fires, every blocked call is reported, outputs stay in
    the allowlist. Zero exceptions."""
    failures = []
    canary = manifest["canary_dir"]
    with Watchdog(canary) as dog:
        for entry in entries_of(manifest, "malicious_pickle", "malicious_container"):
            data = fixture_bytes(entry)
            is_container = entry["kind"] == "malicious_container"
            fmt = OutputFormat.CLEAN_CONTAINER if is_container else OutputFormat.CLEAN_PICKLE
            output, report = disarm_file(data, CdrConfig(ruleset=TORCH, output_format=fmt))
            if report.status is DisarmStatus.REJECTED:
                if "NothingLoadable" not in report.reason:
                    failures.append((entry["path"], report.reason))
                continue
            if not report.blocked:
                failures.append((entry["path"], "no blocked calls reported"))
                continue
            # the emitted pickle content must import only allowlisted names
            payloads = []
            if is_container:
                zf = zipfile.ZipFile(io.BytesIO(output))
                payloads = [zf.read(n) for n in zf.namelist() if n.endswith(".pkl")]
            else:
                payloads = [output]
            for payload in payloads:
                for ref in scan(decode_stream(payload)).imports:
                    if not check_call(TORCH, ref, None).allow:
                        failures.append((entry["path"], f"output imports {ref.fqn()}"))
    dog.assert_clean()
    canary_ok = not os.path.exists(canary)
    total = len(entries_of(manifest, "malicious_pickle", "malicious_container"))
    _report(2, "attack mitigation 100%",
            not failures and canary_ok,
            f"{total}/{total} attacks disarmed, canary never created"
            + (f"; failures: {failures[:3]}" if failures else ""))


def test_criterion_3_partial_load_superiority(manifest):
    """Safe mode recovers every benign tensor from mixed containers;
    the find_class baseline fails on all of them."""
    mixed = [e for e in entries_of(manifest, "malicious_container")
             if oracle_json(e, "oracle_value_dump")["tensors"]]
    safe_ok = strict_fail = 0
    problems = []
    for entry in mixed:
        sd, result = _extract(entry)
        want = oracle_json(entry, "oracle_value_dump")["tensors"]
        if result.status is LoadStatus.PARTIALLY_DISARMED and _tensor_dump_matches(sd, want):
            safe_ok += 1
        else:
            problems.append((entry["path"], result.status.value))
        _, strict = extract_state_dict(open_container(fixture_bytes(entry)), TORCH,
                                       mode=PmMode.STRICT_FIND_CLASS)
        if strict.status is LoadStatus.FAILED:
            strict_fail += 1
        else:
            problems.append((entry["path"], f"strict {strict.status.value}"))
    ok = safe_ok == len(mixed) and strict_fail == len(mixed) and len(mixed) >= 3
    _report(3, "partial-load superiority", ok,
            f"safe recovered {safe_ok}/{len(mixed)} mixed containers, "
            f"baseline failed {strict_fail}/{len(mixed)}"
            + (f"; problems: {problems[:3]}" if problems else ""))


def test_criterion_4_severity_transitions(manifest):
    """Exact before/after transitions across the corpus."""
    wrong = []

    def check(data, cfg, want_before, want_after, label):
        output, report = disarm_file(data, cfg)
        got = (int(report.scan_before.severity), int(report.scan_after.severity))
        if report.status is DisarmStatus.REJECTED or got != (want_before, want_after):
            wrong.append((label, got, (want_before, want_after)))

    for entry in entries_of(manifest, "malicious_container"):
        if not oracle_json(entry, "oracle_value_dump")["tensors"]:
            continue  # no loadable benign remainder
        before = entry["reference_scan"]["severity"]
        check(fixture_bytes(entry), CdrConfig(ruleset=TORCH, output_format=OutputFormat.CLEAN_CONTAINER),
              before, 3, entry["path"])
        # safetensors output has no pickle left; rescans at 0
        output, report = disarm_file(fixture_bytes(entry),
                                     CdrConfig(ruleset=TORCH, output_format=OutputFormat.SAFETENSORS))
        if int(report.scan_after.severity) != 0:
            wrong.append((entry["path"] + " (safetensors)", int(report.scan_after.severity), 0))

    for entry in entries_of(manifest, "malicious_pickle"):
        if entry["attack_class"] != "config_style":
            continue
        check(fixture_bytes(entry), CdrConfig(ruleset=TORCH, output_format=OutputFormat.CLEAN_PICKLE),
              4, 3, entry["path"])

    for entry in entries_of(manifest, "benign_container")[:6]:
        check(fixture_bytes(entry), CdrConfig(ruleset=TORCH, output_format=OutputFormat.CLEAN_CONTAINER),
              3, 3, entry["path"])

    _report(4, "severity transitions", not wrong,
            "5->3 / 4->3 containers, 4->3 wrappers, 3->3 benign, safetensors->0"
            + (f"; wrong: {wrong[:4]}" if wrong else ""))


def _fixture_state_dicts(manifest, limit=10):
    for entry in entries_of(manifest, "benign_container")[:limit]:
        sd, result = _extract(entry)
        if result.status is LoadStatus.COMPLETE and len(sd):
            yield entry["path"], sd


def test_criterion_5_mtd_qa_triple(manifest):
    rng = np.random.default_rng(2024)
    # (a) obfuscate -> deobfuscate bit identity on all fixture models
    a_bad = []
    for path, sd in _fixture_state_dicts(manifest, limit=50):
        for t in sd:
            seed = int(rng.integers(0, 2**63))
            round_tripped = deobfuscate_tensor(
                obfuscate_tensor(t.data, t.dtype.element_size, seed), t.dtype.element_size, seed)
            if round_tripped != t.data:
                a_bad.append((path, t.name))

    # (b) save -> load bit identity through the full package + store chain
    b_bad = []
    store_pairs = []
    for path, sd in _fixture_state_dicts(manifest, limit=10):
        pkg, mapping = protect(sd, KEY, rng=rng)
        store = InMemoryMappingStore()
        store.put_mapping(StoreRecord.for_mapping(mapping, pkg.weights_hash), KEY.verify_bytes)
        out = load(pkg.serialize(), store, KEY.verify_bytes)
        if not hasattr(out, "names") or [t.data for t in out] != [t.data for t in sd]:
            b_bad.append(path)
        else:
            store_pairs.append((pkg, store))

    # (c) >= 1000 random single-bit tamper trials, zero missed detections
    pkg, store = store_pairs[0]
    blob = pkg.serialize()
    header = 8 + 2
    regions = [(header, header + 16), (header + 16, header + 32),
               (header + 32, header + 64), (header + 72, len(blob) - 64),
               (len(blob) - 64, len(blob))]
    missed = 0
    trials = 0
    for _ in range(1000):
        lo, hi = regions[int(rng.integers(0, len(regions)))]
        bit = int(rng.integers(lo * 8, hi * 8))
        tampered = bytearray(blob)
        tampered[bit // 8] ^= 1 << (bit % 8)
        trials += 1
        try:
            out = load(bytes(tampered), store, KEY.verify_bytes)
        except MalformedPackage:
            continue  # structural refusal: still no state dict returned
        if not isinstance(out, AlertEvent):
            missed += 1
    # plus tamper trials against the stored mapping record
    for _ in range(100):
        pkg2, store2 = store_pairs[1 % len(store_pairs)]
        rec = next(iter(store2._records.values()))
        blob2 = bytearray(rec.mapping_blob)
        blob2[int(rng.integers(0, len(blob2)))] ^= 1 << int(rng.integers(0, 8))
        import dataclasses

        bad_store = InMemoryMappingStore()
        bad_store._records[rec.mapping_id] = dataclasses.replace(rec, mapping_blob=bytes(blob2))
        trials += 1
        out = load(pkg2.serialize(), bad_store, KEY.verify_bytes)
        if not isinstance(out, AlertEvent):
            missed += 1

    ok = not a_bad and not b_bad and missed == 0 and trials >= 1000
    _report(5, "MTD QA triple", ok,
            f"(a) {'bit-exact' if not a_bad else a_bad[:2]}, "
            f"(b) {'bit-exact' if not b_bad else b_bad[:2]}, "
            f"(c) {trials - missed}/{trials} tampers detected")


def test_criterion_6_mtd_runtime_scaling():
    """Obfuscation time grows linearly with payload size: R^2 >= 0.9,
    positive slope. Absolute constants are not asserted."""
    obfuscate_tensor(bytes(4 * 4096), 4, 1)  # warm the jitted kernel
    sizes_mb = [16, 64, 256, 1024]
    times = []
    for mb in sizes_mb:
        data = bytes(mb * 1024 * 1024)
        t0 = time.perf_counter()
        out = obfuscate_tensor(data, 4, 12345)
        times.append(time.perf_counter() - t0)
        del data, out
    x = np.array(sizes_mb, dtype=np.float64)
    y = np.array(times, dtype=np.float64)
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 - ss_res / ss_tot
    ok = r2 >= 0.9 and slope > 0
    detail = ", ".join(f"{mb}MB={t:.2f}s" for mb, t in zip(sizes_mb, times))
    _report(6, "MTD runtime scaling", ok, f"{detail}; R^2={r2:.4f}, slope={slope * 1e3:.3f} ms/MB")


def test_criterion_7_format_conformance(manifest, tmp_path):
    safetensors_numpy = pytest.importorskip("safetensors.numpy")
    bad = []
    checked = 0
    for entry in entries_of(manifest, "benign_container"):
        sd, _ = _extract(entry)
        from modelguard.container import write_safetensors

        blob = write_safetensors(sd)
        # independent reference reader must see identical content
        if not any(t.dtype is Dtype.bf16 for t in sd):
            path = tmp_path / "x.safetensors"
            path.write_bytes(blob)
            loaded = safetensors_numpy.load_file(str(path))
            if list(loaded) != sd.names() or any(loaded[t.name].tobytes() != t.data for t in sd):
                bad.append((entry["path"], "reference reader mismatch"))
        # reference-written oracle files must parse identically under ours
        oracle_blob = (FIXTURES / entry["oracle_safetensors"]).read_bytes()
        parsed, _m = our_st_read(oracle_blob)
        want = {t["name"]: t for t in oracle_json(entry, "oracle_value_dump")["tensors"]}
        for t in parsed:
            if t.dtype != want[t.name]["dtype"] or t.data != b64(want[t.name]["data"]):
                bad.append((entry["path"], "our reader vs oracle mismatch"))
        checked += 1
    # MTD packages round-trip bit-exactly
    sd, _ = _extract(entries_of(manifest, "benign_container")[0])
    pkg, _mapping = protect(sd, KEY, rng=np.random.default_rng(3))
    blob = pkg.serialize()
    if MtdPackage.parse(blob).serialize() != blob:
        bad.append(("mtd-package", "parse/serialize not bit-exact"))
    _report(7, "format conformance", not bad,
            f"{checked} containers cross-read + MTD package bit-exact"
            + (f"; bad: {bad[:3]}" if bad else ""))


def test_criterion_8_zero_execution(manifest, tmp_path):
    """Interpreting the whole malicious corpus performs no writes outside
    the designated output directory, spawns nothing, and opens no sockets."""
    canary = manifest["canary_dir"]
    outdir = tmp_path / "outputs"
    outdir.mkdir()
    cwd_before = set(os.listdir("."))
    fixture_state = {
        p: (p.stat().st_size, p.stat().st_mtime_ns)
        for p in (FIXTURES).rglob("*") if p.is_file()
    }
    with Watchdog(canary) as dog:
        for entry in entries_of(manifest, "malicious_pickle", "malicious_container"):
            data = fixture_bytes(entry)
            if entry["kind"] == "malicious_pickle":
                run(decode_stream(data), FICKLING)
                run(decode_stream(data), FICKLING, mode=PmMode.STRICT_FIND_CLASS)
                output, report = disarm_file(data, CdrConfig(ruleset=FICKLING,
                                                             output_format=OutputFormat.CLEAN_PICKLE))
            else:
                extract_state_dict(open_container(data), TORCH)
                output, report = disarm_file(data, CdrConfig(ruleset=TORCH))
            if output is not None:
                (outdir / Path(entry["path"]).name).write_bytes(output)
    dog.assert_clean()
    untouched = all(
        (p.stat().st_size, p.stat().st_mtime_ns) == stamp
        for p, stamp in fixture_state.items()
    )
    cwd_clean = set(os.listdir(".")) == cwd_before
    no_canary = not os.path.exists(canary)
    ok = untouched and cwd_clean and no_canary and not dog.violations
    _report(8, "zero-execution property", ok,
            f"corpus interpreted; spawn/network hooks untouched, fixtures unmodified, "
            f"writes confined to {outdir.name}/")
