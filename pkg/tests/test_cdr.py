"""End-to-end disarm pipeline: statuses, severity transitions, fidelity."""

import hashlib
import pickle

from modelguard.cdr import CdrConfig, DisarmStatus, OutputFormat, disarm_file, strip_disarmed
from modelguard.container import extract_state_dict, open_container
from modelguard.machine import PmMode, run
from modelguard.nodes import structural_equal
from modelguard.policy import builtin_rulesets
from modelguard.safetensors_io import deserialize
from modelguard.stream import FormatKind, decode_stream

from conftest import entries_of, fixture_bytes

TORCH = builtin_rulesets()["TORCH"]
FICKLING = builtin_rulesets()["FICKLING"]


def cfg(fmt=OutputFormat.CLEAN_PICKLE, ruleset=TORCH, **kw):
    return CdrConfig(ruleset=ruleset, output_format=fmt, **kw)


def test_benign_pickle_clean_0_to_0():
    data = pickle.dumps([1, 2.5, "three"], protocol=4)
    output, report = disarm_file(data, cfg())
    assert report.status is DisarmStatus.CLEAN
    assert int(report.scan_before.severity) == 0
    assert int(report.scan_after.severity) == 0
    again = run(decode_stream(output), TORCH)
    assert structural_equal(again.root, [1, 2.5, "three"])


def test_unknown_format_rejected():
    output, report = disarm_file(b"\x00\x01garbage", cfg())
    assert output is None
    assert report.status is DisarmStatus.REJECTED
    assert "UnknownFormat" in report.reason


def test_undecodable_pickle_rejected():
    output, report = disarm_file(b"N", cfg())
    assert report.status is DisarmStatus.REJECTED


def test_zpbrent_style_wrapper_4_to_3(manifest):
    for entry in entries_of(manifest, "malicious_pickle"):
        if entry["attack_class"] != "config_style":
            continue
        output, report = disarm_file(fixture_bytes(entry), cfg())
        assert report.status is DisarmStatus.DISARMED, entry["path"]
        assert int(report.scan_before.severity) == 4, entry["path"]
        assert int(report.scan_after.severity) == 3, entry["path"]


def test_malicious_container_to_safetensors(manifest):
    entry = next(e for e in entries_of(manifest, "malicious_container")
                 if "mixed_system" in e["path"])
    output, report = disarm_file(fixture_bytes(entry), cfg(OutputFormat.SAFETENSORS))
    assert report.status is DisarmStatus.DISARMED
    assert int(report.scan_before.severity) == 5
    assert int(report.scan_after.severity) == 0  # no pickle in the output
    tensors, _ = deserialize(output)
    assert {t.name for t in tensors} == {"lin.weight", "lin.bias"}


def test_malicious_container_to_container_5_to_3(manifest):
    entry = next(e for e in entries_of(manifest, "malicious_container")
                 if "mixed_system" in e["path"])
    output, report = disarm_file(fixture_bytes(entry), cfg(OutputFormat.CLEAN_CONTAINER))
    assert report.status is DisarmStatus.DISARMED
    assert (int(report.scan_before.severity), int(report.scan_after.severity)) == (5, 3)


def test_benign_container_3_to_3(manifest):
    entry = entries_of(manifest, "benign_container")[0]
    output, report = disarm_file(fixture_bytes(entry), cfg(OutputFormat.CLEAN_CONTAINER))
    assert report.status is DisarmStatus.CLEAN
    assert (int(report.scan_before.severity), int(report.scan_after.severity)) == (3, 3)


def test_tensor_bytes_identical_through_cdr(manifest):
    entry = entries_of(manifest, "benign_container")[1]
    data = fixture_bytes(entry)
    sd, _ = extract_state_dict(open_container(data), TORCH)
    source = {t.name: hashlib.sha256(t.data).hexdigest() for t in sd}
    output, _ = disarm_file(data, cfg(OutputFormat.SAFETENSORS))
    tensors, _m = deserialize(output)
    assert {t.name: hashlib.sha256(t.data).hexdigest() for t in tensors} == source


def test_severity_never_increases_across_corpus(manifest):
    for entry in entries_of(manifest, "benign_pickle", "malicious_pickle"):
        data = fixture_bytes(entry)
        output, report = disarm_file(data, cfg())
        if report.status is DisarmStatus.REJECTED:
            continue
        assert report.scan_after.severity <= report.scan_before.severity, entry["path"]
    for entry in entries_of(manifest, "benign_container", "malicious_container"):
        output, report = disarm_file(fixture_bytes(entry), cfg(OutputFormat.CLEAN_CONTAINER))
        if report.status is DisarmStatus.REJECTED:
            continue
        assert report.scan_after.severity <= report.scan_before.severity, entry["path"]


def test_idempotence_pickle_route(manifest):
    for entry in entries_of(manifest, "malicious_pickle")[:8]:
        out1, rep1 = disarm_file(fixture_bytes(entry), cfg())
        if rep1.status is DisarmStatus.REJECTED:
            continue
        out2, rep2 = disarm_file(out1, cfg())
        assert rep2.status is DisarmStatus.CLEAN, entry["path"]
        assert rep2.output_digest == rep1.output_digest, entry["path"]


def test_idempotence_container_route(manifest):
    entry = entries_of(manifest, "malicious_container")[0]
    out1, rep1 = disarm_file(fixture_bytes(entry), cfg(OutputFormat.CLEAN_CONTAINER))
    out2, rep2 = disarm_file(out1, cfg(OutputFormat.CLEAN_CONTAINER))
    assert rep2.status is DisarmStatus.CLEAN
    assert rep2.output_digest == rep1.output_digest


def test_root_disarmed_with_tensor_output_rejected(manifest):
    entry = next(e for e in entries_of(manifest, "malicious_container")
                 if "only_evil" in e["path"])
    output, report = disarm_file(fixture_bytes(entry), cfg(OutputFormat.SAFETENSORS))
    assert output is None
    assert report.status is DisarmStatus.REJECTED
    assert "NothingLoadable" in report.reason


def test_raw_pickle_with_safetensors_output_rejected():
    output, report = disarm_file(pickle.dumps([1]), cfg(OutputFormat.SAFETENSORS))
    assert report.status is DisarmStatus.REJECTED
    assert "NothingLoadable" in report.reason


def test_strict_mode_rejects_partial(manifest):
    entry = entries_of(manifest, "malicious_pickle")[0]
    output, report = disarm_file(fixture_bytes(entry), cfg(mode=PmMode.STRICT_FIND_CLASS))
    assert output is None
    assert report.status is DisarmStatus.REJECTED
    assert "LoadFailed" in report.reason


def test_mtd_package_input_rejected():
    output, report = disarm_file(b"MTDMDL\x01\x00" + b"\x00" * 64, cfg())
    assert report.status is DisarmStatus.REJECTED
    assert report.input_format is FormatKind.MTD_PACKAGE_FILE


def test_weight_disarm_hook_applies(manifest):
    from modelguard.container import StateDict, TensorSpec

    entry = entries_of(manifest, "benign_container")[0]

    def zero_weights(sd: StateDict) -> StateDict:
        out = StateDict()
        for t in sd:
            out.append(TensorSpec(t.name, t.dtype, t.shape, t.stride, t.storage_offset,
                                  t.storage_key, bytes(len(t.data))))
        return out

    output, report = disarm_file(fixture_bytes(entry),
                                 cfg(OutputFormat.SAFETENSORS, weight_disarm_hook=zero_weights))
    tensors, _ = deserialize(output)
    assert all(set(t.data) <= {0} for t in tensors)


def test_strip_disarmed_placement():
    from modelguard.nodes import BlockedEvent, Disarmed
    from modelguard.opcodes import OpcodeKind

    dis = Disarmed(BlockedEvent("os", "system", "()", OpcodeKind.REDUCE, 0, "r"))
    tree = {"keep": [1, dis, 2], "drop": dis}
    out = strip_disarmed(tree, TORCH, "auto")
    assert out == {"keep": [1, None, 2]}  # positional slot nulled, map entry dropped
    out = strip_disarmed(tree, TORCH, "none")
    assert out == {"keep": [1, None, 2], "drop": None}
    out = strip_disarmed(tree, TORCH, "omit")
    assert out == {"keep": [1, 2]}


def test_report_json_shape(manifest):
    entry = entries_of(manifest, "malicious_pickle")[0]
    _, report = disarm_file(fixture_bytes(entry), cfg())
    doc = report.to_json()
    assert set(doc) == {"report_version", "input_format", "status", "reason", "scan_before",
                        "scan_after", "blocked", "output_digest"}
    import json

    json.dumps(doc)


def test_report_status_invariants_across_corpus(manifest):
    """Clean implies nothing blocked; Disarmed implies something blocked;
    Rejected implies no output bytes."""
    for entry in entries_of(manifest, "benign_pickle", "malicious_pickle")[:80]:
        output, report = disarm_file(fixture_bytes(entry), cfg())
        if report.status is DisarmStatus.CLEAN:
            assert not report.blocked and output is not None
        elif report.status is DisarmStatus.DISARMED:
            assert report.blocked and output is not None
        else:
            assert output is None and report.reason
        assert report.to_json()["report_version"] == 1
