"""Severity scoring: threat-table lookups, the level examples the
evaluation hinges on, and corpus-wide agreement with the independent
build-time reference scan."""

import io
import json
import zipfile

import pickle
import pytest

from modelguard.analyzer import (
    SeverityLevel,
    ThreatClass,
    classify_import,
    compare_reports,
    failed_report,
    scan,
)
from modelguard.stream import decode_stream

from conftest import entries_of, fixture_bytes

SEV = SeverityLevel


def scan_bytes(data: bytes):
    return scan(decode_stream(data))


def container_severity(data: bytes) -> int:
    zf = zipfile.ZipFile(io.BytesIO(data))
    return max(
        int(scan_bytes(zf.read(n)).severity) for n in zf.namelist() if n.endswith(".pkl")
    )


def test_pure_data_scores_zero():
    report = scan_bytes(pickle.dumps({"a": [1, 2, "x"]}, protocol=4))
    assert report.severity is SEV.LIKELY_SAFE
    assert report.stats["n_globals"] == 0


def test_benign_torch_container_scores_three(manifest):
    for entry in entries_of(manifest, "benign_container"):
        assert container_severity(fixture_bytes(entry)) == 3, entry["path"]


def test_os_system_reduce_scores_five():
    report = scan_bytes(b"cos\nsystem\n(S'whoami'\ntR.")
    assert report.severity is SEV.OVERTLY_MALICIOUS


def test_import_without_reduce_scores_four():
    report = scan_bytes(pickle.dumps(eval, protocol=2))
    assert report.severity is SEV.LIKELY_OVERTLY_MALICIOUS


@pytest.mark.parametrize(
    "module,name,expected",
    [
        ("builtins", "exec", ThreatClass.DIRECT_EXEC),
        ("__builtin__", "exec", ThreatClass.DIRECT_EXEC),
        ("collections", "OrderedDict", ThreatClass.BENIGN),
        ("mymodule", "frobnicate", ThreatClass.UNKNOWN),
        ("subprocess", "Popen", ThreatClass.DIRECT_EXEC),
        ("subprocess.popen_fork", "anything", ThreatClass.DIRECT_EXEC),
        ("builtins", "getattr", ThreatClass.INDIRECT_EXEC),
        ("torch.serialization", "load", ThreatClass.INDIRECT_EXEC),
        ("joblib", "load", ThreatClass.LOADER),
        ("torch._utils", "_rebuild_tensor_v2", ThreatClass.UNKNOWN),
    ],
)
def test_classify_import(module, name, expected):
    assert classify_import(module, name) is expected


def test_base64_chain_flagged_as_encoding():
    import base64

    class _Stage:
        def __reduce__(self):
            return (base64.b64decode, ("aGk=",))

    report = scan_bytes(pickle.dumps(_Stage(), protocol=2))
    assert any(f.kind == "encoding" for f in report.findings)
    assert report.severity is SEV.LIKELY_OVERTLY_MALICIOUS


def test_severity_recomputable_from_findings():
    from modelguard.analyzer import _classify_findings

    for entry_bytes in (b"N.", b"cos\nsystem\n(S'x'\ntR."):
        report = scan_bytes(entry_bytes)
        assert _classify_findings(report.findings) is report.severity


def test_scan_determinism(manifest):
    entry = entries_of(manifest, "malicious_pickle")[0]
    data = fixture_bytes(entry)
    a, b = scan_bytes(data), scan_bytes(data)
    assert a.severity == b.severity
    assert [f.key() for f in a.findings] == [f.key() for f in b.findings]


def test_corpus_agreement_with_reference_scan(manifest):
    """Our static severity equals the independent build-time scan on the
    full malicious corpus."""
    for entry in entries_of(manifest, "malicious_pickle", "malicious_container"):
        data = fixture_bytes(entry)
        if entry["kind"] == "malicious_pickle":
            sev = int(scan_bytes(data).severity)
        else:
            sev = container_severity(data)
        assert sev == entry["reference_scan"]["severity"], entry["path"]


def test_compare_reports_delta():
    before = scan_bytes(b"cos\nsystem\n(S'x'\ntR.")
    after = scan_bytes(b"N.")
    delta = compare_reports(before, after)
    assert int(delta.severity_before) == 5 and int(delta.severity_after) == 0
    assert {f.kind for f in delta.removed_findings} == {"import", "reduce"}
    same = compare_reports(before, before)
    assert same.removed_findings == []


def test_report_json_schema():
    report = scan_bytes(pickle.dumps([1], protocol=2))
    doc = report.to_json()
    assert doc["report_version"] == 1
    assert set(doc) == {"report_version", "severity", "label", "findings", "imports", "stats"}
    json.dumps(doc)  # serializable


def test_failed_report_is_minus_one():
    assert int(failed_report("nope").severity) == -1


def test_stack_global_resolution():
    data = b"\x80\x04\x95\x0e\x00\x00\x00\x00\x00\x00\x00\x8c\x02os\x8c\x06system\x93\x94."
    report = scan_bytes(data)
    assert [ref.fqn() for ref in report.imports] == ["os.system"]
    assert report.severity is SEV.LIKELY_OVERTLY_MALICIOUS  # imported, not reduced
