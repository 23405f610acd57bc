"""Manifest shape and oracle completeness."""

import json
from pathlib import Path

import pytest

REPO_FIXTURES = Path(__file__).resolve().parents[2] / "fixtures"


@pytest.fixture(scope="module")
def manifest() -> dict:
    return json.loads((REPO_FIXTURES / "manifest.json").read_text())


def test_every_entry_has_hash_and_oracle(manifest):
    for entry in manifest["entries"]:
        assert entry["sha256"], entry["path"]
        has_oracle = any(k.startswith("oracle_") for k in entry) or entry["kind"] == "tampered"
        assert has_oracle, f"{entry['path']} ships no oracle artifact"
        if entry["kind"] == "tampered":
            assert entry["original_sha256"] and entry["tamper"]


def test_benign_fixture_counts(manifest):
    counts = manifest["counts"]
    assert counts["benign_pickle"] + counts["benign_container"] >= 200
    assert counts["malicious_pickle"] + counts["malicious_container"] >= 20
    assert counts["tampered"] >= 6


def test_attack_classes_covered(manifest):
    classes = {e.get("attack_class") for e in manifest["entries"]
               if e["kind"].startswith("malicious")}
    assert {"direct_exec", "indirect_exec", "encoded", "config_style"} <= classes


def test_protocol_coverage(manifest):
    protocols = {e["protocol"] for e in manifest["entries"] if e["kind"] == "benign_pickle"}
    assert protocols == {0, 1, 2, 3, 4}


def test_cyclic_and_protocol0_fixtures_exist(manifest):
    paths = [e["path"] for e in manifest["entries"]]
    assert any("cyclic" in p for p in paths)
    assert any(p.startswith("benign/pickle/p0_") for p in paths)


def test_oracle_files_exist(manifest):
    for entry in manifest["entries"]:
        for key, value in entry.items():
            if key.startswith("oracle_"):
                assert (REPO_FIXTURES / value).exists(), value


def test_tampered_fixtures_differ_from_originals(manifest):
    for entry in manifest["entries"]:
        if entry["kind"] != "tampered":
            continue
        assert entry["sha256"] != entry["original_sha256"], entry["path"]


def test_mtd_vector_oracle_present():
    doc = json.loads((REPO_FIXTURES / "oracles/mtd_perm_vectors.json").read_text())
    assert doc["fisher_yates"] and doc["buffers"]
    for vec in doc["fisher_yates"]:
        assert sorted(vec["perm"]) == list(range(vec["n"]))
