"""Corpus acceptance: reproducibility and build-time reference scanning.

Criterion: regenerating with the same seed yields byte-identical files,
and every malicious fixture is flagged >= 4 by the public reference
scanner at corpus build time.
"""

import hashlib
import json
from pathlib import Path

import pytest

from fixturegen.gen import generate

REPO_FIXTURES = Path(__file__).resolve().parents[2] / "fixtures"


@pytest.fixture(scope="module")
def committed_manifest() -> dict:
    return json.loads((REPO_FIXTURES / "manifest.json").read_text())


@pytest.fixture(scope="module")
def regenerated(tmp_path_factory) -> "tuple[Path, dict]":
    root = tmp_path_factory.mktemp("corpus")
    manifest = generate(root, seed=0)
    return root, manifest


def test_criterion_9_reproducibility(committed_manifest, regenerated):
    """Same seed, byte-identical corpus (manifest sha256 equality)."""
    root, manifest = regenerated
    committed = {e["path"]: e["sha256"] for e in committed_manifest["entries"]}
    fresh = {e["path"]: e["sha256"] for e in manifest["entries"]}
    assert fresh == committed
    for path, digest in fresh.items():
        assert hashlib.sha256((root / path).read_bytes()).hexdigest() == digest, path
    print(f"[criterion 9a] PASS — reproducibility: {len(fresh)} files byte-identical")


def test_criterion_9_reproducibility_across_hash_seeds(committed_manifest, tmp_path):
    """Corpus bytes must not depend on the process hash seed (str hashing
    is randomized per process; set iteration must never leak into the
    reference pickler's output)."""
    import os
    import subprocess
    import sys

    env = dict(os.environ, PYTHONHASHSEED="1")
    out = tmp_path / "corpus-seeded"
    subprocess.run(
        [sys.executable, "-m", "fixturegen", "--out", str(out), "--seed", "0"],
        check=True, env=env, capture_output=True,
    )
    fresh = json.loads((out / "manifest.json").read_text())
    committed = {e["path"]: e["sha256"] for e in committed_manifest["entries"]}
    got = {e["path"]: e["sha256"] for e in fresh["entries"]}
    assert got == committed


def test_criterion_9_malicious_flagged_at_build_time(committed_manifest):
    """Every malicious fixture carries a build-time scan verdict >= 4."""
    malicious = [e for e in committed_manifest["entries"]
                 if e["kind"].startswith("malicious")]
    assert malicious
    low = [(e["path"], e["reference_scan"]["severity"])
           for e in malicious if e["reference_scan"]["severity"] < 4]
    assert not low, f"fixtures scanned below 4: {low}"
    print(f"[criterion 9b] PASS — {len(malicious)} malicious fixtures all scanned >= 4")


def test_criterion_9_public_reference_scanner_used(committed_manifest):
    """The criterion names the *public* reference scanner (fickling).

    This environment's package mirror carries neither fickling nor
    picklescan nor modelscan, so corpus generation recorded verdicts
    from the built-in fallback scanner instead (an independent
    pickletools-based implementation in fixturegen.refscan). The
    fallback enforces the same >= 4 bar, but it is not the public tool
    the criterion names, so this check reports the gap honestly instead
    of renaming the fallback. Regenerating the corpus on a machine with
    fickling installed turns this green with no code changes.
    See notes/decisions.md for the install attempts.
    """
    scanners = set(committed_manifest["reference_scanner"])
    assert scanners == {"fickling"}, (
        f"corpus was vetted by {sorted(scanners)}, not the public reference scanner; "
        "the package mirror lacks fickling/picklescan/modelscan (verified at build time)"
    )
