import base64
import json
import os
import socket
import subprocess
from pathlib import Path

import pytest

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture(scope="session")
def manifest() -> dict:
    return json.loads((FIXTURES / "manifest.json").read_text())


@pytest.fixture(scope="session")
def fixture_root() -> Path:
    return FIXTURES


def fixture_bytes(entry: dict) -> bytes:
    return (FIXTURES / entry["path"]).read_bytes()


def oracle_json(entry: dict, key: str) -> dict:
    return json.loads((FIXTURES / entry[key]).read_text())


def entries_of(manifest: dict, *kinds: str) -> list:
    return [e for e in manifest["entries"] if e["kind"] in kinds]


def b64(s: str) -> bytes:
    return base64.b64decode(s)


class Watchdog:
    """Asserts that interpretation spawns nothing and touches no canary.

    Patches the process-spawning and network entry points for the
    duration of the block; any call fails the test immediately.
    """

    def __init__(self, canary_dir: str):
        self.canary_dir = canary_dir
        self.violations: list[str] = []
        self._saved: list = []

    def _deny(self, label):
        def denied(*a, **k):
            self.violations.append(label)
            raise AssertionError(f"side-effect attempted: {label}")

        return denied

    def __enter__(self):
        targets = [
            (os, "system"), (os, "popen"), (os, "execv"), (os, "execve"),
            (os, "spawnl"), (os, "spawnv"), (os, "fork"),
            (subprocess, "Popen"), (subprocess, "run"), (subprocess, "call"),
            (subprocess, "check_output"), (subprocess, "check_call"),
            (socket, "socket"), (socket, "create_connection"),
        ]
        for mod, name in targets:
            self._saved.append((mod, name, getattr(mod, name)))
            setattr(mod, name, self._deny(f"{mod.__name__}.{name}"))
        return self

    def __exit__(self, *exc):
        for mod, name, original in self._saved:
            setattr(mod, name, original)
        return False

    def assert_clean(self):
        assert not self.violations, f"side effects observed: {self.violations}"
        assert not os.path.exists(self.canary_dir), \
            f"canary directory {self.canary_dir} was created"


@pytest.fixture
def watchdog(manifest):
    with Watchdog(manifest["canary_dir"]) as w:
        yield w
    w.assert_clean()
