"""Cross-reader conformance against the real PyTorch loader.

These tests prove the 'PyTorch-style container' claim both ways: the
reference loader accepts what write_container emits (weights_only mode,
so nothing here can execute), and CDR outputs survive a real
load/compare cycle. torch is a test-only dependency.
"""

import io
import struct

import pytest

from modelguard.cdr import CdrConfig, DisarmStatus, OutputFormat, disarm_file
from modelguard.container import (
    Dtype,
    StateDict,
    TensorSpec,
    extract_state_dict,
    open_container,
    write_container,
)
from modelguard.policy import builtin_rulesets

from conftest import entries_of, fixture_bytes

torch = pytest.importorskip("torch")
TORCH_RS = builtin_rulesets()["TORCH"]

TORCH_DTYPES = {
    "f16": torch.float16, "f32": torch.float32, "f64": torch.float64,
    "bf16": torch.bfloat16, "i8": torch.int8, "i16": torch.int16,
    "i32": torch.int32, "i64": torch.int64, "u8": torch.uint8, "bool": torch.bool,
}


def _assert_loader_sees(sd: StateDict, blob: bytes) -> None:
    loaded = torch.load(io.BytesIO(blob), weights_only=True)
    assert list(loaded) == sd.names()
    for t in sd:
        got = loaded[t.name]
        assert got.dtype is TORCH_DTYPES[t.dtype.name], t.name
        assert tuple(got.shape) == t.shape, t.name
        view = got.view(torch.int16) if got.dtype is torch.bfloat16 else got
        assert bytes(view.contiguous().reshape(-1).numpy().tobytes()) == t.data, t.name


def test_written_container_loads_under_reference_loader():
    sd = StateDict()
    sd.append(TensorSpec("w", Dtype.f32, (2, 2), (2, 1), 0, "0", struct.pack("<4f", 1, 2, 3, 4)))
    sd.append(TensorSpec("flag", Dtype.bool, (3,), (1,), 0, "1", b"\x01\x00\x01"))
    sd.append(TensorSpec("bf", Dtype.bf16, (2,), (1,), 0, "2", b"\x80\x3f\x00\x40"))
    _assert_loader_sees(sd, write_container(sd))


def test_cdr_container_output_loads_under_reference_loader(manifest):
    entry = next(e for e in entries_of(manifest, "malicious_container")
                 if "mixed_system" in e["path"])
    output, report = disarm_file(fixture_bytes(entry),
                                 CdrConfig(ruleset=TORCH_RS, output_format=OutputFormat.CLEAN_CONTAINER))
    assert report.status is DisarmStatus.DISARMED
    loaded = torch.load(io.BytesIO(output), weights_only=True)
    assert list(loaded) == ["lin.weight", "lin.bias"]
    sd, _ = extract_state_dict(open_container(output), TORCH_RS)
    for t in sd:
        assert bytes(loaded[t.name].contiguous().reshape(-1).numpy().tobytes()) == t.data


def test_corpus_round_trip_through_reference_loader(manifest):
    """extract -> write_container -> torch.load sees the oracle values."""
    checked = 0
    for entry in entries_of(manifest, "benign_container")[:8]:
        sd, _ = extract_state_dict(open_container(fixture_bytes(entry)), TORCH_RS)
        blob = write_container(sd)
        loaded = torch.load(io.BytesIO(blob), weights_only=True)
        assert list(loaded) == sd.names(), entry["path"]
        for t in sd:
            got = loaded[t.name]
            view = got.view(torch.int16) if got.dtype is torch.bfloat16 else got
            assert bytes(view.contiguous().reshape(-1).numpy().tobytes()) == t.data, entry["path"]
        checked += 1
    assert checked