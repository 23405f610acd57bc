"""Pickle stream decoding and input-format detection.

decode_stream turns raw bytes into a validated opcode program without
building any objects or resolving any imports; interpretation lives in
machine.py. Decoding is total and pure: same bytes, same program.
"""

from dataclasses import dataclass
from enum import Enum

from .opcodes import (
    BY_CODE,
    MAX_OPS,
    OPCODE_TABLE,
    MissingStop,
    OpcodeKind,
    ResourceLimitExceeded,
    UnknownOpcode,
)

ZIP_MAGIC = b"PK\x03\x04"
MTD_MAGIC = b"MTDMDL\x01\x00"


class FormatKind(Enum):
    RAW_PICKLE = "raw_pickle"
    ZIP_MODEL_CONTAINER = "zip_model_container"
    MTD_PACKAGE_FILE = "mtd_package_file"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class RawOp:
    kind: OpcodeKind
    arg: "None | bool | int | float | str | bytes | tuple[str, str]"
    offset: int


@dataclass(frozen=True)
class PickleProgram:
    protocol: int
    ops: "tuple[RawOp, ...]"
    trailing_bytes: int = 0

    def __len__(self) -> int:
        return len(self.ops)


def decode_stream(data: bytes) -> PickleProgram:
    """Decode one pickle out of data; bytes past STOP are only counted.

    Raises UnknownOpcode, TruncatedArgument, OversizeArgument,
    MissingStop or ResourceLimitExceeded on malformed input.
    """
    if not data:
        raise MissingStop("empty input", 0)
    ops: list[RawOp] = []
    pos = 0
    n = len(data)
    max_introduced = 0
    while pos < n:
        code = data[pos]
        kind = BY_CODE.get(code)
        if kind is None:
            raise UnknownOpcode(f"byte 0x{code:02x} is not a pickle opcode", pos)
        reader, introduced = OPCODE_TABLE[kind]
        if reader is None:
            arg, next_pos = None, pos + 1
        else:
            arg, next_pos = reader(data, pos + 1)
        ops.append(RawOp(kind, arg, pos))
        if len(ops) > MAX_OPS:
            raise ResourceLimitExceeded(f"more than {MAX_OPS} opcodes", pos)
        if introduced > max_introduced:
            max_introduced = introduced
        if kind is OpcodeKind.STOP:
            protocol = _program_protocol(ops, max_introduced)
            return PickleProgram(protocol, tuple(ops), trailing_bytes=n - next_pos)
        pos = next_pos
    raise MissingStop("stream ended before STOP", n)


def _program_protocol(ops: list[RawOp], max_introduced: int) -> int:
    if ops and ops[0].kind is OpcodeKind.PROTO:
        declared = int(ops[0].arg)  # type: ignore[arg-type]
        if not 0 <= declared <= 5:
            raise UnknownOpcode(f"PROTO {declared} unsupported", ops[0].offset)
        return declared
    return max_introduced


def looks_like_pickle(data: bytes) -> bool:
    try:
        decode_stream(data)
        return True
    except ValueError:
        return False


def detect_format(data: bytes) -> FormatKind:
    """Classify input bytes; Unknown is a value, never an error."""
    if not data:
        raise ValueError("detect_format requires non-empty input")
    if data[: len(ZIP_MAGIC)] == ZIP_MAGIC:
        return FormatKind.ZIP_MODEL_CONTAINER
    if data[: len(MTD_MAGIC)] == MTD_MAGIC:
        return FormatKind.MTD_PACKAGE_FILE
    if data[0] in BY_CODE and looks_like_pickle(data):
        return FormatKind.RAW_PICKLE
    return FormatKind.UNKNOWN
