"""Pickle opcode table and argument codecs.

One entry per opcode of protocols 0-5: the byte value, the protocol it
appeared in, and how its inline argument is encoded. Decoding is pure
byte reading; nothing here resolves imports or builds objects.

Argument values use plain Python types:

    None                      no argument
    bool / int / float        numeric arguments (INT "01"/"00" are bools)
    str                       text arguments
    bytes                     octet arguments
    (str, str)                the module/name pair of GLOBAL and INST
"""

import struct
from enum import Enum

# resource bounds; decoding fails rather than allocate past these
MAX_BLOB = 2 * 1024**3        # string/bytes payloads
MAX_BIGINT = 16 * 1024**2     # LONG1/LONG4 magnitude bytes
MAX_OPS = 10_000_000


class OpcodeKind(Enum):
    # protocol 0
    MARK = 0x28          # '('
    STOP = 0x2E          # '.'
    POP = 0x30           # '0'
    POP_MARK = 0x31      # '1'
    DUP = 0x32           # '2'
    FLOAT = 0x46         # 'F'
    INT = 0x49           # 'I'
    LONG = 0x4C          # 'L'
    NONE = 0x4E          # 'N'
    PERSID = 0x50        # 'P'
    REDUCE = 0x52        # 'R'
    STRING = 0x53        # 'S'
    UNICODE = 0x56       # 'V'
    APPEND = 0x61        # 'a'
    BUILD = 0x62         # 'b'
    GLOBAL = 0x63        # 'c'
    DICT = 0x64          # 'd'
    GET = 0x67           # 'g'
    INST = 0x69          # 'i'
    LIST = 0x6C          # 'l'
    OBJ = 0x6F           # 'o'
    PUT = 0x70           # 'p'
    SETITEM = 0x73       # 's'
    TUPLE = 0x74         # 't'
    # protocol 1
    EMPTY_TUPLE = 0x29   # ')'
    EMPTY_LIST = 0x5D    # ']'
    EMPTY_DICT = 0x7D    # '}'
    APPENDS = 0x65       # 'e'
    SETITEMS = 0x75      # 'u'
    BINFLOAT = 0x47      # 'G'
    BININT = 0x4A        # 'J'
    BININT1 = 0x4B       # 'K'
    BININT2 = 0x4D       # 'M'
    BINSTRING = 0x54     # 'T'
    SHORT_BINSTRING = 0x55  # 'U'
    BINUNICODE = 0x58    # 'X'
    BINGET = 0x68        # 'h'
    LONG_BINGET = 0x6A   # 'j'
    BINPUT = 0x71        # 'q'
    LONG_BINPUT = 0x72   # 'r'
    BINPERSID = 0x51     # 'Q'
    # protocol 2
    PROTO = 0x80
    NEWOBJ = 0x81
    EXT1 = 0x82
    EXT2 = 0x83
    EXT4 = 0x84
    TUPLE1 = 0x85
    TUPLE2 = 0x86
    TUPLE3 = 0x87
    NEWTRUE = 0x88
    NEWFALSE = 0x89
    LONG1 = 0x8A
    LONG4 = 0x8B
    # protocol 3
    BINBYTES = 0x42      # 'B'
    SHORT_BINBYTES = 0x43  # 'C'
    # protocol 4
    SHORT_BINUNICODE = 0x8C
    BINUNICODE8 = 0x8D
    BINBYTES8 = 0x8E
    EMPTY_SET = 0x8F
    ADDITEMS = 0x90
    FROZENSET = 0x91
    NEWOBJ_EX = 0x92
    STACK_GLOBAL = 0x93
    MEMOIZE = 0x94
    FRAME = 0x95
    # protocol 5
    BYTEARRAY8 = 0x96
    NEXT_BUFFER = 0x97
    READONLY_BUFFER = 0x98

    @property
    def code(self) -> int:
        return self.value


class DecodeError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UnknownOpcode(DecodeError):
    pass


class TruncatedArgument(DecodeError):
    pass


class MissingStop(DecodeError):
    pass


class OversizeArgument(DecodeError):
    pass


class ResourceLimitExceeded(DecodeError):
    pass


# --- argument readers ------------------------------------------------------
# each takes (data, pos) where pos is the first argument byte and returns
# (value, next_pos)

def _need(data: bytes, pos: int, n: int):
    if pos + n > len(data):
        raise TruncatedArgument(f"argument needs {n} bytes, {len(data) - pos} left", pos)


def read_uint1(data, pos):
    _need(data, pos, 1)
    return data[pos], pos + 1


def read_uint2(data, pos):
    _need(data, pos, 2)
    return struct.unpack_from("<H", data, pos)[0], pos + 2


def read_int4(data, pos):
    _need(data, pos, 4)
    return struct.unpack_from("<i", data, pos)[0], pos + 4


def read_uint4(data, pos):
    _need(data, pos, 4)
    return struct.unpack_from("<I", data, pos)[0], pos + 4


def read_uint8(data, pos):
    _need(data, pos, 8)
    return struct.unpack_from("<Q", data, pos)[0], pos + 8


def read_float8(data, pos):
    _need(data, pos, 8)
    return struct.unpack_from(">d", data, pos)[0], pos + 8


def _read_blob(data, pos, length, what):
    if length < 0 or length > MAX_BLOB:
        raise OversizeArgument(f"{what} length {length} out of range", pos)
    if pos + length > len(data):
        raise OversizeArgument(f"{what} length {length} exceeds remaining {len(data) - pos} bytes", pos)
    return bytes(data[pos : pos + length]), pos + length


def read_bytes1(data, pos):
    n, pos = read_uint1(data, pos)
    return _read_blob(data, pos, n, "bytes")


def read_bytes4(data, pos):
    n, pos = read_uint4(data, pos)
    return _read_blob(data, pos, n, "bytes")


def read_bytes8(data, pos):
    n, pos = read_uint8(data, pos)
    return _read_blob(data, pos, n, "bytes")


def _utf8(raw: bytes, pos: int) -> str:
    try:
        return raw.decode("utf-8", "surrogatepass")
    except UnicodeDecodeError as exc:
        raise TruncatedArgument(f"invalid utf-8 in string argument: {exc}", pos)


def read_unicode1(data, pos):
    raw, end = read_bytes1(data, pos)
    return _utf8(raw, pos), end


def read_unicode4(data, pos):
    raw, end = read_bytes4(data, pos)
    return _utf8(raw, pos), end


def read_unicode8(data, pos):
    raw, end = read_bytes8(data, pos)
    return _utf8(raw, pos), end


def read_latin1_string4(data, pos):
    # BINSTRING carries a *signed* length
    n, npos = read_int4(data, pos)
    if n < 0:
        raise OversizeArgument(f"negative BINSTRING length {n}", pos)
    raw, end = _read_blob(data, npos, n, "string")
    return raw.decode("latin-1"), end


def read_latin1_string1(data, pos):
    raw, end = read_bytes1(data, pos)
    return raw.decode("latin-1"), end


def _long_from_le(raw: bytes) -> int:
    return int.from_bytes(raw, "little", signed=True)


def read_long1(data, pos):
    n, npos = read_uint1(data, pos)
    raw, end = _read_blob(data, npos, n, "long")
    return _long_from_le(raw), end


def read_long4(data, pos):
    n, npos = read_int4(data, pos)
    if n < 0 or n > MAX_BIGINT:
        raise OversizeArgument(f"long payload of {n} bytes", pos)
    raw, end = _read_blob(data, npos, n, "long")
    return _long_from_le(raw), end


def _read_line(data, pos):
    end = data.find(b"\n", pos)
    if end < 0:
        raise TruncatedArgument("newline-terminated argument missing its newline", pos)
    return bytes(data[pos:end]), end + 1


def read_decimalnl_short(data, pos):
    line, end = _read_line(data, pos)
    if line == b"00":
        return False, end
    if line == b"01":
        return True, end
    try:
        return int(line), end
    except ValueError:
        raise TruncatedArgument(f"bad decimal literal {line!r}", pos)


def read_decimalnl_long(data, pos):
    line, end = _read_line(data, pos)
    if line.endswith(b"L"):
        line = line[:-1]
    if len(line) > MAX_BIGINT:
        raise OversizeArgument("decimal long literal too large", pos)
    try:
        return int(line) if line else 0, end
    except ValueError:
        raise TruncatedArgument(f"bad long literal {line!r}", pos)


def read_floatnl(data, pos):
    line, end = _read_line(data, pos)
    try:
        return float(line), end
    except ValueError:
        raise TruncatedArgument(f"bad float literal {line!r}", pos)


_ESCAPES = {
    b"\\": b"\\", b"'": b"'", b'"': b'"', b"a": b"\a", b"b": b"\b",
    b"f": b"\f", b"n": b"\n", b"r": b"\r", b"t": b"\t", b"v": b"\v",
}


def _unescape(raw: bytes, pos: int) -> bytes:
    out = bytearray()
    i = 0
    while i < len(raw):
        c = raw[i : i + 1]
        if c != b"\\":
            out += c
            i += 1
            continue
        if i + 1 >= len(raw):
            raise TruncatedArgument("dangling backslash in string literal", pos)
        e = raw[i + 1 : i + 2]
        if e in _ESCAPES:
            out += _ESCAPES[e]
            i += 2
        elif e == b"x":
            hexpart = raw[i + 2 : i + 4]
            if len(hexpart) != 2:
                raise TruncatedArgument("truncated \\x escape", pos)
            out.append(int(hexpart, 16))
            i += 4
        elif e.isdigit():
            j = i + 1
            while j < len(raw) and j < i + 4 and raw[j : j + 1].isdigit() and int(raw[i + 1 : j + 1], 8) < 256:
                j += 1
            out.append(int(raw[i + 1 : j], 8))
            i = j
        else:
            out += b"\\" + e  # python keeps unknown escapes verbatim
            i += 2
    return bytes(out)


def read_stringnl(data, pos):
    line, end = _read_line(data, pos)
    if len(line) < 2 or line[0] not in b"'\"" or line[-1] != line[0]:
        raise TruncatedArgument(f"string literal not quoted: {line[:32]!r}", pos)
    return _unescape(line[1:-1], pos).decode("latin-1"), end


def read_unicodestringnl(data, pos):
    line, end = _read_line(data, pos)
    try:
        return line.decode("raw-unicode-escape"), end
    except UnicodeDecodeError as exc:
        raise TruncatedArgument(f"bad unicode literal: {exc}", pos)


def read_stringnl_noescape(data, pos):
    line, end = _read_line(data, pos)
    return line.decode("latin-1"), end


def read_stringnl_noescape_pair(data, pos):
    module, mid = read_stringnl_noescape(data, pos)
    name, end = read_stringnl_noescape(data, mid)
    return (module, name), end


def read_decimalnl_uint(data, pos):
    line, end = _read_line(data, pos)
    try:
        value = int(line)
    except ValueError:
        raise TruncatedArgument(f"bad memo index {line!r}", pos)
    if value < 0:
        raise TruncatedArgument(f"negative memo index {value}", pos)
    return value, end


# --- the table -------------------------------------------------------------
# kind -> (arg reader or None, protocol the opcode first appeared in)

K = OpcodeKind
OPCODE_TABLE: "dict[OpcodeKind, tuple[object, int]]" = {
    K.MARK: (None, 0), K.STOP: (None, 0), K.POP: (None, 0), K.POP_MARK: (None, 0),
    K.DUP: (None, 0), K.NONE: (None, 0), K.REDUCE: (None, 0), K.APPEND: (None, 0),
    K.BUILD: (None, 0), K.DICT: (None, 0), K.LIST: (None, 0), K.OBJ: (None, 0),
    K.SETITEM: (None, 0), K.TUPLE: (None, 0),
    K.FLOAT: (read_floatnl, 0),
    K.INT: (read_decimalnl_short, 0),
    K.LONG: (read_decimalnl_long, 0),
    K.PERSID: (read_stringnl_noescape, 0),
    K.STRING: (read_stringnl, 0),
    K.UNICODE: (read_unicodestringnl, 0),
    K.GLOBAL: (read_stringnl_noescape_pair, 0),
    K.INST: (read_stringnl_noescape_pair, 0),
    K.GET: (read_decimalnl_uint, 0),
    K.PUT: (read_decimalnl_uint, 0),

    K.EMPTY_TUPLE: (None, 1), K.EMPTY_LIST: (None, 1), K.EMPTY_DICT: (None, 1),
    K.APPENDS: (None, 1), K.SETITEMS: (None, 1), K.BINPERSID: (None, 1),
    K.BINFLOAT: (read_float8, 1),
    K.BININT: (read_int4, 1),
    K.BININT1: (read_uint1, 1),
    K.BININT2: (read_uint2, 1),
    K.BINSTRING: (read_latin1_string4, 1),
    K.SHORT_BINSTRING: (read_latin1_string1, 1),
    K.BINUNICODE: (read_unicode4, 1),
    K.BINGET: (read_uint1, 1),
    K.LONG_BINGET: (read_uint4, 1),
    K.BINPUT: (read_uint1, 1),
    K.LONG_BINPUT: (read_uint4, 1),

    K.PROTO: (read_uint1, 2),
    K.NEWOBJ: (None, 2),
    K.EXT1: (read_uint1, 2),
    K.EXT2: (read_uint2, 2),
    K.EXT4: (read_int4, 2),
    K.TUPLE1: (None, 2), K.TUPLE2: (None, 2), K.TUPLE3: (None, 2),
    K.NEWTRUE: (None, 2), K.NEWFALSE: (None, 2),
    K.LONG1: (read_long1, 2),
    K.LONG4: (read_long4, 2),

    K.BINBYTES: (read_bytes4, 3),
    K.SHORT_BINBYTES: (read_bytes1, 3),

    K.SHORT_BINUNICODE: (read_unicode1, 4),
    K.BINUNICODE8: (read_unicode8, 4),
    K.BINBYTES8: (read_bytes8, 4),
    K.EMPTY_SET: (None, 4), K.ADDITEMS: (None, 4), K.FROZENSET: (None, 4),
    K.NEWOBJ_EX: (None, 4), K.STACK_GLOBAL: (None, 4), K.MEMOIZE: (None, 4),
    K.FRAME: (read_uint8, 4),

    K.BYTEARRAY8: (read_bytes8, 5),
    K.NEXT_BUFFER: (None, 5), K.READONLY_BUFFER: (None, 5),
}

BY_CODE = {kind.value: kind for kind in OpcodeKind}

assert len(OPCODE_TABLE) == len(OpcodeKind)
