"""Reference disassembly dumps via the stdlib pickletools module.

Every benign fixture ships one of these so the independently written
stream decoder can be diffed opcode-by-opcode against the Python
distribution's own disassembler.
"""

import base64
import pickletools

# pickletools joins the two lines of GLOBAL/INST arguments with a space
_PAIR_OPS = {"GLOBAL", "INST"}


def _encode_arg(opname: str, arg) -> dict:
    if arg is None:
        return {"t": "none"}
    if opname in _PAIR_OPS:
        module, name = arg.split(" ", 1)
        return {"t": "pair", "module": module, "name": name}
    if isinstance(arg, bool):
        return {"t": "bool", "v": arg}
    if isinstance(arg, int):
        return {"t": "int", "v": str(arg)}
    if isinstance(arg, float):
        return {"t": "float", "v": arg.hex()}
    if isinstance(arg, str):
        return {"t": "str", "v": arg}
    if isinstance(arg, (bytes, bytearray, memoryview)):
        return {"t": "bytes", "v": base64.b64encode(bytes(arg)).decode("ascii")}
    raise TypeError(f"unexpected pickletools arg type {type(arg).__name__} for {opname}")


def dump_disassembly(data: bytes) -> dict:
    ops = []
    for op, arg, pos in pickletools.genops(data):
        ops.append({"op": op.name, "offset": pos, "arg": _encode_arg(op.name, arg)})
    return {"kind": "disassembly", "ops": ops}
