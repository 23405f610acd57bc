"""Corpus generation: benign, malicious, tampered, plus oracle artifacts."""

import hashlib
import json
import pickle
from collections import OrderedDict
from pathlib import Path

import numpy as np

from . import attacks, refperm, tamper, values
from .containers import (
    _Storage,
    _TensorView,
    read_data_pkl,
    save_handcrafted,
    save_with_torch,
    seeded_array,
)
from .disasm import dump_disassembly
from .dump import dump_pickle_value, dump_state_dict
from .refscan import reference_scan

PROTOCOLS = (0, 1, 2, 3, 4)
GENERATOR_VERSION = 1


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=False) + "\n")


class CorpusWriter:
    def __init__(self, root: Path):
        self.root = root
        self.entries: list[dict] = []

    def add(self, relpath: str, data: bytes, kind: str, *, protocol=None,
            attack_class=None, oracles: "dict[str, object] | None" = None,
            extra: "dict | None" = None) -> dict:
        _write(self.root / relpath, data)
        entry = {"path": relpath, "kind": kind, "sha256": _sha256(data)}
        if protocol is not None:
            entry["protocol"] = protocol
        if attack_class is not None:
            entry["attack_class"] = attack_class
        for oracle_name, obj in (oracles or {}).items():
            if isinstance(obj, bytes):
                opath = f"oracles/{Path(relpath).with_suffix('').name}.{oracle_name.split('_')[-1]}"
                _write(self.root / opath, obj)
            else:
                opath = f"oracles/{Path(relpath).with_suffix('').name}.{oracle_name}.json"
                _write_json(self.root / opath, obj)
            entry[oracle_name] = opath
        if extra:
            entry.update(extra)
        self.entries.append(entry)
        return entry


def gen_benign(writer: CorpusWriter, seed: int) -> None:
    for slug, value in values.benign_values(seed):
        for proto in PROTOCOLS:
            data = pickle.dumps(value, protocol=proto)
            writer.add(
                f"benign/pickle/p{proto}_{slug}.pkl", data, "benign_pickle",
                protocol=proto,
                oracles={
                    "oracle_value_dump": dump_pickle_value(value),
                    "oracle_disasm": dump_disassembly(data),
                },
            )
    _gen_benign_containers(writer, seed)


def _st_dump(tensors: "OrderedDict[str, np.ndarray]") -> dict:
    dt_names = {np.dtype(np.float16): "f16", np.dtype(np.float32): "f32",
                np.dtype(np.float64): "f64", np.dtype(np.int64): "i64",
                np.dtype(np.bool_): "bool"}
    od = OrderedDict()
    for name, arr in tensors.items():
        c = np.ascontiguousarray(arr)
        od[name] = (dt_names[c.dtype], c.shape, c.tobytes())
    return dump_state_dict(od)


def _reference_safetensors(tensors: "OrderedDict[str, tuple[str, tuple, bytes]]") -> bytes:
    """Expected-output file written by the reference safetensors library."""
    import torch
    from safetensors.torch import save as st_save

    torch_dtypes = {"f16": torch.float16, "f32": torch.float32, "f64": torch.float64,
                    "bf16": torch.bfloat16, "i64": torch.int64, "bool": torch.bool}
    td = {}
    for name, (dtype, shape, raw) in tensors.items():
        t = torch.frombuffer(bytearray(raw), dtype=torch_dtypes[dtype]).reshape(shape)
        td[name] = t.clone()
    return st_save(td)


def _gen_benign_containers(writer: CorpusWriter, seed: int) -> None:
    for idx, (slug, spec) in enumerate(values.container_specs(seed)):
        tensors = OrderedDict(
            (name, seeded_array(seed, idx * 100 + j, dt, shape))
            for j, (name, dt, shape) in enumerate(spec)
        )
        data = save_with_torch(tensors)
        st = _st_dump(tensors)
        writer.add(
            f"benign/container/torch_{slug}.pt", data, "benign_container", protocol=2,
            oracles={
                "oracle_value_dump": st,
                "oracle_disasm": dump_disassembly(read_data_pkl(data)),
                "oracle_safetensors": _reference_safetensors(
                    OrderedDict((t["name"], (t["dtype"], tuple(t["shape"]),
                                             __import__("base64").b64decode(t["data"])))
                                for t in st["tensors"])),
            },
        )
    _gen_real_state_dict_container(writer, seed)
    _gen_handcrafted_containers(writer, seed)


def _gen_real_state_dict_container(writer: CorpusWriter, seed: int) -> None:
    from .containers import save_real_module_state_dict

    data, tensors = save_real_module_state_dict(seed)
    writer.add(
        "benign/container/torch_real_module_sd.pt", data, "benign_container", protocol=2,
        oracles={
            "oracle_value_dump": _st_dump(tensors),
            "oracle_disasm": dump_disassembly(read_data_pkl(data)),
            "oracle_safetensors": _reference_safetensors(
                OrderedDict((t["name"], (t["dtype"], tuple(t["shape"]),
                                         __import__("base64").b64decode(t["data"])))
                            for t in _st_dump(tensors)["tensors"])),
        },
    )
    _gen_checkpoint_container(writer, seed)
    _gen_parameter_container(writer, seed)


def _gen_parameter_container(writer: CorpusWriter, seed: int) -> None:
    from .containers import save_parameter_container

    data, tensors = save_parameter_container(seed)
    writer.add(
        "benign/container/torch_parameter.pt", data, "benign_container", protocol=2,
        oracles={
            "oracle_value_dump": _st_dump(tensors),
            "oracle_disasm": dump_disassembly(read_data_pkl(data)),
            "oracle_safetensors": _reference_safetensors(
                OrderedDict((t["name"], (t["dtype"], tuple(t["shape"]),
                                         __import__("base64").b64decode(t["data"])))
                            for t in _st_dump(tensors)["tensors"])),
        },
    )


def _gen_checkpoint_container(writer: CorpusWriter, seed: int) -> None:
    """The common checkpoint shape: a plain dict wrapping a state dict
    plus scalar training metadata. Tensor names gain the wrapper prefix."""
    import io

    import torch

    w = seeded_array(seed, 3100, "f32", (3, 3))
    b = seeded_array(seed, 3101, "f64", (3,))
    checkpoint = {
        "state_dict": OrderedDict(
            [("w", torch.from_numpy(np.ascontiguousarray(w))),
             ("b", torch.from_numpy(np.ascontiguousarray(b)))]),
        "epoch": 17,
        "best_acc": 0.875,
    }
    buf = io.BytesIO()
    torch.save(checkpoint, buf)
    data = buf.getvalue()
    tensors = OrderedDict([("state_dict.w", ("f32", (3, 3), np.ascontiguousarray(w).tobytes())),
                           ("state_dict.b", ("f64", (3,), np.ascontiguousarray(b).tobytes()))])
    writer.add(
        "benign/container/torch_checkpoint_nested.pt", data, "benign_container", protocol=2,
        oracles={
            "oracle_value_dump": dump_state_dict(tensors),
            "oracle_disasm": dump_disassembly(read_data_pkl(data)),
            "oracle_safetensors": _reference_safetensors(tensors),
        },
    )


def _gen_handcrafted_containers(writer: CorpusWriter, seed: int) -> None:
    # layout variants: prefix names the torch writer never produces
    for prefix in ("archive", "model_x", ""):
        arr = seeded_array(seed, 2000 + len(prefix), "f32", (2, 2))
        st = _Storage("0", "f32", arr.tobytes())
        obj = OrderedDict([("weight", _TensorView(st, 0, (2, 2), (2, 1)))])
        data = save_handcrafted(obj, OrderedDict([("0", st)]), prefix=prefix)
        dumped = dump_state_dict(OrderedDict([("weight", ("f32", (2, 2), arr.tobytes()))]))
        writer.add(
            f"benign/container/hand_prefix_{prefix or 'none'}.pt", data,
            "benign_container", protocol=2,
            oracles={
                "oracle_value_dump": dumped,
                "oracle_disasm": dump_disassembly(read_data_pkl(data)),
                "oracle_safetensors": _reference_safetensors(
                    OrderedDict([("weight", ("f32", (2, 2), arr.tobytes()))])),
            },
        )

    # non-contiguous view over a shared storage; oracle holds gathered bytes
    full = seeded_array(seed, 2100, "f64", (3, 4))
    st = _Storage("0", "f64", full.tobytes())
    view = full[:, ::2]
    obj = OrderedDict(
        [
            ("full", _TensorView(st, 0, (3, 4), (4, 1))),
            ("strided", _TensorView(st, 0, (3, 2), (4, 2))),
            ("offset_row", _TensorView(st, 4, (4,), (1,))),
        ]
    )
    data = save_handcrafted(obj, OrderedDict([("0", st)]), prefix="archive")
    tensors = OrderedDict(
        [
            ("full", ("f64", (3, 4), full.tobytes())),
            ("strided", ("f64", (3, 2), np.ascontiguousarray(view).tobytes())),
            ("offset_row", ("f64", (4,), full[1].tobytes())),
        ]
    )
    writer.add(
        "benign/container/hand_strided_shared.pt", data, "benign_container", protocol=2,
        oracles={
            "oracle_value_dump": dump_state_dict(tensors),
            "oracle_disasm": dump_disassembly(read_data_pkl(data)),
            "oracle_safetensors": _reference_safetensors(tensors),
        },
    )

    # bf16: opaque 2-byte lanes end to end
    rng = np.random.default_rng([seed, 2200])
    raw = rng.bytes(12 * 2)
    st = _Storage("0", "bf16", raw)
    obj = OrderedDict([("bf", _TensorView(st, 0, (3, 4), (4, 1)))])
    data = save_handcrafted(obj, OrderedDict([("0", st)]), prefix="archive")
    tensors = OrderedDict([("bf", ("bf16", (3, 4), raw))])
    writer.add(
        "benign/container/hand_bf16.pt", data, "benign_container", protocol=2,
        oracles={
            "oracle_value_dump": dump_state_dict(tensors),
            "oracle_disasm": dump_disassembly(read_data_pkl(data)),
            "oracle_safetensors": _reference_safetensors(tensors),
        },
    )


def gen_malicious(writer: CorpusWriter, seed: int) -> None:
    for slug, attack_class, proto, data in attacks.raw_attacks():
        writer.add(
            f"malicious/raw/{slug}.pkl", data, "malicious_pickle",
            protocol=proto, attack_class=attack_class,
            oracles={"oracle_disasm": dump_disassembly(data)},
            extra={"reference_scan": reference_scan(data)},
        )
    for slug, attack_class, data, benign_tensors in attacks.container_attacks(seed):
        writer.add(
            f"malicious/container/{slug}.pt", data, "malicious_container",
            protocol=2, attack_class=attack_class,
            oracles={
                "oracle_disasm": dump_disassembly(read_data_pkl(data)),
                # ground truth for partial-load recovery: the benign
                # tensors that ride alongside the attack
                "oracle_value_dump": _st_dump(benign_tensors),
            },
            extra={"reference_scan": reference_scan(data)},
        )


def gen_tampered(writer: CorpusWriter, seed: int) -> None:
    victims = [e for e in writer.entries if e["kind"] == "benign_container"][:6]
    for i, victim in enumerate(victims):
        original = (writer.root / victim["path"]).read_bytes()
        flipped, meta = tamper.flip_one_bit(original, seed + i)
        writer.add(
            f"tampered/bitflip_{Path(victim['path']).stem}.pt", flipped, "tampered",
            extra={"tamper": meta, "original_path": victim["path"],
                   "original_sha256": victim["sha256"]},
        )
        esz = 4 if "bf16" not in victim["path"] else 2
        rewritten, meta2 = tamper.rewrite_lsb_plane(original, seed + 1000 + i, element_size=esz)
        writer.add(
            f"tampered/lsb_{Path(victim['path']).stem}.pt", rewritten, "tampered",
            extra={"tamper": meta2, "original_path": victim["path"],
                   "original_sha256": victim["sha256"]},
        )


def gen_mtd_vectors(root: Path, seed: int) -> None:
    """Permutation oracle vectors from the straight-line reference permuter."""
    vectors = []
    for n in (0, 1, 2, 4, 8, 16, 100, 1000):
        for s in (0, 1, 42, 0xDEADBEEF, 2**64 - 1):
            vectors.append({"n": n, "seed": str(s), "perm": refperm.fisher_yates(n, s)})
    raws = []
    rng = np.random.default_rng([seed, 31337])
    for esz in (1, 2, 4, 8):
        data = rng.bytes(16 * esz)
        s = int(rng.integers(0, 2**63))
        ob = refperm.permute_elements(data, esz, s)
        raws.append(
            {
                "element_size": esz,
                "seed": str(s),
                "plain_b64": _b64(data),
                "obfuscated_b64": _b64(ob),
            }
        )
    _write_json(root / "oracles/mtd_perm_vectors.json", {"fisher_yates": vectors, "buffers": raws})


def _b64(data: bytes) -> str:
    import base64

    return base64.b64encode(data).decode("ascii")


def generate(root: Path, seed: int = 0) -> dict:
    writer = CorpusWriter(root)
    gen_benign(writer, seed)
    gen_malicious(writer, seed)
    gen_tampered(writer, seed)
    gen_mtd_vectors(root, seed)

    scanners = {e["reference_scan"]["scanner"] for e in writer.entries if "reference_scan" in e}
    manifest = {
        "generator_version": GENERATOR_VERSION,
        "seed": seed,
        "canary_dir": attacks.CANARY_DIR,
        "reference_scanner": sorted(scanners),
        "counts": {
            kind: sum(1 for e in writer.entries if e["kind"] == kind)
            for kind in ("benign_pickle", "benign_container", "malicious_pickle",
                         "malicious_container", "tampered")
        },
        "entries": writer.entries,
    }
    _write_json(root / "manifest.json", manifest)
    return manifest
