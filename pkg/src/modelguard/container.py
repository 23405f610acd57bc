"""PyTorch ZIP model containers: read, safe-extract, and clean rewrite.

A container holds ``<prefix>/data.pkl`` (the pickled state dict, where
tensors reference external storages through persistent IDs) plus one
``<prefix>/data/<key>`` entry per storage. Extraction interprets
data.pkl on the safe machine with tensor-reconstruction hooks, so a
hostile data.pkl degrades to Disarmed placeholders instead of code
execution, and the surviving tensors keep their exact bytes.
"""

import io
import zipfile
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import machine as pm
from .machine import ConstructorRegistry, HookDecline, HookError, LoadResult, PmMode, default_registry
from .nodes import Disarmed, GlobalRef, PersistentRef, Reduced
from .policy import Ruleset
from .safetensors_io import RawTensor, SafetensorsError, serialize as st_serialize
from .stream import decode_stream


class Dtype(Enum):
    f16 = "f16"
    f32 = "f32"
    f64 = "f64"
    bf16 = "bf16"
    i8 = "i8"
    i16 = "i16"
    i32 = "i32"
    i64 = "i64"
    u8 = "u8"
    bool = "bool"

    @property
    def element_size(self) -> int:
        return _ELEMENT_SIZES[self]


_ELEMENT_SIZES = {
    Dtype.f16: 2, Dtype.f32: 4, Dtype.f64: 8, Dtype.bf16: 2,
    Dtype.i8: 1, Dtype.i16: 2, Dtype.i32: 4, Dtype.i64: 8,
    Dtype.u8: 1, Dtype.bool: 1,
}

# torch storage class name -> dtype
STORAGE_DTYPES = {
    "HalfStorage": Dtype.f16,
    "FloatStorage": Dtype.f32,
    "DoubleStorage": Dtype.f64,
    "BFloat16Storage": Dtype.bf16,
    "CharStorage": Dtype.i8,
    "ShortStorage": Dtype.i16,
    "IntStorage": Dtype.i32,
    "LongStorage": Dtype.i64,
    "ByteStorage": Dtype.u8,
    "BoolStorage": Dtype.bool,
}
STORAGE_CLASS_NAMES = {v: k for k, v in STORAGE_DTYPES.items()}


class ContainerError(ValueError):
    pass


class BadZip(ContainerError):
    pass


class MissingDataPkl(ContainerError):
    pass


class DuplicateEntry(ContainerError):
    pass


class StorageKeyMissing(HookError):
    passthrough = True

    def __init__(self, key: str):
        super().__init__(f"storage key {key!r} has no data entry")
        self.key = key


class DtypeUnsupported(ContainerError):
    pass


class DuplicateName(ContainerError):
    pass


class NonContiguous(ContainerError):
    pass


@dataclass(frozen=True)
class TensorSpec:
    name: str
    dtype: Dtype
    shape: "tuple[int, ...]"
    stride: "tuple[int, ...]"
    storage_offset: int
    storage_key: str
    data: bytes

    @property
    def numel(self) -> int:
        n = 1
        for s in self.shape:
            n *= s
        return n


@dataclass
class StateDict:
    tensors: "list[TensorSpec]" = field(default_factory=list)
    extra: "dict[str, object]" = field(default_factory=dict)

    def append(self, spec: TensorSpec) -> None:
        if any(t.name == spec.name for t in self.tensors):
            raise DuplicateName(f"tensor name {spec.name!r} repeats")
        self.tensors.append(spec)

    def names(self) -> "list[str]":
        return [t.name for t in self.tensors]

    def __len__(self) -> int:
        return len(self.tensors)

    def __iter__(self):
        return iter(self.tensors)

    def total_bytes(self) -> int:
        return sum(len(t.data) for t in self.tensors)


@dataclass
class ModelContainer:
    entries: "OrderedDict[str, bytes]"
    root_prefix: str
    data_pkl: bytes
    storages: "dict[str, bytes]"
    version: str = ""


def open_container(data: bytes) -> ModelContainer:
    """Parse the ZIP central directory and pull out data.pkl + storages."""
    try:
        zf = zipfile.ZipFile(io.BytesIO(data))
        names = zf.namelist()
    except (zipfile.BadZipFile, ValueError, OSError) as exc:
        raise BadZip(f"not a readable ZIP archive: {exc}")
    if len(names) != len(set(names)):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise DuplicateEntry(f"archive repeats entries: {', '.join(dupes)}")
    entries: "OrderedDict[str, bytes]" = OrderedDict()
    try:
        for name in names:
            entries[name] = zf.read(name)
    except (zipfile.BadZipFile, ValueError, OSError, NotImplementedError) as exc:
        raise BadZip(f"archive entry unreadable: {exc}")

    data_pkl_name = None
    for name in names:
        parts = name.split("/")
        if parts[-1] == "data.pkl" and len(parts) <= 2:
            data_pkl_name = name
            break
    if data_pkl_name is None:
        raise MissingDataPkl("no data.pkl entry in archive")
    prefix = data_pkl_name.rsplit("/", 1)[0] if "/" in data_pkl_name else ""

    storages = {}
    skey = (prefix + "/data/") if prefix else "data/"
    for name, blob in entries.items():
        if name.startswith(skey):
            storages[name[len(skey):]] = blob
    version_name = (prefix + "/version") if prefix else "version"
    version = entries.get(version_name, b"").decode("ascii", "replace").strip()
    return ModelContainer(entries, prefix, entries[data_pkl_name], storages, version)


@dataclass(frozen=True)
class StorageHandle:
    """A resolved persistent-ID storage reference."""

    key: str
    dtype: "Dtype | None"  # None when the storage class is unsupported
    data: bytes
    numel: int
    type_name: str = ""


def _contiguous_stride(shape: "tuple[int, ...]") -> "tuple[int, ...]":
    stride = [1] * len(shape)
    for i in range(len(shape) - 2, -1, -1):
        stride[i] = stride[i + 1] * shape[i + 1]
    return tuple(stride)


_UINT_BY_SIZE = {1: np.uint8, 2: np.uint16, 4: np.uint32, 8: np.uint64}


def _gather(storage: bytes, dtype: Dtype, offset: int, shape, stride) -> bytes:
    """Contiguous little-endian bytes of the (possibly strided) view."""
    esz = dtype.element_size
    n_avail = len(storage) // esz
    numel = 1
    for s in shape:
        numel *= s
    if numel == 0:
        return b""
    if any(s < 0 for s in stride):
        raise HookError(f"negative stride {stride}")
    span = offset + (sum((sh - 1) * st for sh, st in zip(shape, stride)) if shape else 0)
    if offset < 0 or span >= n_avail:
        raise HookError(f"tensor view [{offset}..{span}] exceeds storage of {n_avail} elements")
    if tuple(stride) == _contiguous_stride(tuple(shape)):
        return storage[offset * esz : (offset + numel) * esz]
    lanes = np.frombuffer(storage, dtype=_UINT_BY_SIZE[esz])
    view = np.lib.stride_tricks.as_strided(
        lanes[offset:], shape=tuple(shape), strides=tuple(st * esz for st in stride)
    )
    return np.ascontiguousarray(view).tobytes()


def make_persistent_resolver(container: ModelContainer):
    """Maps ('storage', <class ref>, key, location, numel) tuples to handles."""

    def resolve(pid):
        if not (isinstance(pid, tuple) and len(pid) >= 5 and pid[0] == "storage"):
            return PersistentRef(pid)
        cls, key, _location, numel = pid[1], pid[2], pid[3], pid[4]
        type_name = cls.name if isinstance(cls, GlobalRef) else str(cls)
        dtype = STORAGE_DTYPES.get(type_name)
        key = str(key)
        if key not in container.storages:
            raise StorageKeyMissing(key)
        return StorageHandle(key, dtype, container.storages[key],
                             int(numel) if isinstance(numel, int) else 0, type_name)

    return resolve


def _hook_rebuild_tensor_v2(args, kwargs):
    if len(args) < 4 or not isinstance(args[0], StorageHandle):
        raise HookDecline
    storage, offset, shape, stride = args[0], args[1], args[2], args[3]
    if storage.dtype is None:
        raise HookDecline  # exotic storage class: keep symbolic, report, skip
    if not isinstance(offset, int) or not isinstance(shape, tuple) or not isinstance(stride, tuple):
        raise HookError(f"malformed tensor rebuild args: {args[1:4]!r}")
    if not all(isinstance(x, int) and x >= 0 for x in (*shape, *stride)):
        raise HookError(f"non-integer tensor geometry: shape={shape} stride={stride}")
    data = _gather(storage.data, storage.dtype, offset, shape, stride)
    return TensorSpec(
        name="",
        dtype=storage.dtype,
        shape=tuple(shape),
        stride=tuple(stride),
        storage_offset=offset,
        storage_key=storage.key,
        data=data,
    )


def _hook_rebuild_tensor(args, kwargs):
    if len(args) == 3:
        storage, offset, shape = args
        if isinstance(storage, StorageHandle) and isinstance(shape, tuple):
            return _hook_rebuild_tensor_v2((storage, offset, shape, _contiguous_stride(shape)), None)
    raise HookDecline


def _hook_rebuild_parameter(args, kwargs):
    if args and isinstance(args[0], TensorSpec):
        return args[0]
    raise HookDecline


def torch_registry() -> ConstructorRegistry:
    reg = default_registry()
    reg.register("torch._utils._rebuild_tensor_v2", _hook_rebuild_tensor_v2)
    reg.register("torch._utils._rebuild_tensor", _hook_rebuild_tensor)
    reg.register("torch._utils._rebuild_parameter", _hook_rebuild_parameter)
    return reg


def _collect_tensors(root, sd: StateDict) -> None:
    """Named tensors from (nested) mappings; everything else goes to extra."""

    def name_of(prefix: str, key) -> str:
        part = key if isinstance(key, str) else repr(key)
        return f"{prefix}.{part}" if prefix else part

    seen: set[int] = set()
    stack: list[tuple[str, object]] = [("", root)]
    while stack:
        prefix, node = stack.pop(0)
        if isinstance(node, TensorSpec):
            sd.append(TensorSpec(prefix or "tensor", node.dtype, node.shape, node.stride,
                                 node.storage_offset, node.storage_key, node.data))
        elif isinstance(node, dict):
            if id(node) in seen:
                continue
            seen.add(id(node))
            for key, value in node.items():
                stack.append((name_of(prefix, key), value))
        elif isinstance(node, Reduced) and isinstance(node.items_state, dict):
            if id(node) in seen:
                continue
            seen.add(id(node))
            for key, value in node.items_state.items():
                stack.append((name_of(prefix, key), value))
        elif isinstance(node, Disarmed):
            continue  # already reported through LoadResult.blocked
        elif prefix:
            sd.extra[prefix] = node


def extract_state_dict(container: ModelContainer, ruleset: Ruleset,
                       mode: PmMode = PmMode.SAFE_REDUCE_GATE) -> "tuple[StateDict, LoadResult]":
    program = decode_stream(container.data_pkl)
    result = pm.run(
        program,
        ruleset,
        mode=mode,
        hooks=torch_registry(),
        persistent_resolver=make_persistent_resolver(container),
    )
    sd = StateDict()
    if result.root is not None:
        if isinstance(result.root, TensorSpec):
            sd.append(TensorSpec("tensor", *_spec_fields(result.root)))
        else:
            _collect_tensors(result.root, sd)
    return sd, result


def _spec_fields(t: TensorSpec):
    return (t.dtype, t.shape, t.stride, t.storage_offset, t.storage_key, t.data)


# --- writers ---------------------------------------------------------------


def write_safetensors(sd: StateDict, metadata: "dict[str, str] | None" = None) -> bytes:
    raw = []
    for t in sd:
        if len(t.data) != t.numel * t.dtype.element_size:
            raise NonContiguous(f"tensor {t.name!r} is not materialized contiguously")
        raw.append(RawTensor(t.name, t.dtype.name, t.shape, t.data))
    try:
        return st_serialize(raw, metadata)
    except SafetensorsError as exc:
        if "duplicate" in str(exc):
            raise DuplicateName(str(exc))
        raise DtypeUnsupported(str(exc))


_FIXED_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def write_container(sd: StateDict, prefix: str = "archive") -> bytes:
    """A minimal clean container: fresh data.pkl, only reconstruction calls."""
    from .emit import emit_pickle
    from .policy import builtin_rulesets

    items = []
    storages: "OrderedDict[str, bytes]" = OrderedDict()
    for i, t in enumerate(sd):
        if len(t.data) != t.numel * t.dtype.element_size:
            raise NonContiguous(f"tensor {t.name!r} is not materialized contiguously")
        key = str(i)
        storages[key] = t.data
        pid = ("storage", GlobalRef("torch", STORAGE_CLASS_NAMES[t.dtype]), key, "cpu", t.numel)
        rebuild = Reduced(
            callee=GlobalRef("torch._utils", "_rebuild_tensor_v2"),
            args=(PersistentRef(pid), 0, t.shape, _contiguous_stride(t.shape), False,
                  Reduced(GlobalRef("collections", "OrderedDict"), ())),
        )
        items.append((t.name, rebuild))
    root = Reduced(GlobalRef("collections", "OrderedDict"), (), items_state=dict(items))
    data_pkl = emit_pickle(root, protocol=2, ruleset=builtin_rulesets()["TORCH"])

    buf = io.BytesIO()
    pfx = f"{prefix}/" if prefix else ""
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
        def put(name: str, blob: bytes) -> None:
            info = zipfile.ZipInfo(pfx + name, date_time=_FIXED_ZIP_DATE)
            info.external_attr = 0o600 << 16
            zf.writestr(info, blob)

        put("data.pkl", data_pkl)
        for key, blob in storages.items():
            put(f"data/{key}", blob)
        put("version", b"3\n")
    return buf.getvalue()
