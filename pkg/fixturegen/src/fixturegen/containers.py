"""Benign model-container construction.

Two routes produce ZIP model containers with known tensor values:

- the *torch route*: ``torch.save`` on a real state dict, i.e. the
  production serializer end to end;
- the *handcrafted route*: our own data.pkl (via ``pickle.Pickler`` with
  a persistent_id hook, so still the reference pickler) inside a
  deterministic ZIP. This route controls layout details torch does not
  vary: archive prefix, storage sharing, non-contiguous strides, bf16.

Both produce byte-identical output for a given seed.
"""

import io
import pickle
import zipfile
from collections import OrderedDict

import numpy as np
import torch

NP_DTYPES = {
    "f16": np.float16,
    "f32": np.float32,
    "f64": np.float64,
    "i64": np.int64,
    "bool": np.bool_,
}

STORAGE_CLASSES = {
    "f16": torch.HalfStorage,
    "f32": torch.FloatStorage,
    "f64": torch.DoubleStorage,
    "bf16": torch.BFloat16Storage,
    "i8": torch.CharStorage,
    "i16": torch.ShortStorage,
    "i32": torch.IntStorage,
    "i64": torch.LongStorage,
    "u8": torch.ByteStorage,
    "bool": torch.BoolStorage,
}

ELEMENT_SIZES = {
    "f16": 2, "f32": 4, "f64": 8, "bf16": 2,
    "i8": 1, "i16": 2, "i32": 4, "i64": 8, "u8": 1, "bool": 1,
}

_FIXED_DATE = (1980, 1, 1, 0, 0, 0)


def seeded_array(seed: int, index: int, dtype: str, shape: tuple[int, ...]) -> np.ndarray:
    rng = np.random.default_rng([seed, index])
    if dtype in ("f16", "f32", "f64"):
        return rng.standard_normal(shape).astype(NP_DTYPES[dtype])
    if dtype == "i64":
        return rng.integers(-(2**40), 2**40, shape, dtype=np.int64)
    if dtype == "bool":
        return rng.integers(0, 2, shape).astype(np.bool_)
    raise ValueError(dtype)


def save_with_torch(tensors: "OrderedDict[str, np.ndarray]") -> bytes:
    sd = OrderedDict((k, torch.from_numpy(np.ascontiguousarray(v))) for k, v in tensors.items())
    buf = io.BytesIO()
    torch.save(sd, buf)
    return buf.getvalue()


def save_parameter_container(seed: int) -> "tuple[bytes, OrderedDict[str, np.ndarray]]":
    """A container holding a raw nn.Parameter next to a plain tensor;
    Parameters serialize through _rebuild_parameter wrapping the tensor."""
    w = seeded_array(seed, 3200, "f32", (4, 2))
    t = seeded_array(seed, 3201, "i64", (3,))
    obj = OrderedDict(
        [
            ("param", torch.nn.Parameter(torch.from_numpy(np.ascontiguousarray(w)),
                                         requires_grad=False)),
            ("plain", torch.from_numpy(np.ascontiguousarray(t))),
        ]
    )
    buf = io.BytesIO()
    torch.save(obj, buf)
    return buf.getvalue(), OrderedDict([("param", w), ("plain", t)])


def save_real_module_state_dict(seed: int) -> "tuple[bytes, OrderedDict[str, np.ndarray]]":
    """A genuine nn.Module state dict: carries the _metadata attribute,
    which pickles as a trailing BUILD on the OrderedDict."""
    module = torch.nn.Linear(3, 2)
    w = seeded_array(seed, 3000, "f32", (2, 3))
    b = seeded_array(seed, 3001, "f32", (2,))
    with torch.no_grad():
        module.weight.copy_(torch.from_numpy(w))
        module.bias.copy_(torch.from_numpy(b))
    sd = module.state_dict()
    assert hasattr(sd, "_metadata")
    buf = io.BytesIO()
    torch.save(sd, buf)
    return buf.getvalue(), OrderedDict([("weight", w), ("bias", b)])


class _Storage:
    """Stand-in pickled by reference through persistent_id."""

    def __init__(self, key: str, dtype: str, data: bytes):
        self.key = key
        self.dtype = dtype
        self.data = data
        self.numel = len(data) // ELEMENT_SIZES[dtype]


class _TensorView:
    """Reduces exactly the way torch serializes a tensor."""

    def __init__(self, storage: _Storage, offset: int, shape: tuple[int, ...], stride: tuple[int, ...]):
        self.storage = storage
        self.offset = offset
        self.shape = shape
        self.stride = stride

    def __reduce__(self):
        return (
            torch._utils._rebuild_tensor_v2,
            (self.storage, self.offset, self.shape, self.stride, False, OrderedDict()),
        )


class _ContainerPickler(pickle.Pickler):
    def persistent_id(self, obj):
        if isinstance(obj, _Storage):
            return ("storage", STORAGE_CLASSES[obj.dtype], obj.key, "cpu", obj.numel)
        return None


def write_zip(entries: "OrderedDict[str, bytes]") -> bytes:
    """Deterministic stored-entry ZIP (fixed timestamps, given order)."""
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
        for name, data in entries.items():
            info = zipfile.ZipInfo(name, date_time=_FIXED_DATE)
            info.compress_type = zipfile.ZIP_STORED
            info.external_attr = 0o600 << 16
            zf.writestr(info, data)
    return buf.getvalue()


def save_handcrafted(
    obj,
    storages: "OrderedDict[str, _Storage]",
    prefix: str = "archive",
    protocol: int = 2,
    extra_entries: "dict[str, bytes] | None" = None,
) -> bytes:
    """Container with our own layout; obj may reference _TensorView values."""
    buf = io.BytesIO()
    p = _ContainerPickler(buf, protocol=protocol)
    p.dump(obj)
    pfx = prefix + "/" if prefix else ""
    entries: "OrderedDict[str, bytes]" = OrderedDict()
    entries[f"{pfx}data.pkl"] = buf.getvalue()
    for key, st in storages.items():
        entries[f"{pfx}data/{key}"] = st.data
    entries[f"{pfx}version"] = b"3\n"
    for name, data in (extra_entries or {}).items():
        entries[f"{pfx}{name}"] = data
    return write_zip(entries)


def read_data_pkl(container: bytes) -> bytes:
    with zipfile.ZipFile(io.BytesIO(container)) as zf:
        for name in zf.namelist():
            if name.split("/")[-1] == "data.pkl":
                return zf.read(name)
    raise KeyError("data.pkl not found")
