"""Moving Target Defense for model weights.

protect() permutes every tensor's elements under a fresh per-tensor
seed, hashes the plaintext, signs the package, and signs a separately
stored mapping. load() re-verifies the whole chain and returns either
the bit-exact original weights or an AlertEvent; a tampered package
never yields a state dict. Files that are not MTD packages belong to
the CDR fallback path (is_mtd_protected tells the caller which way to
go). Formats are pinned in docs/mtd.md.
"""

import base64
import hashlib
import json
import os
import struct
import time
from dataclasses import dataclass
from enum import Enum

import numpy as np

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey

from .container import Dtype, StateDict, TensorSpec
from .prng import fisher_yates_indices
from .safetensors_io import RawTensor, SafetensorsError, deserialize, serialize

MTD_MAGIC = b"MTDMDL\x01\x00"
MTD_VERSION = 1
SCHEME = "permute-elements-v1"


class MtdError(ValueError):
    pass


class EmptyModel(MtdError):
    pass


class MalformedPackage(MtdError):
    pass


class SigningFailure(MtdError):
    pass


class AlertKind(Enum):
    HASH_MISMATCH = "hash_mismatch"
    SIGNATURE_INVALID = "signature_invalid"
    MAPPING_MISSING = "mapping_missing"
    MAPPING_SIGNATURE_INVALID = "mapping_signature_invalid"


@dataclass(frozen=True)
class AlertEvent:
    model_id: bytes
    kind: AlertKind
    detail: str
    observed_at: float

    def to_json(self) -> dict:
        return {
            "model_id": self.model_id.hex(),
            "kind": self.kind.value,
            "detail": self.detail,
            "observed_at": self.observed_at,
        }


# --- keys -------------------------------------------------------------------


@dataclass(frozen=True)
class SigningKey:
    """Ed25519 key pair; 32-byte private seed, 32-byte public key."""

    private_bytes: bytes

    @classmethod
    def generate(cls) -> "SigningKey":
        return cls(os.urandom(32))

    @classmethod
    def from_bytes(cls, raw: bytes) -> "SigningKey":
        if len(raw) != 32:
            raise SigningFailure(f"private key must be 32 bytes, got {len(raw)}")
        return cls(bytes(raw))

    @property
    def verify_bytes(self) -> bytes:
        return (
            Ed25519PrivateKey.from_private_bytes(self.private_bytes)
            .public_key()
            .public_bytes_raw()
        )

    def sign(self, message: bytes) -> bytes:
        try:
            return Ed25519PrivateKey.from_private_bytes(self.private_bytes).sign(message)
        except Exception as exc:
            raise SigningFailure(str(exc))


def verify_signature(verify_key: bytes, message: bytes, signature: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(verify_key).verify(signature, message)
        return True
    except (InvalidSignature, ValueError):
        return False


# --- element permutation ------------------------------------------------------

_UINT_BY_SIZE = {1: np.uint8, 2: np.uint16, 4: np.uint32, 8: np.uint64}


def _lanes(data: bytes, element_size: int) -> np.ndarray:
    if len(data) % element_size:
        raise MtdError(f"buffer of {len(data)} bytes is not whole {element_size}-byte elements")
    return np.frombuffer(data, dtype=_UINT_BY_SIZE[element_size])


def obfuscate_tensor(data: bytes, element_size: int, seed: int) -> bytes:
    """out[i] = in[perm[i]] over fixed-size elements."""
    lanes = _lanes(data, element_size)
    if len(lanes) <= 1:
        return bytes(data)
    perm = fisher_yates_indices(len(lanes), seed)
    return lanes[perm].tobytes()


def deobfuscate_tensor(data: bytes, element_size: int, seed: int) -> bytes:
    """Exact inverse scatter: out[perm[i]] = in[i]."""
    lanes = _lanes(data, element_size)
    if len(lanes) <= 1:
        return bytes(data)
    perm = fisher_yates_indices(len(lanes), seed)
    out = np.empty_like(lanes)
    out[perm] = lanes
    return out.tobytes()


# --- mapping ----------------------------------------------------------------


@dataclass(frozen=True)
class Mapping:
    mapping_id: bytes
    model_id: bytes
    scheme: str
    per_tensor: "dict[str, int]"  # tensor name -> u64 seed
    created_at: str
    signature: bytes

    def record(self) -> dict:
        return {
            "created_at": self.created_at,
            "mapping_id": self.mapping_id.hex(),
            "model_id": self.model_id.hex(),
            "per_tensor": {
                name: base64.b64encode(struct.pack("<Q", seed)).decode("ascii")
                for name, seed in self.per_tensor.items()
            },
            "scheme": self.scheme,
        }

    def canonical_bytes(self) -> bytes:
        return canonical_json(self.record())

    def to_json(self) -> dict:
        return {"record": self.record(), "signature": base64.b64encode(self.signature).decode("ascii")}

    @classmethod
    def from_json(cls, obj: dict) -> "Mapping":
        try:
            rec = obj["record"]
            per_tensor = {
                name: struct.unpack("<Q", base64.b64decode(blob))[0]
                for name, blob in rec["per_tensor"].items()
            }
            return cls(
                mapping_id=bytes.fromhex(rec["mapping_id"]),
                model_id=bytes.fromhex(rec["model_id"]),
                scheme=rec["scheme"],
                per_tensor=per_tensor,
                created_at=rec["created_at"],
                signature=base64.b64decode(obj["signature"]),
            )
        except (KeyError, TypeError, ValueError, struct.error) as exc:
            raise MtdError(f"malformed mapping document: {exc}")


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


# --- package ----------------------------------------------------------------


@dataclass(frozen=True)
class MtdPackage:
    version: int
    model_id: bytes
    mapping_id: bytes
    weights_hash: bytes
    payload: bytes
    signature: bytes

    def signed_region(self) -> bytes:
        return (
            MTD_MAGIC
            + struct.pack("<H", self.version)
            + self.model_id
            + self.mapping_id
            + self.weights_hash
            + self.payload
        )

    def serialize(self) -> bytes:
        return (
            MTD_MAGIC
            + struct.pack("<H", self.version)
            + self.model_id
            + self.mapping_id
            + self.weights_hash
            + struct.pack("<Q", len(self.payload))
            + self.payload
            + self.signature
        )

    @classmethod
    def parse(cls, data: bytes) -> "MtdPackage":
        header = len(MTD_MAGIC) + 2 + 16 + 16 + 32 + 8
        if len(data) < header + 64:
            raise MalformedPackage(f"package of {len(data)} bytes is shorter than the fixed fields")
        if data[: len(MTD_MAGIC)] != MTD_MAGIC:
            raise MalformedPackage("magic bytes missing; not an MTD package")
        pos = len(MTD_MAGIC)
        (version,) = struct.unpack_from("<H", data, pos)
        pos += 2
        model_id = bytes(data[pos : pos + 16]); pos += 16
        mapping_id = bytes(data[pos : pos + 16]); pos += 16
        weights_hash = bytes(data[pos : pos + 32]); pos += 32
        (payload_len,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        if pos + payload_len + 64 != len(data):
            raise MalformedPackage(
                f"payload length {payload_len} does not fit a {len(data)}-byte package"
            )
        payload = bytes(data[pos : pos + payload_len])
        signature = bytes(data[pos + payload_len :])
        return cls(version, model_id, mapping_id, weights_hash, payload, signature)


def is_mtd_protected(data: bytes) -> bool:
    return data[: len(MTD_MAGIC)] == MTD_MAGIC


# --- protect / load -----------------------------------------------------------


def _plaintext_image(sd: StateDict) -> bytes:
    return serialize([RawTensor(t.name, t.dtype.name, t.shape, t.data) for t in sd])


def protect(sd: StateDict, key: SigningKey, rng=None,
            now: "str | None" = None) -> "tuple[MtdPackage, Mapping]":
    """Obfuscate, hash, sign; returns the package and its separate mapping."""
    if not len(sd):
        raise EmptyModel("cannot protect an empty state dict")
    rng = rng or np.random.default_rng()
    weights_hash = hashlib.sha256(_plaintext_image(sd)).digest()
    model_id = bytes(int(x) for x in rng.integers(0, 256, 16))
    mapping_id = bytes(int(x) for x in rng.integers(0, 256, 16))
    seeds: dict[str, int] = {}
    obfuscated: list[RawTensor] = []
    for t in sd:
        seed = int(rng.integers(0, 2**63, dtype=np.int64))
        seeds[t.name] = seed
        obfuscated.append(
            RawTensor(t.name, t.dtype.name, t.shape,
                      obfuscate_tensor(t.data, t.dtype.element_size, seed))
        )
    payload = serialize(obfuscated)
    created = now or time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    unsigned = Mapping(mapping_id, model_id, SCHEME, seeds, created, b"")
    mapping = Mapping(mapping_id, model_id, SCHEME, seeds, created,
                      key.sign(unsigned.canonical_bytes()))
    pkg = MtdPackage(MTD_VERSION, model_id, mapping_id, weights_hash, payload, b"")
    pkg = MtdPackage(MTD_VERSION, model_id, mapping_id, weights_hash, payload,
                     key.sign(pkg.signed_region()))
    return pkg, mapping


def _alert(model_id: bytes, kind: AlertKind, detail: str) -> AlertEvent:
    return AlertEvent(model_id, kind, detail, time.time())


def load(pkg_bytes: bytes, store, verify_key: bytes) -> "StateDict | AlertEvent":
    """Verify-and-reconstruct; any failed check returns an AlertEvent.

    Callers should check is_mtd_protected first and fall back to CDR
    for foreign files; non-MTD bytes here raise MalformedPackage.
    """
    pkg = MtdPackage.parse(pkg_bytes)
    if not verify_signature(verify_key, pkg.signed_region(), pkg.signature):
        return _alert(pkg.model_id, AlertKind.SIGNATURE_INVALID, "package signature check failed")

    from .store import MappingSignatureInvalid, NotFound  # local: store imports mtd

    try:
        mapping = store.get_mapping(pkg.mapping_id, verify_key)
    except NotFound:
        return _alert(pkg.model_id, AlertKind.MAPPING_MISSING,
                      f"mapping {pkg.mapping_id.hex()} not in store")
    except MappingSignatureInvalid as exc:
        return _alert(pkg.model_id, AlertKind.MAPPING_SIGNATURE_INVALID, str(exc))

    if not store.verify_model(pkg.model_id, pkg.weights_hash):
        return _alert(pkg.model_id, AlertKind.HASH_MISMATCH,
                      "no store record matches (model_id, weights_hash)")
    if mapping.model_id != pkg.model_id or mapping.scheme != SCHEME:
        return _alert(pkg.model_id, AlertKind.MAPPING_SIGNATURE_INVALID,
                      "mapping bound to a different model or scheme")

    try:
        tensors, _meta = deserialize(pkg.payload)
    except SafetensorsError as exc:
        raise MalformedPackage(f"payload is not valid safetensors: {exc}")

    if set(mapping.per_tensor) != {t.name for t in tensors}:
        return _alert(pkg.model_id, AlertKind.MAPPING_SIGNATURE_INVALID,
                      "mapping tensor names do not cover the payload")

    sd = StateDict()
    for t in tensors:
        dtype = Dtype(t.dtype)
        plain = deobfuscate_tensor(t.data, dtype.element_size, mapping.per_tensor[t.name])
        sd.append(TensorSpec(
            name=t.name, dtype=dtype, shape=t.shape,
            stride=_contiguous(t.shape), storage_offset=0, storage_key="",
            data=plain,
        ))
    recomputed = hashlib.sha256(_plaintext_image(sd)).digest()
    if recomputed != pkg.weights_hash:
        return _alert(pkg.model_id, AlertKind.HASH_MISMATCH,
                      "reconstructed weights hash differs from the signed hash")
    return sd


def _contiguous(shape: "tuple[int, ...]") -> "tuple[int, ...]":
    stride = [1] * len(shape)
    for i in range(len(shape) - 2, -1, -1):
        stride[i] = stride[i + 1] * shape[i + 1]
    return tuple(stride)
