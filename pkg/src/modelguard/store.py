"""Mapping store: the registry of signed mappings and model hash records.

Two backends behind one contract: in-memory for tests and a local
directory (one JSON file per record, atomic write-rename). Record
signatures are verified on insert and re-verified on every read, so
any post-insert mutation of persisted bytes surfaces as
MappingSignatureInvalid rather than silently loading.

The record schema doubles as the wire contract a network service would
speak: see docs/formats.md.
"""

import base64
import json
import os
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .mtd import Mapping, MtdError, verify_signature

RECORD_VERSION = 1


class StoreError(ValueError):
    pass


class SignatureInvalid(StoreError):
    pass


class MappingSignatureInvalid(StoreError):
    pass


class NotFound(KeyError):
    pass


class DuplicateMappingId(StoreError):
    pass


@dataclass(frozen=True)
class StoreRecord:
    mapping_id: bytes
    mapping_blob: bytes  # canonical mapping serialization (the signed region)
    mapping_signature: bytes
    model_id: bytes
    weights_hash: bytes
    stored_at: float

    @classmethod
    def for_mapping(cls, mapping: Mapping, weights_hash: bytes,
                    stored_at: "float | None" = None) -> "StoreRecord":
        return cls(
            mapping_id=mapping.mapping_id,
            mapping_blob=mapping.canonical_bytes(),
            mapping_signature=mapping.signature,
            model_id=mapping.model_id,
            weights_hash=weights_hash,
            stored_at=time.time() if stored_at is None else stored_at,
        )

    def to_json(self) -> dict:
        return {
            "record_version": RECORD_VERSION,
            "mapping_id": self.mapping_id.hex(),
            "mapping_blob": base64.b64encode(self.mapping_blob).decode("ascii"),
            "mapping_signature": base64.b64encode(self.mapping_signature).decode("ascii"),
            "model_id": self.model_id.hex(),
            "weights_hash": self.weights_hash.hex(),
            "stored_at": self.stored_at,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "StoreRecord":
        try:
            return cls(
                mapping_id=bytes.fromhex(obj["mapping_id"]),
                mapping_blob=base64.b64decode(obj["mapping_blob"]),
                mapping_signature=base64.b64decode(obj["mapping_signature"]),
                model_id=bytes.fromhex(obj["model_id"]),
                weights_hash=bytes.fromhex(obj["weights_hash"]),
                stored_at=float(obj["stored_at"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise StoreError(f"malformed store record: {exc}")

    def identical(self, other: "StoreRecord") -> bool:
        return (
            self.mapping_id == other.mapping_id
            and self.mapping_blob == other.mapping_blob
            and self.mapping_signature == other.mapping_signature
            and self.model_id == other.model_id
            and self.weights_hash == other.weights_hash
        )


def _mapping_from_record(rec: StoreRecord, verify_key: bytes) -> Mapping:
    if not verify_signature(verify_key, rec.mapping_blob, rec.mapping_signature):
        raise MappingSignatureInvalid(
            f"stored mapping {rec.mapping_id.hex()} fails signature verification"
        )
    try:
        record_obj = json.loads(rec.mapping_blob.decode("utf-8"))
        mapping = Mapping.from_json(
            {"record": record_obj,
             "signature": base64.b64encode(rec.mapping_signature).decode("ascii")}
        )
    except (UnicodeDecodeError, json.JSONDecodeError, MtdError) as exc:
        raise MappingSignatureInvalid(f"stored mapping blob unusable: {exc}")
    if mapping.canonical_bytes() != rec.mapping_blob:
        raise MappingSignatureInvalid("mapping blob is not in canonical form")
    return mapping


class MappingStore:
    """Interface: put_mapping / get_mapping / verify_model."""

    def put_mapping(self, rec: StoreRecord, creator_key: bytes) -> bytes:
        raise NotImplementedError

    def get_mapping(self, mapping_id: bytes, verify_key: bytes) -> Mapping:
        raise NotImplementedError

    def verify_model(self, model_id: bytes, weights_hash: bytes) -> bool:
        raise NotImplementedError


class InMemoryMappingStore(MappingStore):
    def __init__(self):
        self._records: "dict[bytes, StoreRecord]" = {}
        self._lock = threading.Lock()

    def put_mapping(self, rec: StoreRecord, creator_key: bytes) -> bytes:
        if not verify_signature(creator_key, rec.mapping_blob, rec.mapping_signature):
            raise SignatureInvalid("record signature does not verify against the creator key")
        with self._lock:
            existing = self._records.get(rec.mapping_id)
            if existing is not None and not existing.identical(rec):
                raise DuplicateMappingId(f"mapping id {rec.mapping_id.hex()} already holds different content")
            self._records[rec.mapping_id] = rec
        return rec.mapping_id

    def get_mapping(self, mapping_id: bytes, verify_key: bytes) -> Mapping:
        with self._lock:
            rec = self._records.get(mapping_id)
        if rec is None:
            raise NotFound(mapping_id.hex())
        return _mapping_from_record(rec, verify_key)

    def verify_model(self, model_id: bytes, weights_hash: bytes) -> bool:
        with self._lock:
            return any(
                r.model_id == model_id and r.weights_hash == weights_hash
                for r in self._records.values()
            )


class DirectoryMappingStore(MappingStore):
    """store/<mapping_id>.json with atomic write-rename per record."""

    def __init__(self, root: "str | Path"):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _path(self, mapping_id: bytes) -> Path:
        return self.root / f"{mapping_id.hex()}.json"

    def _read(self, mapping_id: bytes) -> "StoreRecord | None":
        path = self._path(mapping_id)
        if not path.exists():
            return None
        return StoreRecord.from_json(json.loads(path.read_text()))

    def put_mapping(self, rec: StoreRecord, creator_key: bytes) -> bytes:
        if not verify_signature(creator_key, rec.mapping_blob, rec.mapping_signature):
            raise SignatureInvalid("record signature does not verify against the creator key")
        with self._lock:
            existing = self._read(rec.mapping_id)
            if existing is not None and not existing.identical(rec):
                raise DuplicateMappingId(f"mapping id {rec.mapping_id.hex()} already holds different content")
            fd, tmp = tempfile.mkstemp(dir=self.root, suffix=".tmp")
            try:
                with os.fdopen(fd, "w") as fh:
                    json.dump(rec.to_json(), fh, indent=1)
                os.replace(tmp, self._path(rec.mapping_id))
            finally:
                if os.path.exists(tmp):
                    os.unlink(tmp)
        return rec.mapping_id

    def get_mapping(self, mapping_id: bytes, verify_key: bytes) -> Mapping:
        rec = self._read(mapping_id)
        if rec is None:
            raise NotFound(mapping_id.hex())
        return _mapping_from_record(rec, verify_key)

    def verify_model(self, model_id: bytes, weights_hash: bytes) -> bool:
        for path in self.root.glob("*.json"):
            try:
                rec = StoreRecord.from_json(json.loads(path.read_text()))
            except StoreError:
                continue
            if rec.model_id == model_id and rec.weights_hash == weights_hash:
                return True
        return False
