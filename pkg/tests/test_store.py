"""Mapping store contract: round trips, tamper evidence, concurrency."""

import concurrent.futures
import dataclasses
import json

import numpy as np
import pytest

from modelguard.container import Dtype, StateDict, TensorSpec
from modelguard.mtd import SigningKey, protect
from modelguard.store import (
    DirectoryMappingStore,
    DuplicateMappingId,
    InMemoryMappingStore,
    MappingSignatureInvalid,
    NotFound,
    SignatureInvalid,
    StoreRecord,
)

KEY = SigningKey.from_bytes(bytes(range(32)))


def make_record(seed=1):
    sd = StateDict()
    sd.append(TensorSpec("w", Dtype.f32, (4,), (1,), 0, "", np.random.default_rng(seed).bytes(16)))
    pkg, mapping = protect(sd, KEY, rng=np.random.default_rng(seed))
    return pkg, mapping, StoreRecord.for_mapping(mapping, pkg.weights_hash)


@pytest.fixture(params=["memory", "directory"])
def store(request, tmp_path):
    if request.param == "memory":
        return InMemoryMappingStore()
    return DirectoryMappingStore(tmp_path / "store")


def test_put_get_round_trip(store):
    pkg, mapping, rec = make_record()
    assert store.put_mapping(rec, KEY.verify_bytes) == mapping.mapping_id
    again = store.get_mapping(mapping.mapping_id, KEY.verify_bytes)
    assert again.per_tensor == mapping.per_tensor
    assert again.mapping_id == mapping.mapping_id
    assert again.model_id == mapping.model_id


def test_put_is_idempotent_for_identical(store):
    _, mapping, rec = make_record()
    store.put_mapping(rec, KEY.verify_bytes)
    store.put_mapping(rec, KEY.verify_bytes)  # no error
    assert store.get_mapping(mapping.mapping_id, KEY.verify_bytes)


def test_duplicate_id_different_content(store):
    _, mapping, rec = make_record()
    store.put_mapping(rec, KEY.verify_bytes)
    _, m2, rec2 = make_record(seed=2)
    forged = dataclasses.replace(rec2, mapping_id=rec.mapping_id)
    with pytest.raises(DuplicateMappingId):
        store.put_mapping(forged, KEY.verify_bytes)


def test_corrupt_signature_rejected_at_insert(store):
    _, _, rec = make_record()
    bad = dataclasses.replace(rec, mapping_signature=bytes(64))
    with pytest.raises(SignatureInvalid):
        store.put_mapping(bad, KEY.verify_bytes)


def test_unknown_id_not_found(store):
    with pytest.raises(NotFound):
        store.get_mapping(b"\x00" * 16, KEY.verify_bytes)


def test_verify_model(store):
    pkg, _, rec = make_record()
    store.put_mapping(rec, KEY.verify_bytes)
    assert store.verify_model(pkg.model_id, pkg.weights_hash)
    assert not store.verify_model(pkg.model_id, b"\x11" * 32)
    assert not store.verify_model(b"\x22" * 16, pkg.weights_hash)


def test_tampered_persisted_bytes_detected(tmp_path):
    store = DirectoryMappingStore(tmp_path / "store")
    _, mapping, rec = make_record()
    store.put_mapping(rec, KEY.verify_bytes)
    path = next((tmp_path / "store").glob("*.json"))
    doc = json.loads(path.read_text())
    blob = bytearray(__import__("base64").b64decode(doc["mapping_blob"]))
    blob[5] ^= 1
    doc["mapping_blob"] = __import__("base64").b64encode(bytes(blob)).decode()
    path.write_text(json.dumps(doc))
    with pytest.raises(MappingSignatureInvalid):
        store.get_mapping(mapping.mapping_id, KEY.verify_bytes)


def test_concurrent_puts_and_gets(store):
    records = [make_record(seed=i) for i in range(12)]

    def put(i):
        store.put_mapping(records[i][2], KEY.verify_bytes)
        return store.get_mapping(records[i][1].mapping_id, KEY.verify_bytes).mapping_id

    with concurrent.futures.ThreadPoolExecutor(max_workers=8) as pool:
        ids = list(pool.map(put, range(12)))
    assert ids == [r[1].mapping_id for r in records]


def test_record_schema_versioned():
    _, _, rec = make_record()
    doc = rec.to_json()
    assert doc["record_version"] == 1
    assert StoreRecord.from_json(doc).identical(rec)
