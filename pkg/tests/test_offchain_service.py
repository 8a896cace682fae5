import hashlib

import pytest

from app.consortium.errors import (
    DocumentCorruptedError,
    DocumentDeletedError,
    DocumentNotFoundError,
    EmptyDocumentError,
    UnknownUserError,
)
from app.consortium.models.offchain import AnchorPayload, DocumentStatus, VerificationStatus
from app.consortium.models.schemas import Blockchain
from app.consortium.services import ledger_service, offchain_service
from app.consortium.services.merkle import verify_proof
from app.consortium.services.protocol_service import UserDirectory

ABC_DIGEST = "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
DEED = b"Deed of sale: parcel 17/42."


class CollectingSink:
    def __init__(self):
        self.submitted = []

    def submit(self, tx, at=None):
        self.submitted.append(tx)


@pytest.fixture
def store(tmp_path):
    return offchain_service.DocumentStore(tmp_path / "store")


def test_put_is_content_addressed(store):
    doc_hash = offchain_service.put_document(store, b"abc", "text", now=5)
    assert doc_hash.hex() == ABC_DIGEST
    assert (store.objects / ABC_DIGEST).read_bytes() == b"abc"
    assert offchain_service.get_document(store, doc_hash) == b"abc"
    # storing the same bytes again keeps the first entry
    assert store.put(b"abc", "other", now=9) == doc_hash
    assert store.document(doc_hash).media_hint == "text"
    assert len(store) == 1


def test_empty_and_unknown_documents(store):
    with pytest.raises(EmptyDocumentError):
        store.put(b"", "text", now=0)
    missing = hashlib.sha256(b"missing").digest()
    assert store.status(missing) == DocumentStatus.NOT_FOUND
    with pytest.raises(DocumentNotFoundError):
        store.get(missing)
    with pytest.raises(DocumentNotFoundError):
        store.delete(missing)


def test_delete_leaves_a_tombstone(store, tmp_path):
    doc_hash = store.put(DEED, "pdf", now=1)
    assert offchain_service.delete_document(store, doc_hash) == DocumentStatus.DELETED
    assert store.status(doc_hash) == DocumentStatus.DELETED
    assert not (store.objects / doc_hash.hex()).exists()
    with pytest.raises(DocumentDeletedError):
        store.get(doc_hash)
    tombstone = store.document(doc_hash)
    assert tombstone.deleted and tombstone.content == b""

    reopened = offchain_service.DocumentStore(tmp_path / "store")
    assert reopened.status(doc_hash) == DocumentStatus.DELETED
    # storing the same bytes again revives it
    assert reopened.put(DEED, "pdf", now=2) == doc_hash
    assert reopened.get(doc_hash) == DEED


def test_altered_object_is_refused_on_read(store):
    doc_hash = store.put(DEED, "pdf", now=1)
    (store.objects / doc_hash.hex()).write_bytes(DEED + b" forged")
    with pytest.raises(DocumentCorruptedError):
        store.get(doc_hash)
    (store.objects / doc_hash.hex()).unlink()
    with pytest.raises(DocumentCorruptedError):
        store.get(doc_hash)


def test_index_is_replaced_whole(store, tmp_path):
    first = store.put(b"abc", "text", now=0)
    second = store.put(DEED, "pdf", now=1)
    assert sorted(p.name for p in store.root.iterdir()) == ["index.json", "objects"]
    reopened = offchain_service.DocumentStore(tmp_path / "store")
    assert reopened.status(first) == reopened.status(second) == DocumentStatus.STORED


def test_anchor_payload_codec(citizen):
    anchor = AnchorPayload(doc_hash=bytes(range(32)), media_hint="pdf", submitter=citizen.identity)
    encoded = offchain_service.encode_anchor(anchor)
    assert encoded.startswith(offchain_service.ANCHOR_MAGIC)
    assert offchain_service.decode_anchor(encoded) == anchor
    assert offchain_service.decode_anchor(b"record-1") is None
    assert offchain_service.decode_anchor(encoded[:-1]) is None


def test_anchor_requires_a_live_document_and_a_registered_user(store, citizen, users):
    sink = CollectingSink()
    missing = hashlib.sha256(b"missing").digest()
    with pytest.raises(DocumentNotFoundError):
        offchain_service.anchor_document(store, missing, citizen, sink, tx_nonce=1, now=0)

    doc_hash = store.put(DEED, "pdf", now=0)
    with pytest.raises(UnknownUserError):
        offchain_service.anchor_document(store, doc_hash, citizen, sink, tx_nonce=1, now=0, users=UserDirectory())

    store.delete(doc_hash)
    with pytest.raises(DocumentDeletedError):
        offchain_service.anchor_document(store, doc_hash, citizen, sink, tx_nonce=1, now=0, users=users)
    assert sink.submitted == []


def test_anchor_verify_round_trip(store, citizen, users, genesis, seal, policy, registry):
    sink = CollectingSink()
    doc_hash = store.put(DEED, "pdf", now=0)
    anchor_tx = offchain_service.anchor_document(store, doc_hash, citizen, sink, tx_nonce=2, now=10, users=users)
    assert sink.submitted == [anchor_tx]

    other = ledger_service.make_transaction(citizen, b"record-1", 1, 10)
    block = ledger_service.create_block(genesis.header, [other, anchor_tx], timestamp=10, version=2)
    chain = ledger_service.append_block(Blockchain(blocks=(genesis,)), seal(block), policy, registry)

    verdict = offchain_service.verify_document(DEED, chain)
    assert verdict.status == VerificationStatus.ANCHORED
    assert (verdict.height, verdict.tx_index) == (1, 1)
    assert verdict.tx_id == ledger_service.hash_transaction(anchor_tx)
    assert verdict.merkle_root == chain.tip.header.merkle_root
    assert verify_proof(verdict.tx_id, [(p.hash, p.side) for p in verdict.proof], verdict.merkle_root)

    altered = bytearray(DEED)
    altered[0] ^= 0x01
    assert offchain_service.verify_document(bytes(altered), chain).status == VerificationStatus.UNANCHORED

    tip = ledger_service.header_hash(chain.tip.header)
    store.delete(doc_hash)
    assert ledger_service.header_hash(chain.tip.header) == tip
    assert offchain_service.verify_document(DEED, chain).anchored
