"""
Content-addressed document store and on-chain anchoring.

Documents live at ``<root>/objects/<hex hash>``; ``<root>/index.json`` maps
each hash to its media hint, storage time and tombstone flag. The chain
only ever sees the hash, inside an anchor transaction.
"""
import hashlib
import json
import logging
import threading
from pathlib import Path
from typing import Optional, Protocol

from pydantic import TypeAdapter, ValidationError

from app.consortium.errors import (
    ChainFormatError,
    DocumentCorruptedError,
    DocumentDeletedError,
    DocumentNotFoundError,
    EmptyDocumentError,
    UnknownUserError,
    WireFormatError,
)
from app.consortium.models.offchain import (
    AnchorPayload,
    DocumentStatus,
    DocumentVerification,
    IndexEntry,
    ProofEntry,
    StoredDocument,
    VerificationStatus,
)
from app.consortium.models.schemas import Blockchain, Identity, Transaction, Wallet
from app.consortium.services import ledger_service
from app.consortium.services.encoding import Reader, var_text

logger = logging.getLogger(__name__)

ANCHOR_MAGIC = b"ANC1"

_INDEX = TypeAdapter(dict[str, IndexEntry])


class TransactionSink(Protocol):
    def submit(self, tx: Transaction, at: Optional[float] = None): ...


class DocumentStore:
    """Directory-backed store; index reads and writes go through one lock per instance."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.objects = self.root / "objects"
        self.index_path = self.root / "index.json"
        self._lock = threading.Lock()
        self.objects.mkdir(parents=True, exist_ok=True)
        self._index = self._load_index()

    def _load_index(self) -> dict[str, IndexEntry]:
        if not self.index_path.exists():
            return {}
        try:
            return _INDEX.validate_json(self.index_path.read_bytes())
        except ValidationError as e:
            raise ChainFormatError(f"{self.index_path}: {e}") from e

    def _save_index(self) -> None:
        """Write the whole index to a sibling file, then rename it into place."""
        record = {key: self._index[key].model_dump() for key in sorted(self._index)}
        staging = self.index_path.with_name(self.index_path.name + ".tmp")
        staging.write_text(json.dumps(record, indent=2) + "\n", encoding="utf-8")
        staging.replace(self.index_path)

    def __len__(self) -> int:
        return len(self._index)

    def put(self, content: bytes, media_hint: str, now: int) -> bytes:
        if not content:
            raise EmptyDocumentError("cannot store an empty document")
        doc_hash = hashlib.sha256(content).digest()
        key = doc_hash.hex()
        with self._lock:
            entry = self._index.get(key)
            if entry is not None and not entry.deleted:
                return doc_hash
            (self.objects / key).write_bytes(content)
            self._index[key] = IndexEntry(media_hint=media_hint, stored_at=now)
            self._save_index()
        logger.info("Stored %s document %s (%d bytes)", media_hint, key, len(content))
        return doc_hash

    def get(self, doc_hash: bytes) -> bytes:
        key = doc_hash.hex()
        with self._lock:
            entry = self._index.get(key)
            if entry is None:
                raise DocumentNotFoundError(f"no document {key}")
            if entry.deleted:
                raise DocumentDeletedError(f"document {key} was deleted")
            try:
                content = (self.objects / key).read_bytes()
            except FileNotFoundError as e:
                raise DocumentCorruptedError(f"document {key} is indexed but has no object") from e
        if hashlib.sha256(content).digest() != doc_hash:
            logger.error("Stored object %s does not match its hash", key)
            raise DocumentCorruptedError(f"document {key} does not match its hash")
        return content

    def document(self, doc_hash: bytes) -> StoredDocument:
        key = doc_hash.hex()
        entry = self._index.get(key)
        if entry is None:
            raise DocumentNotFoundError(f"no document {key}")
        return StoredDocument(
            doc_hash=doc_hash,
            content=b"" if entry.deleted else self.get(doc_hash),
            media_hint=entry.media_hint,
            stored_at=entry.stored_at,
            deleted=entry.deleted,
        )

    def delete(self, doc_hash: bytes) -> DocumentStatus:
        """Drop the content, keep a tombstone. Anchors already on chain stay valid."""
        key = doc_hash.hex()
        with self._lock:
            entry = self._index.get(key)
            if entry is None:
                raise DocumentNotFoundError(f"no document {key}")
            (self.objects / key).unlink(missing_ok=True)
            self._index[key] = entry.model_copy(update={"deleted": True})
            self._save_index()
        logger.info("Deleted document %s", key)
        return DocumentStatus.DELETED

    def status(self, doc_hash: bytes) -> DocumentStatus:
        entry = self._index.get(doc_hash.hex())
        if entry is None:
            return DocumentStatus.NOT_FOUND
        return DocumentStatus.DELETED if entry.deleted else DocumentStatus.STORED

    def entries(self) -> dict[str, IndexEntry]:
        return dict(self._index)


def put_document(store: DocumentStore, content: bytes, media_hint: str, now: int) -> bytes:
    return store.put(content, media_hint, now)


def get_document(store: DocumentStore, doc_hash: bytes) -> bytes:
    return store.get(doc_hash)


def delete_document(store: DocumentStore, doc_hash: bytes) -> DocumentStatus:
    return store.delete(doc_hash)


# -------------------------------------------------------
# Anchors
# -------------------------------------------------------
def encode_anchor(anchor: AnchorPayload) -> bytes:
    """magic(4) || doc_hash(32) || submitter(32) || len(media_hint)(4) || media_hint."""
    return ANCHOR_MAGIC + anchor.doc_hash + anchor.submitter.digest + var_text(anchor.media_hint)


def decode_anchor(payload: bytes) -> Optional[AnchorPayload]:
    """The anchor carried by ``payload``, or None for any other transaction payload."""
    if not payload.startswith(ANCHOR_MAGIC):
        return None
    reader = Reader(payload[len(ANCHOR_MAGIC):])
    try:
        doc_hash = reader.fixed(32)
        submitter = Identity(digest=reader.fixed(32))
        media_hint = reader.var_text()
        reader.finish()
    except WireFormatError:
        return None
    return AnchorPayload(doc_hash=doc_hash, media_hint=media_hint, submitter=submitter)


def anchor_document(
    store: DocumentStore,
    doc_hash: bytes,
    wallet: Wallet,
    sink: TransactionSink,
    tx_nonce: int,
    now: int,
    users=None,
) -> Transaction:
    """Sign an anchor transaction for a stored document and hand it to ``sink``."""
    status = store.status(doc_hash)
    if status == DocumentStatus.NOT_FOUND:
        raise DocumentNotFoundError(f"no document {doc_hash.hex()}")
    if status == DocumentStatus.DELETED:
        raise DocumentDeletedError(f"document {doc_hash.hex()} was deleted")
    if users is not None and wallet.identity not in users:
        raise UnknownUserError(f"submitter {wallet.identity} is not a registered user")

    media_hint = store.entries()[doc_hash.hex()].media_hint
    payload = encode_anchor(
        AnchorPayload(doc_hash=doc_hash, media_hint=media_hint, submitter=wallet.identity)
    )
    tx = ledger_service.make_transaction(wallet, payload, tx_nonce, now)
    sink.submit(tx)
    logger.info("Anchoring %s as transaction %s", doc_hash.hex(), ledger_service.hash_transaction(tx).hex())
    return tx


def verify_document(content: bytes, chain: Blockchain) -> DocumentVerification:
    doc_hash = hashlib.sha256(content).digest()
    for height, block in enumerate(chain.blocks):
        for index, tx in enumerate(block.transactions):
            anchor = decode_anchor(tx.payload)
            if anchor is None or anchor.doc_hash != doc_hash:
                continue
            tree = ledger_service.merkle_tree_of(block)
            return DocumentVerification(
                status=VerificationStatus.ANCHORED,
                doc_hash=doc_hash,
                height=height,
                tx_index=index,
                tx_id=tree.leaves[index],
                merkle_root=tree.root,
                proof=tuple(ProofEntry(hash=step.hash, side=step.side) for step in tree.proof(index)),
            )
    return DocumentVerification(status=VerificationStatus.UNANCHORED, doc_hash=doc_hash)
