"""
The append-only chain: canonical encodings, transaction and header hashing,
block creation, block/chain validation, genesis, and JSON-lines export.
"""
import hashlib
import json
import logging
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

from pydantic import ValidationError

from app.consortium.errors import (
    BlockRejectedError,
    ChainFormatError,
    EmptyBatchError,
    InvalidTransactionError,
)
from app.consortium.models.protocol import PeerRecord, QuorumPolicy, ValidatorRegistry
from app.consortium.models.schemas import (
    ZERO_HASH,
    Block,
    BlockHeader,
    Blockchain,
    Identity,
    RejectReason,
    Signature,
    Transaction,
    ValidationResult,
    Wallet,
)
from app.consortium.services import identity_service
from app.consortium.services.encoding import Reader, u32, u64, var_bytes
from app.consortium.services.merkle import MerkleTree, build_merkle_root

logger = logging.getLogger(__name__)

HEADER_SIZE = 80
GENESIS_VERSION = 1
GENESIS_TRANSACTIONS = 4


# -------------------------------------------------------
# Canonical encodings
# -------------------------------------------------------
def canonical_encode_header(header: BlockHeader) -> bytes:
    """version(4) || prev_header_hash(32) || merkle_root(32) || timestamp(8) || nonce(4)."""
    return (
        u32(header.version)
        + header.prev_header_hash
        + header.merkle_root
        + u64(header.timestamp)
        + u32(header.nonce)
    )


def decode_header(data: bytes) -> BlockHeader:
    reader = Reader(data)
    header = _read_header(reader)
    reader.finish()
    return header


def _read_header(reader: Reader) -> BlockHeader:
    return BlockHeader(
        version=reader.u32(),
        prev_header_hash=reader.fixed(32),
        merkle_root=reader.fixed(32),
        timestamp=reader.u64(),
        nonce=reader.u32(),
    )


def header_hash(header: BlockHeader) -> bytes:
    return hashlib.sha256(canonical_encode_header(header)).digest()


def transaction_signing_bytes(
    sender: Identity, payload: bytes, tx_nonce: int, timestamp: int
) -> bytes:
    """sender(32) || len(payload)(4) || payload || tx_nonce(8) || timestamp(8)."""
    return sender.digest + var_bytes(payload) + u64(tx_nonce) + u64(timestamp)


def encode_transaction(tx: Transaction) -> bytes:
    """Signing bytes, then sender_key(32), then the length-prefixed signature."""
    return (
        transaction_signing_bytes(tx.sender, tx.payload, tx.tx_nonce, tx.timestamp)
        + tx.sender_key
        + var_bytes(tx.signature.data)
    )


def read_transaction(reader: Reader) -> Transaction:
    sender = Identity(digest=reader.fixed(32))
    payload = reader.var_bytes()
    tx_nonce = reader.u64()
    timestamp = reader.u64()
    sender_key = reader.fixed(32)
    signature = Signature(data=reader.var_bytes(), signer=sender)
    return Transaction(
        sender=sender,
        sender_key=sender_key,
        payload=payload,
        tx_nonce=tx_nonce,
        timestamp=timestamp,
        signature=signature,
    )


def encode_signature(sig: Signature) -> bytes:
    return sig.signer.digest + var_bytes(sig.data)


def read_signature(reader: Reader) -> Signature:
    signer = Identity(digest=reader.fixed(32))
    return Signature(data=reader.var_bytes(), signer=signer)


def encode_block(block: Block) -> bytes:
    parts = [canonical_encode_header(block.header), u32(len(block.transactions))]
    parts.extend(var_bytes(encode_transaction(tx)) for tx in block.transactions)
    parts.append(u32(len(block.validator_signatures)))
    parts.extend(encode_signature(sig) for sig in block.validator_signatures)
    return b"".join(parts)


def read_block(reader: Reader) -> Block:
    header = _read_header(reader)
    transactions = []
    for _ in range(reader.u32()):
        tx_reader = Reader(reader.var_bytes())
        transactions.append(read_transaction(tx_reader))
        tx_reader.finish()
    signatures = tuple(read_signature(reader) for _ in range(reader.u32()))
    return Block(header=header, transactions=tuple(transactions), validator_signatures=signatures)


def encode_chain(chain: Blockchain) -> bytes:
    return u32(len(chain.blocks)) + b"".join(var_bytes(encode_block(b)) for b in chain.blocks)


def read_chain(reader: Reader) -> Blockchain:
    blocks = []
    for _ in range(reader.u32()):
        block_reader = Reader(reader.var_bytes())
        blocks.append(read_block(block_reader))
        block_reader.finish()
    return Blockchain(blocks=tuple(blocks))


def hash_transaction(tx: Transaction) -> bytes:
    """SHA-256 over the full canonical encoding; also the transaction id."""
    return hashlib.sha256(encode_transaction(tx)).digest()


# -------------------------------------------------------
# Transactions
# -------------------------------------------------------
def make_transaction(wallet: Wallet, payload: bytes, tx_nonce: int, timestamp: int) -> Transaction:
    message = transaction_signing_bytes(wallet.identity, payload, tx_nonce, timestamp)
    return Transaction(
        sender=wallet.identity,
        sender_key=wallet.keypair.public_key,
        payload=payload,
        tx_nonce=tx_nonce,
        timestamp=timestamp,
        signature=identity_service.sign(wallet.keypair.private_key, message),
    )


def verify_transaction_signature(tx: Transaction) -> bool:
    try:
        if identity_service.derive_identity(tx.sender_key) != tx.sender:
            return False
    except ValueError:
        return False
    message = transaction_signing_bytes(tx.sender, tx.payload, tx.tx_nonce, tx.timestamp)
    return identity_service.verify(tx.sender_key, message, tx.signature)


# -------------------------------------------------------
# Blocks
# -------------------------------------------------------
def merkle_root_of(transactions: Sequence[Transaction]) -> bytes:
    return build_merkle_root([hash_transaction(tx) for tx in transactions])


def merkle_tree_of(block: Block) -> MerkleTree:
    return MerkleTree.build([hash_transaction(tx) for tx in block.transactions])


def duplicate_reasons(transactions: Sequence[Transaction]) -> list[RejectReason]:
    """
    A repeated transaction id is MERKLE: copying the odd last leaf leaves the
    root unchanged. A repeated (sender, tx_nonce) pair is TX_SIG.
    """
    reasons: list[RejectReason] = []
    ids = [hash_transaction(tx) for tx in transactions]
    if len(set(ids)) != len(ids):
        reasons.append(RejectReason.MERKLE)
    nonces = [(tx.sender, tx.tx_nonce) for tx in transactions]
    if len(set(nonces)) != len(nonces):
        reasons.append(RejectReason.TX_SIG)
    return reasons


def create_block(
    prev: BlockHeader, txs: Sequence[Transaction], timestamp: int, version: int
) -> Block:
    """Build the next block on ``prev``; header nonce is the block height."""
    if not txs:
        raise EmptyBatchError("cannot create a block from an empty batch")
    for tx in txs:
        if not verify_transaction_signature(tx):
            raise InvalidTransactionError(
                f"invalid signature on transaction {hash_transaction(tx).hex()}"
            )
    if duplicate_reasons(txs):
        raise InvalidTransactionError("batch repeats a transaction or a sender nonce")
    header = BlockHeader(
        version=version,
        prev_header_hash=header_hash(prev),
        merkle_root=merkle_root_of(txs),
        timestamp=timestamp,
        nonce=prev.nonce + 1,
    )
    return Block(header=header, transactions=tuple(txs))


def count_distinct_valid_signatures(
    signatures: Iterable[Signature],
    message: bytes,
    lookup: Callable[[Identity], Optional[PeerRecord]],
) -> int:
    """Distinct signers known to ``lookup`` whose signature verifies over ``message``."""
    valid: set[Identity] = set()
    for sig in signatures:
        if sig.signer in valid:
            continue
        peer = lookup(sig.signer)
        if peer is not None and identity_service.verify(peer.public_key, message, sig):
            valid.add(sig.signer)
    return len(valid)


def check_block_body(block: Block, prev: BlockHeader) -> list[RejectReason]:
    """Link, Merkle and transaction-signature checks (everything but the quorum)."""
    reasons: list[RejectReason] = []
    header = block.header
    if (
        header.prev_header_hash != header_hash(prev)
        or header.nonce != prev.nonce + 1
        or header.timestamp < prev.timestamp
    ):
        reasons.append(RejectReason.LINK)
    if not block.transactions or merkle_root_of(block.transactions) != header.merkle_root:
        reasons.append(RejectReason.MERKLE)
    if not all(verify_transaction_signature(tx) for tx in block.transactions):
        reasons.append(RejectReason.TX_SIG)
    reasons.extend(duplicate_reasons(block.transactions))
    return list(dict.fromkeys(reasons))


def validate_block(
    block: Block, prev: BlockHeader, policy: QuorumPolicy, registry: ValidatorRegistry
) -> ValidationResult:
    reasons = check_block_body(block, prev)
    signed = count_distinct_valid_signatures(
        block.validator_signatures, header_hash(block.header), registry.get
    )
    if signed < policy.threshold:
        reasons.append(RejectReason.QUORUM)
    return ValidationResult(reasons=tuple(reasons))


def append_block(
    chain: Blockchain, block: Block, policy: QuorumPolicy, registry: ValidatorRegistry
) -> Blockchain:
    if not chain.blocks:
        raise BlockRejectedError([RejectReason.LINK])
    result = validate_block(block, chain.tip.header, policy, registry)
    if not result.accepted:
        raise BlockRejectedError(result.reasons)
    return Blockchain(blocks=chain.blocks + (block,))


# -------------------------------------------------------
# Genesis
# -------------------------------------------------------
def genesis_wallet(genesis_seed: bytes) -> Wallet:
    seed = hashlib.sha256(b"genesis-key" + genesis_seed).digest()
    return identity_service.create_wallet(identity_service.generate_keypair(seed), 0)


def make_genesis(genesis_seed: bytes) -> Block:
    """Deterministic block 0 with seed-derived transactions, signed by the genesis identity."""
    wallet = genesis_wallet(genesis_seed)
    transactions = tuple(
        make_transaction(
            wallet,
            payload=hashlib.sha256(genesis_seed + b"genesis-tx" + u32(i)).digest(),
            tx_nonce=i + 1,
            timestamp=0,
        )
        for i in range(GENESIS_TRANSACTIONS)
    )
    header = BlockHeader(
        version=GENESIS_VERSION,
        prev_header_hash=ZERO_HASH,
        merkle_root=merkle_root_of(transactions),
        timestamp=0,
        nonce=0,
    )
    signature = identity_service.sign(wallet.keypair.private_key, header_hash(header))
    return Block(header=header, transactions=transactions, validator_signatures=(signature,))


def validate_genesis(block: Block) -> ValidationResult:
    header = block.header
    reasons: list[RejectReason] = []
    if header.prev_header_hash != ZERO_HASH or header.nonce != 0 or header.timestamp != 0:
        reasons.append(RejectReason.GENESIS)
    if not block.transactions or merkle_root_of(block.transactions) != header.merkle_root:
        reasons.append(RejectReason.MERKLE)
    if not all(verify_transaction_signature(tx) for tx in block.transactions):
        reasons.append(RejectReason.TX_SIG)
    reasons.extend(duplicate_reasons(block.transactions))

    # the genesis identity is the sole sender and the sole signer
    senders = {(tx.sender, tx.sender_key) for tx in block.transactions}
    if len(senders) != 1 or len(block.validator_signatures) != 1:
        reasons.append(RejectReason.GENESIS)
    else:
        _, sender_key = next(iter(senders))
        if not identity_service.verify(sender_key, header_hash(header), block.validator_signatures[0]):
            reasons.append(RejectReason.QUORUM)
    return ValidationResult(reasons=tuple(dict.fromkeys(reasons)))


def verify_chain(chain: Blockchain, policy: QuorumPolicy, registry: ValidatorRegistry) -> bool:
    if not chain.blocks:
        return False
    if not validate_genesis(chain.blocks[0]).accepted:
        return False
    for prev, block in zip(chain.blocks, chain.blocks[1:]):
        result = validate_block(block, prev.header, policy, registry)
        if not result.accepted:
            logger.debug("Chain check failed at nonce %d: %s", block.header.nonce, result.reasons)
            return False
    return True


# -------------------------------------------------------
# Queries
# -------------------------------------------------------
def header_hash_at(chain: Blockchain, height: int) -> bytes:
    return header_hash(chain.blocks[height].header)


def find_transaction(chain: Blockchain, tx_id: bytes) -> Optional[tuple[int, int]]:
    """(height, index) of the transaction with this id, if present."""
    for height, block in enumerate(chain.blocks):
        for index, tx in enumerate(block.transactions):
            if hash_transaction(tx) == tx_id:
                return height, index
    return None


def transaction_history(chain: Blockchain, identity: Identity) -> list[tuple[int, str]]:
    """(height, tx_id hex) for every transaction sent by ``identity``."""
    return [
        (height, hash_transaction(tx).hex())
        for height, block in enumerate(chain.blocks)
        for tx in block.transactions
        if tx.sender == identity
    ]


# -------------------------------------------------------
# JSON-lines export / import
# -------------------------------------------------------
def block_to_json_line(block: Block, height: int) -> str:
    record = {
        "height": height,
        "hash": header_hash(block.header).hex(),
        "block": block.model_dump(mode="json"),
    }
    return json.dumps(record, separators=(",", ":"))


def export_chain(chain: Blockchain, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [block_to_json_line(block, height) for height, block in enumerate(chain.blocks)]
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    logger.info("Exported %d blocks to %s", len(lines), path)
    return path


def import_chain(path: str | Path) -> Blockchain:
    blocks = []
    with Path(path).open(encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                block = Block.model_validate(record["block"])
            except (json.JSONDecodeError, KeyError, TypeError, ValidationError) as e:
                raise ChainFormatError(f"{path}:{line_number}: {e}") from e
            if header_hash(block.header).hex() != record.get("hash"):
                raise ChainFormatError(f"{path}:{line_number}: header hash mismatch")
            blocks.append(block)
    return Blockchain(blocks=tuple(blocks))


def export_registry(registry: ValidatorRegistry, policy: QuorumPolicy, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    record = {
        "policy": policy.model_dump(mode="json"),
        "peers": [peer.model_dump(mode="json") for peer in registry.peers],
    }
    path.write_text(json.dumps(record, indent=2) + "\n", encoding="utf-8")
    return path


def import_registry(path: str | Path) -> tuple[ValidatorRegistry, QuorumPolicy]:
    try:
        record = json.loads(Path(path).read_text(encoding="utf-8"))
        policy = QuorumPolicy.model_validate(record["policy"])
        registry = ValidatorRegistry(
            peers=tuple(PeerRecord.model_validate(p) for p in record["peers"])
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValidationError) as e:
        raise ChainFormatError(f"{path}: {e}") from e
    return registry, policy
