"""
Pydantic models for the consortium layer: peers, users, quorum policy,
round configuration, the pending pool and block proposals.
"""
from enum import Enum
from functools import cached_property
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.consortium.models.schemas import (
    Block,
    BlockchainAddress,
    Identity,
    Key32,
    Signature,
    Transaction,
    UInt32,
    UInt64,
)


class PeerRecord(BaseModel):
    """A pre-selected consortium department."""

    model_config = ConfigDict(frozen=True)

    identity: Identity
    address: BlockchainAddress
    public_key: Key32
    department_label: str
    enrolled_at: UInt64


class ValidatorRegistry(BaseModel):
    """Consortium peers (N), kept sorted by identity."""

    model_config = ConfigDict(frozen=True)

    peers: tuple[PeerRecord, ...] = ()

    @model_validator(mode="after")
    def check_unique_identities(self) -> "ValidatorRegistry":
        identities = [p.identity for p in self.peers]
        if len(set(identities)) != len(identities):
            raise ValueError("peer identities must be unique")
        return self

    @cached_property
    def by_identity(self) -> dict[Identity, PeerRecord]:
        return {p.identity: p for p in self.peers}

    def get(self, identity: Identity) -> Optional[PeerRecord]:
        return self.by_identity.get(identity)

    def __contains__(self, identity: Identity) -> bool:
        return identity in self.by_identity

    def __len__(self) -> int:
        return len(self.peers)

    def sorted_identities(self) -> list[Identity]:
        return sorted(self.by_identity)

    def with_peer(self, peer: PeerRecord) -> "ValidatorRegistry":
        return ValidatorRegistry(peers=tuple(sorted(self.peers + (peer,), key=lambda p: p.identity.hex)))


class WalletBackup(BaseModel):
    """Server-side copy kept for account recovery."""

    model_config = ConfigDict(frozen=True)

    wallet_json: str
    history_ref: str


class RegistrationRequest(BaseModel):
    """What a new user submits at sign-up: public key, backup copy and metadata."""

    model_config = ConfigDict(frozen=True)

    public_key: Key32
    wallet_json: str
    metadata: dict[str, str] = Field(default_factory=dict)


class UserAccount(BaseModel):
    model_config = ConfigDict(frozen=True)

    identity: Identity
    address: BlockchainAddress
    public_key: Key32
    registered_at: UInt64
    metadata: dict[str, str] = Field(default_factory=dict)
    backup: WalletBackup


class QuorumPolicy(BaseModel):
    """Committee size |ω| and the count of distinct signatures that finalizes a block."""

    model_config = ConfigDict(frozen=True)

    committee_size: int = Field(ge=1)
    threshold: int = Field(ge=1)

    @model_validator(mode="after")
    def check_threshold_within_committee(self) -> "QuorumPolicy":
        if self.threshold > self.committee_size:
            raise ValueError(
                f"threshold {self.threshold} exceeds committee size {self.committee_size}"
            )
        return self

    @classmethod
    def byzantine(cls, committee_size: int) -> "QuorumPolicy":
        """Default quorum: floor(2c/3) + 1."""
        return cls(committee_size=committee_size, threshold=(2 * committee_size) // 3 + 1)


class RoundConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    collection_window_ms: int = Field(gt=0)
    version: UInt32


class PendingPool(BaseModel):
    """
    Transactions collected for the next block (R), in arrival order.

    ``last_nonce`` covers both pooled and finalized transactions, so the
    replay check only needs the pool.
    """

    queue: list[Transaction] = Field(default_factory=list)
    arrivals: list[float] = Field(default_factory=list)
    last_nonce: dict[Identity, int] = Field(default_factory=dict)

    def add(self, tx: Transaction, arrived_at: float) -> None:
        self.queue.append(tx)
        self.arrivals.append(arrived_at)
        self.note_nonce(tx.sender, tx.tx_nonce)

    def note_nonce(self, sender: Identity, tx_nonce: int) -> None:
        self.last_nonce[sender] = max(self.last_nonce.get(sender, 0), tx_nonce)

    def expected_nonce(self, sender: Identity) -> int:
        return self.last_nonce.get(sender, 0) + 1

    def take_until(self, expiry: float) -> list[Transaction]:
        """Remove and return every transaction that arrived at or before ``expiry``."""
        taken, kept, kept_arrivals = [], [], []
        for tx, arrived_at in zip(self.queue, self.arrivals):
            if arrived_at <= expiry:
                taken.append(tx)
            else:
                kept.append(tx)
                kept_arrivals.append(arrived_at)
        self.queue, self.arrivals = kept, kept_arrivals
        return taken

    def drain(self) -> list[Transaction]:
        taken = self.queue
        self.queue, self.arrivals = [], []
        return taken

    def prune(self, keep) -> None:
        """Keep only the queued transactions for which ``keep(tx)`` is true."""
        pairs = [(tx, at) for tx, at in zip(self.queue, self.arrivals) if keep(tx)]
        self.queue = [tx for tx, _ in pairs]
        self.arrivals = [at for _, at in pairs]

    def __len__(self) -> int:
        return len(self.queue)


class TransactionBatch(BaseModel):
    """The batch R gathered during one collection window."""

    model_config = ConfigDict(frozen=True)

    transactions: tuple[Transaction, ...] = ()
    opened_at: float
    closed_at: float

    def __len__(self) -> int:
        return len(self.transactions)


class RoundStatus(str, Enum):
    FINALIZED = "FINALIZED"
    SKIPPED = "SKIPPED"
    FAILED = "FAILED"


class NodeTimer(str, Enum):
    """Internal per-node alarms; never sent over the wire."""

    WINDOW_CLOSE = "WINDOW_CLOSE"
    PREVOTE_START = "PREVOTE_START"


class DeliveryReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    sender: Identity
    height: int
    targets: tuple[Identity, ...]

    @property
    def deliveries(self) -> int:
        return len(self.targets)


class RoundOutcome(BaseModel):
    """What one block-production round produced."""

    model_config = ConfigDict(frozen=True)

    round_number: int = Field(ge=0)
    status: RoundStatus
    proposer: Identity
    committee: tuple[Identity, ...]
    txs_count: int = 0
    started_at: float
    finalized_at: float
    block: Optional[Block] = None
    reason: Optional[str] = None

    @property
    def duration_ms(self) -> float:
        return self.finalized_at - self.started_at


class BlockProposal(BaseModel):
    """A candidate block plus the signature replies received for it so far."""

    model_config = ConfigDict(frozen=True)

    candidate: Block
    proposer: Identity
    round_number: int = Field(ge=0)
    committee: tuple[PeerRecord, ...]
    collected_signatures: tuple[Signature, ...] = ()

    def with_signature(self, signature: Signature) -> "BlockProposal":
        return self.model_copy(
            update={"collected_signatures": self.collected_signatures + (signature,)}
        )
