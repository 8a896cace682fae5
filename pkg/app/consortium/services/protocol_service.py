"""
Consortium layer: user registration, peer enrollment, validator election,
windowed transaction collection, quorum signing and chain broadcast.

Everything here is a pure step over explicit state. ``run_round`` strings
the steps together over any network that satisfies ``ConsortiumNetwork``.
"""
import logging
from typing import Iterable, Optional, Protocol, Sequence

from app.consortium.errors import (
    DuplicateRegistrationError,
    EmptyBatchError,
    InconsistentPeerError,
    NotInCommitteeError,
    QuorumNotMetError,
    RegistryTooSmallError,
    SigningRefusedError,
    UnknownUserError,
    WalletFormatError,
)
from app.consortium.models.messages import ChainBroadcast, PeerAnnouncement
from app.consortium.models.protocol import (
    BlockProposal,
    DeliveryReport,
    NodeTimer,
    PeerRecord,
    PendingPool,
    QuorumPolicy,
    RegistrationRequest,
    RoundConfig,
    RoundOutcome,
    RoundStatus,
    TransactionBatch,
    UserAccount,
    ValidatorRegistry,
    WalletBackup,
)
from app.consortium.models.schemas import (
    Block,
    Blockchain,
    Identity,
    RejectReason,
    Signature,
    Transaction,
    ValidationResult,
    Wallet,
)
from app.consortium.services import identity_service, ledger_service

logger = logging.getLogger(__name__)


class MessageSink(Protocol):
    """Anything that can fan a message out to peers: the simulator or a node's reaction."""

    def broadcast(self, sender: Identity, targets: Sequence[Identity], body) -> list: ...


class ConsortiumNetwork(MessageSink, Protocol):
    registry: ValidatorRegistry
    nodes: dict

    @property
    def now(self) -> float: ...

    def begin_round(self, node_id: Identity, round_number: int) -> None: ...

    def schedule_timer(self, target: Identity, at: float, timer: NodeTimer): ...

    def run_until(self, until: float): ...

    def run_to_completion(self, stop_when=None, until: Optional[float] = None): ...

    def adoption_times(self, height: int) -> dict[Identity, float]: ...


# -------------------------------------------------------
# Users
# -------------------------------------------------------
class UserDirectory:
    """Registered e-government users keyed by identity, with their wallet backups."""

    def __init__(self, accounts: Iterable[UserAccount] = ()):
        self._accounts: dict[Identity, UserAccount] = {a.identity: a for a in accounts}

    def add(self, account: UserAccount) -> None:
        if account.identity in self._accounts:
            raise DuplicateRegistrationError(f"user {account.identity} already registered")
        self._accounts[account.identity] = account

    def get(self, identity: Identity) -> Optional[UserAccount]:
        return self._accounts.get(identity)

    def __contains__(self, identity: Identity) -> bool:
        return identity in self._accounts

    def __len__(self) -> int:
        return len(self._accounts)

    def __iter__(self):
        return iter(self._accounts.values())

    def recover_wallet(self, identity: Identity) -> Wallet:
        """Restore a user's wallet from the server-side backup."""
        account = self.get(identity)
        if account is None:
            raise UnknownUserError(f"no account for {identity}")
        return identity_service.wallet_from_json(account.backup.wallet_json)


def register_user(request: RegistrationRequest, now: int, users: UserDirectory) -> UserAccount:
    identity = identity_service.derive_identity(request.public_key)
    if identity in users:
        raise DuplicateRegistrationError(f"user {identity} already registered")

    # the backup must restore the very key being registered
    backup_wallet = identity_service.wallet_from_json(request.wallet_json)
    if backup_wallet.keypair.public_key != request.public_key:
        raise WalletFormatError("wallet backup does not hold the registered public key")

    account = UserAccount(
        identity=identity,
        address=identity_service.derive_address(request.public_key),
        public_key=request.public_key,
        registered_at=now,
        metadata=request.metadata,
        backup=WalletBackup(wallet_json=request.wallet_json, history_ref=f"history/{identity.hex}"),
    )
    users.add(account)
    logger.info("Registered user %s", identity)
    return account


def registration_request(wallet: Wallet, **metadata: str) -> RegistrationRequest:
    return RegistrationRequest(
        public_key=wallet.keypair.public_key,
        wallet_json=identity_service.wallet_to_json(wallet),
        metadata=metadata,
    )


# -------------------------------------------------------
# Peers
# -------------------------------------------------------
def make_peer(wallet: Wallet, department_label: str, now: int) -> PeerRecord:
    return PeerRecord(
        identity=wallet.identity,
        address=wallet.address,
        public_key=wallet.keypair.public_key,
        department_label=department_label,
        enrolled_at=now,
    )


def check_peer(candidate: PeerRecord) -> None:
    if (
        identity_service.derive_identity(candidate.public_key) != candidate.identity
        or identity_service.derive_address(candidate.public_key) != candidate.address
    ):
        raise InconsistentPeerError(
            f"peer {candidate.department_label!r}: identity/address do not derive from its key"
        )


def register_peer(
    candidate: PeerRecord,
    registry: ValidatorRegistry,
    network=None,
) -> ValidatorRegistry:
    """
    Enroll a pre-selected department. With a network handle the candidate
    announces itself to every existing peer, and it only counts as a
    verified validator once those announcements have all been delivered.
    """
    check_peer(candidate)
    if candidate.identity in registry:
        raise DuplicateRegistrationError(f"peer {candidate.identity} already enrolled")

    if network is not None:
        targets = [p.identity for p in registry.peers]
        network.broadcast(candidate.identity, targets, PeerAnnouncement(peer=candidate))
        network.run_to_completion()

    logger.info("Enrolled peer %s (%s)", candidate.identity, candidate.department_label)
    return registry.with_peer(candidate)


# -------------------------------------------------------
# Transactions
# -------------------------------------------------------
def validate_transaction(
    tx: Transaction, users: UserDirectory, pool: Optional[PendingPool] = None
) -> ValidationResult:
    """
    Admission check: known sender, valid signature under the registered key,
    and ``tx_nonce`` exactly one past the sender's last known nonce.
    """
    account = users.get(tx.sender)
    if account is None:
        return ValidationResult(reasons=(RejectReason.UNKNOWN_SENDER,))

    reasons: list[RejectReason] = []
    if tx.sender_key != account.public_key or not ledger_service.verify_transaction_signature(tx):
        reasons.append(RejectReason.BAD_SIGNATURE)
    expected = pool.expected_nonce(tx.sender) if pool is not None else 1
    if tx.tx_nonce != expected:
        reasons.append(RejectReason.NONCE_REPLAY)
    return ValidationResult(reasons=tuple(reasons))


# -------------------------------------------------------
# Rounds
# -------------------------------------------------------
def elect_validators(
    registry: ValidatorRegistry, round_number: int, policy: QuorumPolicy
) -> tuple[PeerRecord, ...]:
    """Sorted identities rotated by ``round_number``; the first member proposes."""
    if len(registry) < policy.committee_size:
        raise RegistryTooSmallError(
            f"registry of {len(registry)} cannot seat a committee of {policy.committee_size}"
        )
    ordered = [registry.get(identity) for identity in registry.sorted_identities()]
    offset = round_number % len(ordered)
    rotated = ordered[offset:] + ordered[:offset]
    return tuple(rotated[: policy.committee_size])


def collect_transactions(pool: PendingPool, window_ms: float, opened_at: float) -> TransactionBatch:
    if window_ms <= 0:
        raise ValueError("collection window must be positive")
    closed_at = opened_at + window_ms
    return TransactionBatch(
        transactions=tuple(pool.take_until(closed_at)),
        opened_at=opened_at,
        closed_at=closed_at,
    )


def propose_block(
    committee: Sequence[PeerRecord],
    batch: Sequence[Transaction],
    chain: Blockchain,
    config: RoundConfig,
    now: float,
    round_number: int = 0,
) -> BlockProposal:
    if not batch:
        raise EmptyBatchError("nothing to propose: empty batch")
    if not committee:
        raise NotInCommitteeError("no committee elected")
    tip = chain.tip.header
    candidate = ledger_service.create_block(
        tip, list(batch), timestamp=max(int(now), tip.timestamp), version=config.version
    )
    return BlockProposal(
        candidate=candidate,
        proposer=committee[0].identity,
        round_number=round_number,
        committee=tuple(committee),
    )


def sign_block(
    validator: PeerRecord, private_key: bytes, proposal: BlockProposal, chain: Blockchain
) -> Signature:
    """Re-validate the candidate against the validator's own tip, then sign its header hash."""
    if validator.identity not in {member.identity for member in proposal.committee}:
        raise NotInCommitteeError(f"{validator.identity} is not in the round {proposal.round_number} committee")
    reasons = ledger_service.check_block_body(proposal.candidate, chain.tip.header)
    if reasons:
        logger.warning("Validator %s refuses candidate: %s", validator.identity, reasons)
        raise SigningRefusedError(reasons)
    return identity_service.sign(private_key, ledger_service.header_hash(proposal.candidate.header))


def distinct_committee_signatures(proposal: BlockProposal) -> list[Signature]:
    """First valid signature of every distinct committee signer, sorted by signer."""
    committee = {member.identity: member for member in proposal.committee}
    message = ledger_service.header_hash(proposal.candidate.header)
    valid: dict[Identity, Signature] = {}
    for sig in proposal.collected_signatures:
        member = committee.get(sig.signer)
        if member is None or sig.signer in valid:
            continue
        if identity_service.verify(member.public_key, message, sig):
            valid[sig.signer] = sig
    return [valid[signer] for signer in sorted(valid)]


def finalize_block(proposal: BlockProposal, policy: QuorumPolicy) -> Block:
    signatures = distinct_committee_signatures(proposal)
    if len(signatures) < policy.threshold:
        raise QuorumNotMetError(len(signatures), policy.threshold)
    return proposal.candidate.model_copy(update={"validator_signatures": tuple(signatures)})


def broadcast_chain(
    chain: Blockchain,
    registry: ValidatorRegistry,
    network: MessageSink,
    sender: Identity,
    round_number: int = 0,
) -> DeliveryReport:
    """Ship the full chain to every registered peer, the sender included."""
    targets = tuple(p.identity for p in registry.peers)
    network.broadcast(sender, targets, ChainBroadcast(round_number=round_number, chain=chain))
    return DeliveryReport(sender=sender, height=chain.height, targets=targets)


def run_round(
    network: ConsortiumNetwork,
    config: RoundConfig,
    policy: QuorumPolicy,
    round_number: int,
) -> RoundOutcome:
    """
    One block-production round: elect, collect for ``collection_window_ms``,
    then pre-vote, propose, sign, finalize and broadcast. The round ends
    when every peer adopted the new tip, or when all signature replies are
    in without a quorum.
    """
    registry = network.registry
    if not len(registry):
        raise RegistryTooSmallError("cannot run a round without peers")
    committee = elect_validators(registry, round_number, policy)
    proposer = committee[0].identity
    members = tuple(m.identity for m in committee)
    started_at = network.now

    for node_id in registry.sorted_identities():
        network.begin_round(node_id, round_number)
    window_end = started_at + config.collection_window_ms
    network.schedule_timer(proposer, window_end, NodeTimer.WINDOW_CLOSE)
    network.run_until(window_end)

    state = network.nodes[proposer].round
    if not state.batch:
        logger.info("Round %d skipped: no pending transactions", round_number)
        return RoundOutcome(
            round_number=round_number,
            status=RoundStatus.SKIPPED,
            proposer=proposer,
            committee=members,
            started_at=started_at,
            finalized_at=window_end,
            reason="EMPTY_BATCH",
        )

    for member in members:
        network.schedule_timer(member, window_end, NodeTimer.PREVOTE_START)
    network.run_to_completion()

    outcome = dict(
        round_number=round_number,
        proposer=proposer,
        committee=members,
        txs_count=len(state.batch),
        started_at=started_at,
    )
    if state.block is None:
        failure = state.failure or QuorumNotMetError(0, policy.threshold)
        logger.warning("Round %d failed: %s", round_number, failure)
        return RoundOutcome(
            **outcome,
            status=RoundStatus.FAILED,
            finalized_at=state.resolved_at if state.resolved_at is not None else network.now,
            reason=failure.code,
        )

    height = state.block.header.nonce
    adopted = network.adoption_times(height)
    missing = [p for p in registry.sorted_identities() if p not in adopted]
    if missing:
        logger.warning("Round %d: %d peers did not adopt height %d", round_number, len(missing), height)
        return RoundOutcome(
            **outcome,
            status=RoundStatus.FAILED,
            finalized_at=max(adopted.values(), default=network.now),
            block=state.block,
            reason="REPLICATION",
        )

    finalized_at = max(adopted.values())
    logger.info(
        "Round %d finalized height %d with %d txs in %.1f ms",
        round_number, height, len(state.batch), finalized_at - started_at,
    )
    return RoundOutcome(
        **outcome,
        status=RoundStatus.FINALIZED,
        finalized_at=finalized_at,
        block=state.block,
    )
