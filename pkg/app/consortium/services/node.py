"""
Per-peer state machine driven by delivered envelopes and timers.

A node never reads a clock: the driver passes ``now`` with every event and
turns the returned ``Reaction`` into outbound traffic and processing time.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from app.consortium.errors import (
    ConsortiumError,
    NotInCommitteeError,
    QuorumNotMetError,
    SigningRefusedError,
)
from app.consortium.models.messages import (
    ChainBroadcast,
    Envelope,
    MessageTag,
    PeerAnnouncement,
    PreVote,
    Proposal,
    SignatureReply,
    SubmitTx,
)
from app.consortium.models.offchain import DocumentStatus
from app.consortium.models.protocol import (
    BlockProposal,
    NodeTimer,
    PeerRecord,
    PendingPool,
    QuorumPolicy,
    RoundConfig,
    ValidatorRegistry,
)
from app.consortium.models.schemas import Block, Blockchain, Identity, Transaction, Wallet
from app.consortium.services import identity_service, ledger_service, offchain_service, protocol_service
from app.consortium.services.offchain_service import DocumentStore
from app.consortium.services.protocol_service import UserDirectory
from app.consortium.services.wire import prevote_message

logger = logging.getLogger(__name__)

REFUSED = "REFUSED"


@dataclass(frozen=True)
class Outbound:
    target: Identity
    body: object


@dataclass
class Reaction:
    """Messages to send plus the verification work done while handling one event."""

    outbound: list[Outbound] = field(default_factory=list)
    signature_checks: int = 0
    tx_checks: int = 0
    adopted_height: Optional[int] = None

    def send(self, target: Identity, body) -> None:
        self.outbound.append(Outbound(target, body))

    def broadcast(self, sender: Identity, targets: Sequence[Identity], body) -> list[Outbound]:
        sent = [Outbound(target, body) for target in targets]
        self.outbound.extend(sent)
        return sent


@dataclass
class RoundState:
    number: int
    committee: tuple[PeerRecord, ...]
    started_at: float
    batch: tuple[Transaction, ...] = ()
    prevotes: set[Identity] = field(default_factory=set)
    proposal: Optional[BlockProposal] = None
    replies: int = 0
    block: Optional[Block] = None
    failure: Optional[QuorumNotMetError] = None
    resolved_at: Optional[float] = None

    @property
    def proposer(self) -> Identity:
        return self.committee[0].identity

    def in_committee(self, identity: Identity) -> bool:
        return any(member.identity == identity for member in self.committee)


class ConsortiumNode:
    """One consortium department: registry view, user directory, pending pool and local chain."""

    def __init__(
        self,
        wallet: Wallet,
        peer: PeerRecord,
        registry: ValidatorRegistry,
        users: UserDirectory,
        policy: QuorumPolicy,
        round_config: RoundConfig,
        genesis: Block,
        refuse_signing: bool = False,
        store: Optional[DocumentStore] = None,
        document_source: Optional[Callable[[bytes], Optional[bytes]]] = None,
    ):
        self.wallet = wallet
        self.peer = peer
        self.registry = registry
        self.users = users
        self.policy = policy
        self.round_config = round_config
        self.chain = Blockchain(blocks=(genesis,))
        self.pool = PendingPool()
        self.refuse_signing = refuse_signing
        self.store = store
        self.document_source = document_source
        self.round: Optional[RoundState] = None
        self.rejected: list[tuple[Transaction, tuple[str, ...]]] = []
        self._note_chain_nonces(self.chain.blocks)

    @property
    def identity(self) -> Identity:
        return self.peer.identity

    def current_proposer(self) -> Identity:
        if self.round is not None:
            return self.round.proposer
        return protocol_service.elect_validators(self.registry, 0, self.policy)[0].identity

    # -------------------------------------------------------
    # Driver entry points
    # -------------------------------------------------------
    def begin_round(self, round_number: int, now: float) -> Reaction:
        committee = protocol_service.elect_validators(self.registry, round_number, self.policy)
        self.round = RoundState(number=round_number, committee=committee, started_at=now)
        reaction = Reaction()
        # pending work follows the proposer
        if self.identity != self.round.proposer:
            for tx in self.pool.drain():
                reaction.send(self.round.proposer, SubmitTx(tx=tx))
        return reaction

    def handle_timer(self, timer: NodeTimer, now: float) -> Reaction:
        reaction = Reaction()
        state = self.round
        if state is None:
            return reaction
        if timer == NodeTimer.WINDOW_CLOSE and self.identity == state.proposer:
            batch = protocol_service.collect_transactions(
                self.pool, self.round_config.collection_window_ms, state.started_at
            )
            state.batch = batch.transactions
        elif timer == NodeTimer.PREVOTE_START and state.in_committee(self.identity):
            signature = identity_service.sign(
                self.wallet.keypair.private_key, prevote_message(state.number, state.proposer)
            )
            vote = PreVote(round_number=state.number, proposer=state.proposer, signature=signature)
            others = [m.identity for m in state.committee if m.identity != self.identity]
            reaction.broadcast(self.identity, others, vote)
            if self.identity == state.proposer:
                self._maybe_propose(now, reaction)
        return reaction

    def handle(self, envelope: Envelope, now: float) -> Reaction:
        reaction = Reaction()
        handler = {
            MessageTag.REGISTER_PEER: self._on_register_peer,
            MessageTag.SUBMIT_TX: self._on_submit_tx,
            MessageTag.PRE_VOTE: self._on_prevote,
            MessageTag.PROPOSAL: self._on_proposal,
            MessageTag.BLOCK_SIGNATURE: self._on_signature,
            MessageTag.CHAIN_BROADCAST: self._on_chain,
        }[envelope.tag]
        handler(envelope.sender, envelope.body, now, reaction)
        return reaction

    # -------------------------------------------------------
    # Handlers
    # -------------------------------------------------------
    def _on_register_peer(self, sender: Identity, body: PeerAnnouncement, now: float, reaction: Reaction) -> None:
        if body.peer.identity not in self.registry:
            self.registry = self.registry.with_peer(body.peer)

    def _on_submit_tx(self, sender: Identity, body: SubmitTx, now: float, reaction: Reaction) -> None:
        proposer = self.current_proposer()
        if proposer != self.identity:
            reaction.send(proposer, body)
            return
        reaction.signature_checks += 1
        reaction.tx_checks += 1
        result = protocol_service.validate_transaction(body.tx, self.users, self.pool)
        if result.accepted:
            self.pool.add(body.tx, now)
            return
        reasons = tuple(r.value for r in result.reasons)
        logger.warning("Peer %s rejected transaction from %s: %s", self.identity, body.tx.sender, reasons)
        self.rejected.append((body.tx, reasons))

    def _on_prevote(self, sender: Identity, body: PreVote, now: float, reaction: Reaction) -> None:
        state = self.round
        if state is None or body.round_number != state.number:
            return
        reaction.signature_checks += 1
        peer = self.registry.get(sender)
        if (
            peer is None
            or not state.in_committee(sender)
            or body.signature.signer != sender
            or not identity_service.verify(peer.public_key, prevote_message(body.round_number, body.proposer), body.signature)
        ):
            logger.warning("Peer %s dropped invalid pre-vote from %s", self.identity, sender)
            return
        if self.identity == state.proposer:
            state.prevotes.add(sender)
            self._maybe_propose(now, reaction)

    def _maybe_propose(self, now: float, reaction: Reaction) -> None:
        state = self.round
        if state.proposal is not None or not state.batch:
            return
        if len(state.prevotes) < len(state.committee) - 1:
            return
        proposal = protocol_service.propose_block(
            state.committee, state.batch, self.chain, self.round_config, now, state.number
        )
        reaction.tx_checks += len(state.batch)
        if not self.refuse_signing:
            signature = identity_service.sign(
                self.wallet.keypair.private_key, ledger_service.header_hash(proposal.candidate.header)
            )
            proposal = proposal.with_signature(signature)
        state.proposal = proposal
        message = Proposal(round_number=state.number, candidate=proposal.candidate)
        for member in state.committee[1:]:
            reaction.send(member.identity, message)
        self._maybe_finalize(now, reaction)

    def _on_proposal(self, sender: Identity, body: Proposal, now: float, reaction: Reaction) -> None:
        state = self.round
        if state is None or body.round_number != state.number or sender != state.proposer:
            return
        candidate = body.candidate
        proposal = BlockProposal(
            candidate=candidate,
            proposer=sender,
            round_number=body.round_number,
            committee=state.committee,
        )
        block_hash = ledger_service.header_hash(candidate.header)
        reaction.signature_checks += len(candidate.transactions)
        try:
            if self.refuse_signing:
                raise SigningRefusedError(())
            signature = protocol_service.sign_block(
                self.peer, self.wallet.keypair.private_key, proposal, self.chain
            )
            reply = SignatureReply(round_number=state.number, block_hash=block_hash, signature=signature)
        except SigningRefusedError as e:
            refusal = tuple(r.value for r in e.reasons) or (REFUSED,)
            reply = SignatureReply(round_number=state.number, block_hash=block_hash, refusal=refusal)
        except NotInCommitteeError as e:
            reply = SignatureReply(round_number=state.number, block_hash=block_hash, refusal=(e.code,))
        reaction.send(sender, reply)

    def _on_signature(self, sender: Identity, body: SignatureReply, now: float, reaction: Reaction) -> None:
        state = self.round
        if (
            state is None
            or state.proposal is None
            or body.round_number != state.number
            or body.block_hash != ledger_service.header_hash(state.proposal.candidate.header)
        ):
            return
        state.replies += 1
        if body.signature is not None:
            reaction.signature_checks += 1
            state.proposal = state.proposal.with_signature(body.signature)
        else:
            logger.warning("Validator %s refused round %d: %s", sender, state.number, body.refusal)
        self._maybe_finalize(now, reaction)

    def _maybe_finalize(self, now: float, reaction: Reaction) -> None:
        state = self.round
        if state.block is not None or state.failure is not None:
            return
        try:
            block = protocol_service.finalize_block(state.proposal, self.policy)
        except QuorumNotMetError as e:
            if state.replies >= len(state.committee) - 1:
                state.failure = e
                state.resolved_at = now
                logger.warning("Round %d: %s", state.number, e)
            return
        try:
            chain = ledger_service.append_block(self.chain, block, self.policy, self.registry)
        except ConsortiumError as e:
            logger.warning("Round %d: finalized block rejected locally: %s", state.number, e)
            return
        state.block = block
        state.resolved_at = now
        protocol_service.broadcast_chain(chain, self.registry, reaction, self.identity, state.number)

    def _on_chain(self, sender: Identity, body: ChainBroadcast, now: float, reaction: Reaction) -> None:
        chain = body.chain
        reaction.signature_checks += sum(
            len(b.transactions) + len(b.validator_signatures) for b in chain.blocks
        )
        if chain.height <= self.chain.height:
            return
        own_tip = ledger_service.header_hash(self.chain.tip.header)
        if ledger_service.header_hash(chain.blocks[self.chain.height].header) != own_tip:
            logger.warning("Peer %s ignored a chain that forks below its tip", self.identity)
            return
        if not ledger_service.verify_chain(chain, self.policy, self.registry):
            logger.warning("Peer %s rejected chain broadcast from %s", self.identity, sender)
            return
        self.adopt(chain, now)
        reaction.adopted_height = chain.height

    # -------------------------------------------------------
    # Chain state
    # -------------------------------------------------------
    def adopt(self, chain: Blockchain, now: float = 0.0) -> None:
        new_blocks = chain.blocks[len(self.chain.blocks):]
        self.chain = chain
        self._note_chain_nonces(new_blocks)
        included = {
            ledger_service.hash_transaction(tx) for block in new_blocks for tx in block.transactions
        }
        self.pool.prune(lambda tx: ledger_service.hash_transaction(tx) not in included)
        if self.store is not None:
            self._replicate_documents(new_blocks, now)
        logger.debug("Peer %s adopted height %d", self.identity, chain.height)

    def _note_chain_nonces(self, blocks) -> None:
        for block in blocks:
            for tx in block.transactions:
                self.pool.note_nonce(tx.sender, tx.tx_nonce)

    def _replicate_documents(self, blocks, now: float) -> None:
        """Copy documents anchored in ``blocks`` that this peer has never stored."""
        for block in blocks:
            for tx in block.transactions:
                anchor = offchain_service.decode_anchor(tx.payload)
                if anchor is None or self.store.status(anchor.doc_hash) != DocumentStatus.NOT_FOUND:
                    continue
                content = self.document_source(anchor.doc_hash) if self.document_source else None
                if content is None:
                    logger.warning("Peer %s found no copy of anchored document %s", self.identity, anchor.doc_hash.hex())
                    continue
                self.store.put(content, anchor.media_hint, now=int(now))
