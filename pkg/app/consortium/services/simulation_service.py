"""
Deterministic discrete-event simulation of the consortium network.

Every delivery and timer is a ``simpy`` timeout carrying an ``Event``; the
environment pops them in (time, scheduling order), which is the
(deliver_at, sequence) order of the events. All randomness is drawn from
one numpy generator seeded by ``SimConfig.seed``, so identical seeds,
configs and workloads replay identically.

Peer-to-peer frames share one channel: each frame holds it for
``medium_slot_ms`` plus ``contention_ms`` per other sender still queued,
then travels ``base_latency_ms`` plus exponential jitter. Links are FIFO.
"""
import hashlib
import itertools
import json
import logging
from collections import Counter, defaultdict, deque
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import simpy
from pydantic import ValidationError

from app.consortium.errors import (
    ChainFormatError,
    DocumentCorruptedError,
    SimulationError,
    UnknownNodeError,
)
from app.consortium.models.messages import CONSENSUS_TAGS, Envelope, MessageTag, SubmitTx
from app.consortium.models.offchain import DocumentStatus
from app.consortium.models.protocol import (
    NodeTimer,
    QuorumPolicy,
    RoundConfig,
    RoundOutcome,
    RoundStatus,
    ValidatorRegistry,
)
from app.consortium.models.schemas import Block, Identity, Transaction, Wallet
from app.consortium.models.simulation import Completion, Event, EventKind, RoundTrace, SimConfig
from app.consortium.services import identity_service, protocol_service, wire
from app.consortium.services.node import ConsortiumNode, Reaction
from app.consortium.services.offchain_service import DocumentStore
from app.consortium.services.protocol_service import UserDirectory

logger = logging.getLogger(__name__)


class SimClock:
    """Simulated milliseconds, read from the environment; never moves backwards."""

    def __init__(self, env: simpy.Environment) -> None:
        self._env = env

    @property
    def now(self) -> float:
        return float(self._env.now)

    def advance(self, to: float) -> None:
        """Move to ``to``. Callers make sure nothing is scheduled before it."""
        if to < self.now:
            raise SimulationError(f"clock cannot move back from {self.now} to {to}")
        if to > self.now:
            self._env.run(until=to)


class Simulator:
    def __init__(self, config: SimConfig, registry: Optional[ValidatorRegistry] = None):
        self.config = config
        self.env = simpy.Environment()
        self.clock = SimClock(self.env)
        self.rng = np.random.default_rng(config.seed)
        self.registry = registry or ValidatorRegistry()
        self.nodes: dict[Identity, ConsortiumNode] = {}
        self.message_counts: Counter = Counter()
        self.processed = 0

        self._pending = 0
        self._delivered: Optional[Event] = None
        self._decoded: dict[bytes, Envelope] = {}
        self._sequence = itertools.count()
        self._busy_until: dict[Identity, float] = {}
        self._link_last: dict[tuple[Identity, Identity], float] = {}
        self._channel_free_at = 0.0
        self._channel_frames: deque[tuple[float, Identity]] = deque()
        self._channel_senders: Counter = Counter()
        self._trace_counts: Optional[Counter] = None
        self._adoptions: dict[int, dict[Identity, float]] = defaultdict(dict)

    @property
    def now(self) -> float:
        return self.clock.now

    def __len__(self) -> int:
        return self._pending

    def add_node(self, node: ConsortiumNode) -> None:
        self.nodes[node.identity] = node

    def _require(self, node_id: Identity) -> None:
        if node_id not in self.nodes:
            raise UnknownNodeError(f"unknown node {node_id}")

    def find_document(self, doc_hash: bytes) -> Optional[bytes]:
        """A verified copy of ``doc_hash`` from the first peer store holding one."""
        for node_id in sorted(self.nodes, key=lambda identity: identity.digest):
            store = self.nodes[node_id].store
            if store is None or store.status(doc_hash) != DocumentStatus.STORED:
                continue
            try:
                return store.get(doc_hash)
            except DocumentCorruptedError:
                logger.warning("Peer %s holds a corrupted copy of %s", node_id, doc_hash.hex())
        return None

    # -------------------------------------------------------
    # Scheduling
    # -------------------------------------------------------
    def _push(self, deliver_at: float, target: Identity, kind: EventKind, payload: bytes, sender=None) -> Event:
        event = Event(deliver_at, next(self._sequence), target, kind, payload, sender)
        timeout = self.env.timeout(deliver_at - self.env.now, value=event)
        timeout.callbacks.append(self._deliver)
        self._pending += 1
        return event

    def _latency(self) -> float:
        jitter = float(self.rng.exponential(self.config.jitter_ms)) if self.config.jitter_ms > 0 else 0.0
        return self.config.base_latency_ms + jitter

    def _occupy_channel(self, sender: Identity, departure: float) -> float:
        """Queue one frame on the shared channel; returns when it has been transmitted."""
        while self._channel_frames and self._channel_frames[0][0] <= self.now:
            _, done = self._channel_frames.popleft()
            self._channel_senders[done] -= 1
            if not self._channel_senders[done]:
                del self._channel_senders[done]
        others = len(self._channel_senders) - (1 if sender in self._channel_senders else 0)
        occupancy = self.config.medium_slot_ms + self.config.contention_ms * others
        end = max(departure, self._channel_free_at) + occupancy
        self._channel_free_at = end
        self._channel_frames.append((end, sender))
        self._channel_senders[sender] += 1
        return end

    def _count(self, tag: MessageTag) -> None:
        self.message_counts[tag] += 1
        if self._trace_counts is not None and tag in CONSENSUS_TAGS:
            self._trace_counts[tag] += 1

    def _transmit(self, sender: Identity, target: Identity, tag: MessageTag, payload: bytes, departure: float) -> Event:
        self._require(target)
        self._count(tag)
        if sender == target:
            return self._push(departure, target, EventKind.MESSAGE, payload, sender)
        deliver_at = self._occupy_channel(sender, departure) + self._latency()
        link = (sender, target)
        deliver_at = max(deliver_at, self._link_last.get(link, deliver_at))
        self._link_last[link] = deliver_at
        logger.debug("%s -> %s %s at %.3f", sender, target, tag.name, deliver_at)
        return self._push(deliver_at, target, EventKind.MESSAGE, payload, sender)

    def send(self, sender: Identity, target: Identity, body, at: Optional[float] = None) -> Event:
        self._require(sender)
        envelope = wire.make_envelope(sender, body)
        departure = self.now if at is None else max(at, self.now)
        return self._transmit(sender, target, envelope.tag, wire.encode_envelope(envelope), departure)

    def broadcast(self, sender: Identity, targets: Sequence[Identity], body, at: Optional[float] = None) -> list[Event]:
        """One independent send per target; the envelope is encoded once."""
        if not targets:
            return []
        self._require(sender)
        envelope = wire.make_envelope(sender, body)
        payload = wire.encode_envelope(envelope)
        departure = self.now if at is None else max(at, self.now)
        return [self._transmit(sender, t, envelope.tag, payload, departure) for t in targets]

    def inject(self, target: Identity, body, at: Optional[float] = None) -> Event:
        """A user request arriving at ``target`` from outside the consortium network."""
        self._require(target)
        envelope = wire.make_envelope(target, body)
        start = self.now if at is None else max(at, self.now)
        return self._push(start + self.config.base_latency_ms, target, EventKind.CLIENT, wire.encode_envelope(envelope))

    def schedule_timer(self, target: Identity, at: float, timer: NodeTimer) -> Event:
        self._require(target)
        return self._push(max(at, self.now), target, EventKind.TIMER, timer.value.encode())

    # -------------------------------------------------------
    # Event loop
    # -------------------------------------------------------
    def _dispatch(self, node_id: Identity, reaction: Reaction) -> None:
        cost = (
            reaction.signature_checks * self.config.per_signature_verify_ms
            + reaction.tx_checks * self.config.per_tx_validate_ms
        )
        ready = max(self.now, self._busy_until.get(node_id, 0.0)) + cost
        self._busy_until[node_id] = ready
        encoded: dict[int, tuple[MessageTag, bytes]] = {}
        for out in reaction.outbound:
            if id(out.body) not in encoded:
                envelope = wire.make_envelope(node_id, out.body)
                encoded[id(out.body)] = (envelope.tag, wire.encode_envelope(envelope))
            tag, payload = encoded[id(out.body)]
            self._transmit(node_id, out.target, tag, payload, ready)
        if reaction.adopted_height is not None:
            self._adoptions[reaction.adopted_height][node_id] = ready

    def _decode(self, payload: bytes) -> Envelope:
        """Decode once per distinct payload; a broadcast shares one encoding."""
        envelope = self._decoded.get(payload)
        if envelope is None:
            envelope = self._decoded[payload] = wire.decode_envelope(payload)
        return envelope

    def _deliver(self, timeout: simpy.Timeout) -> None:
        event: Event = timeout.value
        self._pending -= 1
        node = self.nodes[event.target]
        if event.kind == EventKind.TIMER:
            reaction = node.handle_timer(NodeTimer(event.payload.decode()), self.now)
        else:
            reaction = node.handle(self._decode(event.payload), self.now)
        self._dispatch(event.target, reaction)
        self.processed += 1
        self._delivered = event

    def begin_round(self, node_id: Identity, round_number: int) -> None:
        self._require(node_id)
        self._dispatch(node_id, self.nodes[node_id].begin_round(round_number, self.now))

    def step(self) -> Event:
        if not self._pending:
            raise SimulationError("no events queued")
        self.env.step()
        return self._delivered

    def run_to_completion(
        self,
        stop_when: Optional[Callable[["Simulator"], bool]] = None,
        until: Optional[float] = None,
    ) -> Completion:
        while True:
            if stop_when is not None and stop_when(self):
                return Completion.STOPPED
            if not self._pending:
                return Completion.DRAINED
            if until is not None and self.env.peek() > until:
                return Completion.DEADLINE
            self.step()

    def run_until(self, until: float) -> Completion:
        """Process every event due at or before ``until``, then move the clock there."""
        completion = self.run_to_completion(until=until)
        self.clock.advance(max(self.now, until))
        return completion

    def adoption_times(self, height: int) -> dict[Identity, float]:
        return dict(self._adoptions.get(height, {}))

    # -------------------------------------------------------
    # Round accounting
    # -------------------------------------------------------
    def open_trace(self) -> None:
        self._trace_counts = Counter()

    def close_trace(self) -> dict[str, int]:
        counts = self._trace_counts or Counter()
        self._trace_counts = None
        return {tag.name: counts[tag] for tag in CONSENSUS_TAGS}


class Gateway:
    """User-facing submission point: hands transactions to one ingress peer."""

    def __init__(self, simulator: Simulator, ingress: Identity):
        self.simulator = simulator
        self.ingress = ingress

    def submit(self, tx: Transaction, at: Optional[float] = None) -> Event:
        return self.simulator.inject(self.ingress, SubmitTx(tx=tx), at)


# -------------------------------------------------------
# Building a consortium
# -------------------------------------------------------
def derive_seed(seed: int, branch: str) -> bytes:
    """32 bytes of key material that depend only on (seed, branch)."""
    return hashlib.sha256(f"{seed}:{branch}".encode()).digest()


def seeded_wallet(seed: int, branch: str, now: int = 0) -> Wallet:
    return identity_service.create_wallet(identity_service.generate_keypair(derive_seed(seed, branch)), now)


def enroll_peer(simulator: Simulator, node: ConsortiumNode) -> ValidatorRegistry:
    """Add ``node`` to the network and register it with every existing peer."""
    simulator.add_node(node)
    registry = protocol_service.register_peer(node.peer, simulator.registry, simulator)
    simulator.registry = registry
    node.registry = registry
    return registry


def build_consortium(
    config: SimConfig,
    peers: int,
    policy: QuorumPolicy,
    round_config: RoundConfig,
    users: UserDirectory,
    genesis: Block,
    refusing: Iterable[int] = (),
    labels: Optional[Sequence[str]] = None,
    on_enroll: Optional[Callable[[ConsortiumNode, int], None]] = None,
    store_root: Optional[str | Path] = None,
) -> Simulator:
    """
    A simulator holding ``peers`` seeded departments; indices in ``refusing``
    refuse to sign. With ``store_root`` every department keeps its own document
    store under ``<store_root>/<label>``, filled as anchors reach its chain.
    """
    simulator = Simulator(config)
    refusing = set(refusing)
    for index in range(peers):
        wallet = seeded_wallet(config.seed, f"peer-{index}")
        label = labels[index] if labels else f"department-{index}"
        peer = protocol_service.make_peer(wallet, label, now=0)
        node = ConsortiumNode(
            wallet=wallet,
            peer=peer,
            registry=simulator.registry,
            users=users,
            policy=policy,
            round_config=round_config,
            genesis=genesis,
            refuse_signing=index in refusing,
            store=DocumentStore(Path(store_root) / label) if store_root is not None else None,
            document_source=simulator.find_document,
        )
        announced = simulator.message_counts[MessageTag.REGISTER_PEER]
        enroll_peer(simulator, node)
        if on_enroll is not None:
            on_enroll(node, simulator.message_counts[MessageTag.REGISTER_PEER] - announced)
    return simulator


# -------------------------------------------------------
# Rounds
# -------------------------------------------------------
def trace_from_outcome(outcome: RoundOutcome, messages: dict[str, int], peers: int, run: int = 0) -> RoundTrace:
    return RoundTrace(
        round_number=outcome.round_number,
        validators_count=len(outcome.committee),
        peers_count=peers,
        txs_count=outcome.txs_count if outcome.status == RoundStatus.FINALIZED else 0,
        status=outcome.status,
        started_at=outcome.started_at,
        finalized_at=outcome.finalized_at,
        messages_sent=messages,
        reason=outcome.reason,
        run=run,
    )


def run_consensus_round(
    simulator: Simulator,
    policy: QuorumPolicy,
    round_config: RoundConfig,
    round_number: int,
    run: int = 0,
) -> tuple[RoundOutcome, RoundTrace]:
    simulator.open_trace()
    try:
        outcome = protocol_service.run_round(simulator, round_config, policy, round_number)
    finally:
        messages = simulator.close_trace()
    trace = trace_from_outcome(outcome, messages, len(simulator.registry), run)
    logger.debug("Round %d trace: %s", round_number, trace.model_dump())
    return outcome, trace


def run_rounds(
    simulator: Simulator,
    policy: QuorumPolicy,
    round_config: RoundConfig,
    target_txs: int,
    max_rounds: int = 1000,
    first_round: int = 0,
    run: int = 0,
) -> tuple[list[RoundOutcome], list[RoundTrace]]:
    """Back-to-back rounds until ``target_txs`` user transactions are finalized."""
    outcomes: list[RoundOutcome] = []
    traces: list[RoundTrace] = []
    finalized = 0
    for round_number in range(first_round, first_round + max_rounds):
        if finalized >= target_txs:
            break
        outcome, trace = run_consensus_round(simulator, policy, round_config, round_number, run)
        outcomes.append(outcome)
        traces.append(trace)
        finalized += trace.txs_count
        if outcome.status == RoundStatus.SKIPPED and not len(simulator) and not _pending(simulator):
            break
    if finalized < target_txs:
        raise SimulationError(f"only {finalized} of {target_txs} transactions finalized")
    return outcomes, traces


def _pending(simulator: Simulator) -> int:
    return sum(len(node.pool) for node in simulator.nodes.values())


# -------------------------------------------------------
# Trace export / import
# -------------------------------------------------------
def export_traces(traces: Iterable[RoundTrace], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(t.model_dump(mode="json"), separators=(",", ":")) for t in traces]
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def import_traces(path: str | Path) -> list[RoundTrace]:
    traces = []
    with Path(path).open(encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                traces.append(RoundTrace.model_validate_json(line))
            except ValidationError as e:
                raise ChainFormatError(f"{path}:{line_number}: {e}") from e
    return traces
