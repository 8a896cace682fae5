import pytest

from app.consortium.errors import SimulationError, UnknownNodeError
from app.consortium.models.messages import MessageTag, SubmitTx
from app.consortium.models.offchain import DocumentStatus
from app.consortium.models.protocol import QuorumPolicy, RoundStatus
from app.consortium.models.simulation import Completion, SimConfig
from app.consortium.services import ledger_service, offchain_service, protocol_service
from app.consortium.services.simulation_service import (
    Gateway,
    Simulator,
    build_consortium,
    export_traces,
    import_traces,
    run_consensus_round,
    run_rounds,
    seeded_wallet,
)

SHARED_CHANNEL = SimConfig(
    seed=0,
    base_latency_ms=5.0,
    jitter_ms=0.0,
    per_signature_verify_ms=0.0,
    per_tx_validate_ms=0.0,
    medium_slot_ms=20.0,
    contention_ms=25.0,
)


def consortium(config, peers, policy, round_config, users, genesis, **kwargs):
    return build_consortium(config, peers, policy, round_config, users, genesis, **kwargs)


def submit(simulator, policy, citizen, count, ingress=None):
    if ingress is None:
        ingress = protocol_service.elect_validators(simulator.registry, 0, policy)[0].identity
    gateway = Gateway(simulator, ingress)
    txs = [ledger_service.make_transaction(citizen, f"tx-{n}".encode(), n, 0) for n in range(1, count + 1)]
    for tx in txs:
        gateway.submit(tx)
    return txs


# -------------------------------------------------------
# Event loop
# -------------------------------------------------------
def test_empty_queue_drains_immediately(quiet_sim):
    simulator = Simulator(quiet_sim)
    assert simulator.run_to_completion() == Completion.DRAINED
    assert simulator.now == 0


def test_fixed_latency_and_sequence_tie_break(quiet_sim, users, genesis, round_config, citizen):
    policy = QuorumPolicy(committee_size=3, threshold=2)
    simulator = consortium(quiet_sim, 3, policy, round_config, users, genesis)
    a, b, c = simulator.registry.sorted_identities()
    tx = ledger_service.make_transaction(citizen, b"x", 1, 0)
    start = simulator.now

    first = simulator.send(a, c, SubmitTx(tx=tx))
    second = simulator.send(b, c, SubmitTx(tx=tx))
    assert first.deliver_at == second.deliver_at == start + 10.0
    assert simulator.step() is first
    assert simulator.step() is second


def test_deadline_leaves_later_events_queued(quiet_sim, users, genesis, round_config, citizen):
    policy = QuorumPolicy(committee_size=2, threshold=2)
    simulator = consortium(quiet_sim, 2, policy, round_config, users, genesis)
    a, b = simulator.registry.sorted_identities()
    tx = ledger_service.make_transaction(citizen, b"x", 1, 0)
    simulator.send(a, b, SubmitTx(tx=tx))
    assert simulator.run_to_completion(until=simulator.now + 5) == Completion.DEADLINE
    assert len(simulator) == 1
    assert simulator.run_to_completion(stop_when=lambda sim: True) == Completion.STOPPED


def test_sending_to_an_unknown_node(quiet_sim, users, genesis, round_config, citizen):
    simulator = consortium(quiet_sim, 1, QuorumPolicy(committee_size=1, threshold=1), round_config, users, genesis)
    (a,) = simulator.registry.sorted_identities()
    tx = ledger_service.make_transaction(citizen, b"x", 1, 0)
    with pytest.raises(UnknownNodeError):
        simulator.send(a, seeded_wallet(0, "ghost").identity, SubmitTx(tx=tx))


def test_shared_channel_serializes_frames(users, genesis, round_config, citizen):
    policy = QuorumPolicy(committee_size=3, threshold=2)
    simulator = consortium(SHARED_CHANNEL, 3, policy, round_config, users, genesis)
    a, b, c = simulator.registry.sorted_identities()
    body = SubmitTx(tx=ledger_service.make_transaction(citizen, b"x", 1, 0))
    start = simulator.now

    to_b, to_c = simulator.broadcast(a, [b, c], body)
    assert to_b.deliver_at == start + 20 + 5
    assert to_c.deliver_at == start + 40 + 5
    # a second sender contends with a's queued frames
    reply = simulator.send(b, a, body)
    assert reply.deliver_at == start + 40 + 45 + 5


def test_peer_enrollment_announces_to_existing_peers(quiet_sim, users, genesis, round_config):
    announcements = []
    simulator = consortium(
        quiet_sim,
        5,
        QuorumPolicy(committee_size=3, threshold=2),
        round_config,
        users,
        genesis,
        on_enroll=lambda node, count: announcements.append(count),
    )
    assert announcements == [0, 1, 2, 3, 4]
    assert simulator.message_counts[MessageTag.REGISTER_PEER] == 10
    assert all(node.registry.peers == simulator.registry.peers for node in simulator.nodes.values())


# -------------------------------------------------------
# Rounds
# -------------------------------------------------------
@pytest.mark.parametrize("committee,peers", [(1, 1), (1, 3), (2, 2), (3, 5), (4, 4), (7, 9), (20, 20)])
def test_message_count_law(quiet_sim, users, genesis, round_config, citizen, committee, peers):
    policy = QuorumPolicy.byzantine(committee)
    simulator = consortium(quiet_sim, peers, policy, round_config, users, genesis)
    submit(simulator, policy, citizen, 3)

    outcome, trace = run_consensus_round(simulator, policy, round_config, 0)

    assert outcome.status == RoundStatus.FINALIZED
    assert trace.txs_count == 3
    assert trace.messages_sent == {
        "PRE_VOTE": committee * (committee - 1),
        "PROPOSAL": committee - 1,
        "BLOCK_SIGNATURE": committee - 1,
        "CHAIN_BROADCAST": peers,
    }
    assert trace.messages_total == committee * (committee - 1) + 2 * (committee - 1) + peers
    assert len(simulator.adoption_times(1)) == peers
    tips = {ledger_service.header_hash(node.chain.tip.header) for node in simulator.nodes.values()}
    assert len(tips) == 1
    assert all(node.chain.height == 1 for node in simulator.nodes.values())


def test_single_validator_round_timing(quiet_sim, users, genesis, round_config, citizen):
    policy = QuorumPolicy(committee_size=1, threshold=1)
    simulator = consortium(quiet_sim, 1, policy, round_config, users, genesis)
    submit(simulator, policy, citizen, 2)
    outcome, trace = run_consensus_round(simulator, policy, round_config, 0)
    assert outcome.status == RoundStatus.FINALIZED
    # free processing and a self-delivered broadcast: done when the window closes
    assert trace.duration_ms == round_config.collection_window_ms
    assert len(outcome.block.validator_signatures) == 1


def test_forwarded_submission_is_finalized(quiet_sim, users, genesis, round_config, citizen):
    policy = QuorumPolicy(committee_size=3, threshold=3)
    simulator = consortium(quiet_sim, 3, policy, round_config, users, genesis)
    ingress = simulator.registry.sorted_identities()[-1]
    submit(simulator, policy, citizen, 1, ingress=ingress)
    outcome, _ = run_consensus_round(simulator, policy, round_config, 0)
    assert outcome.status == RoundStatus.FINALIZED
    assert outcome.txs_count == 1
    assert simulator.message_counts[MessageTag.SUBMIT_TX] == 1


def test_replayed_submission_is_rejected(quiet_sim, users, genesis, round_config, citizen):
    policy = QuorumPolicy(committee_size=2, threshold=2)
    simulator = consortium(quiet_sim, 2, policy, round_config, users, genesis)
    (tx,) = submit(simulator, policy, citizen, 1)
    proposer = protocol_service.elect_validators(simulator.registry, 0, policy)[0].identity
    Gateway(simulator, proposer).submit(tx)

    outcome, _ = run_consensus_round(simulator, policy, round_config, 0)
    assert outcome.txs_count == 1
    assert simulator.nodes[proposer].rejected == [(tx, ("NONCE_REPLAY",))]


def test_round_without_transactions_is_skipped(quiet_sim, users, genesis, round_config):
    policy = QuorumPolicy(committee_size=3, threshold=2)
    simulator = consortium(quiet_sim, 3, policy, round_config, users, genesis)
    outcome, trace = run_consensus_round(simulator, policy, round_config, 0)
    assert outcome.status == RoundStatus.SKIPPED
    assert outcome.reason == "EMPTY_BATCH"
    assert trace.duration_ms == round_config.collection_window_ms
    assert trace.messages_total == 0
    with pytest.raises(SimulationError):
        run_rounds(simulator, policy, round_config, target_txs=1, first_round=1)


def test_refusing_validator_blocks_a_unanimous_quorum(quiet_sim, users, genesis, round_config, citizen):
    policy = QuorumPolicy(committee_size=3, threshold=3)
    simulator = consortium(quiet_sim, 3, policy, round_config, users, genesis, refusing=(0,))
    submit(simulator, policy, citizen, 2)

    outcome, trace = run_consensus_round(simulator, policy, round_config, 0)
    assert outcome.status == RoundStatus.FAILED
    assert outcome.reason == "QUORUM_NOT_MET"
    assert outcome.block is None
    assert trace.messages_sent["CHAIN_BROADCAST"] == 0
    assert trace.messages_sent["BLOCK_SIGNATURE"] == 2
    assert all(node.chain.height == 0 for node in simulator.nodes.values())


def test_byzantine_quorum_tolerates_one_refusal(quiet_sim, users, genesis, round_config, citizen):
    policy = QuorumPolicy.byzantine(4)
    simulator = consortium(quiet_sim, 4, policy, round_config, users, genesis, refusing=(1,))
    submit(simulator, policy, citizen, 2)
    outcome, _ = run_consensus_round(simulator, policy, round_config, 0)
    assert outcome.status == RoundStatus.FINALIZED
    assert len(outcome.block.validator_signatures) >= policy.threshold


def test_rounds_rotate_proposers_and_extend_the_chain(quiet_sim, users, genesis, round_config, citizen):
    policy = QuorumPolicy(committee_size=3, threshold=2)
    simulator = consortium(quiet_sim, 3, policy, round_config, users, genesis)
    submit(simulator, policy, citizen, 4)
    outcomes, traces = run_rounds(simulator, policy, round_config, target_txs=4)
    assert sum(t.txs_count for t in traces) == 4
    assert outcomes[0].proposer == simulator.registry.sorted_identities()[0]
    node = next(iter(simulator.nodes.values()))
    assert ledger_service.verify_chain(node.chain, policy, simulator.registry)


def test_same_seed_replays_identically(users, genesis, round_config, citizen):
    config = SHARED_CHANNEL.model_copy(update={"seed": 3, "jitter_ms": 5.0, "per_tx_validate_ms": 1.0})
    policy = QuorumPolicy.byzantine(4)

    def run():
        simulator = consortium(config, 4, policy, round_config, users, genesis)
        submit(simulator, policy, citizen, 5)
        _, traces = run_rounds(simulator, policy, round_config, target_txs=5)
        return traces, next(iter(simulator.nodes.values())).chain

    assert run() == run()


def test_trace_export_round_trip(quiet_sim, users, genesis, round_config, citizen, tmp_path):
    policy = QuorumPolicy(committee_size=2, threshold=2)
    simulator = consortium(quiet_sim, 2, policy, round_config, users, genesis)
    submit(simulator, policy, citizen, 1)
    _, traces = run_rounds(simulator, policy, round_config, target_txs=1, run=4)
    path = export_traces(traces, tmp_path / "traces.jsonl")
    restored = import_traces(path)
    assert restored == traces
    assert restored[0].run == 4


def test_unregistered_sender_never_reaches_a_block(quiet_sim, users, genesis, round_config, citizen):
    policy = QuorumPolicy.byzantine(4)
    simulator = consortium(quiet_sim, 4, policy, round_config, users, genesis)
    proposer = protocol_service.elect_validators(simulator.registry, 0, policy)[0].identity
    stranger = seeded_wallet(0, "stranger")
    forged = ledger_service.make_transaction(stranger, b"tx-forged", 1, 0)

    valid = submit(simulator, policy, citizen, 2)
    Gateway(simulator, simulator.registry.sorted_identities()[-1]).submit(forged)
    outcome, _ = run_consensus_round(simulator, policy, round_config, 0)

    assert outcome.status == RoundStatus.FINALIZED
    assert outcome.txs_count == len(valid)
    assert simulator.nodes[proposer].rejected == [(forged, ("UNKNOWN_SENDER",))]
    for node in simulator.nodes.values():
        senders = {tx.sender for block in node.chain.blocks[1:] for tx in block.transactions}
        assert senders == {citizen.identity}


def test_anchored_document_is_replicated_to_every_peer(quiet_sim, users, genesis, round_config, citizen, tmp_path):
    policy = QuorumPolicy(committee_size=3, threshold=2)
    simulator = consortium(quiet_sim, 4, policy, round_config, users, genesis, store_root=tmp_path)
    ingress = simulator.registry.sorted_identities()[-1]
    upload = simulator.nodes[ingress].store
    doc_hash = upload.put(b"Birth certificate 2024/0815", "pdf", now=0)
    offchain_service.anchor_document(
        upload, doc_hash, citizen, Gateway(simulator, ingress), tx_nonce=1, now=0, users=users
    )
    assert [node.store.status(doc_hash) for node in simulator.nodes.values()].count(DocumentStatus.STORED) == 1

    outcome, _ = run_consensus_round(simulator, policy, round_config, 0)

    assert outcome.status == RoundStatus.FINALIZED
    for node in simulator.nodes.values():
        assert node.store.get(doc_hash) == b"Birth certificate 2024/0815"
        assert node.store.document(doc_hash).media_hint == "pdf"
    assert len({node.store.root for node in simulator.nodes.values()}) == 4


def test_replication_skips_documents_no_peer_holds(quiet_sim, users, genesis, round_config, citizen, tmp_path):
    policy = QuorumPolicy(committee_size=2, threshold=2)
    simulator = consortium(quiet_sim, 2, policy, round_config, users, genesis, store_root=tmp_path)
    ingress = simulator.registry.sorted_identities()[0]
    upload = simulator.nodes[ingress].store
    doc_hash = upload.put(b"withdrawn", "text", now=0)
    offchain_service.anchor_document(
        upload, doc_hash, citizen, Gateway(simulator, ingress), tx_nonce=1, now=0, users=users
    )
    upload.delete(doc_hash)

    outcome, _ = run_consensus_round(simulator, policy, round_config, 0)

    assert outcome.status == RoundStatus.FINALIZED
    statuses = {node.store.status(doc_hash) for node in simulator.nodes.values() if node.identity != ingress}
    assert statuses == {DocumentStatus.NOT_FOUND}
    assert upload.status(doc_hash) == DocumentStatus.DELETED
