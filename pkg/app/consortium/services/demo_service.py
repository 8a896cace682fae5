"""
End-to-end scenario: enroll departments, register a citizen, submit
transactions, anchor an off-chain document, finalize blocks and verify.

The transcript holds no wall-clock values or absolute paths, so the same
config and seed always print the same lines.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path

from app.consortium.errors import SimulationError
from app.consortium.models.offchain import DocumentStatus
from app.consortium.models.protocol import RoundStatus
from app.consortium.models.schemas import Blockchain
from app.consortium.services import ledger_service, offchain_service, protocol_service
from app.consortium.services.merkle import verify_proof
from app.consortium.services.protocol_service import UserDirectory
from app.consortium.services.simulation_service import (
    Gateway,
    build_consortium,
    export_traces,
    run_rounds,
    seeded_wallet,
)
from app.schemas import RunConfig

logger = logging.getLogger(__name__)


@dataclass
class DemoResult:
    exit_code: int
    transcript: list[str] = field(default_factory=list)
    chain: Blockchain = field(default_factory=Blockchain)


def _short(identity) -> str:
    return identity.hex[:16]


def run_demo(config: RunConfig, out_dir: str | Path) -> DemoResult:
    out_dir = Path(out_dir)
    result = DemoResult(exit_code=0)
    say = result.transcript.append
    workload = config.demo
    sim_config = config.sim_config()
    policy = config.policy

    genesis = ledger_service.make_genesis(workload.genesis_seed.encode())
    say(f"genesis: {ledger_service.header_hash(genesis.header).hex()}")

    users = UserDirectory()

    def enrolled(node, announcements: int) -> None:
        say(f"peer enrolled: {node.peer.department_label} {_short(node.identity)} ({announcements} announcements)")

    simulator = build_consortium(
        sim_config,
        len(workload.departments),
        policy,
        config.round_config,
        users,
        genesis,
        labels=workload.departments,
        on_enroll=enrolled,
        store_root=out_dir / "stores",
    )

    citizen = seeded_wallet(sim_config.seed, "citizen-0")
    account = protocol_service.register_user(
        protocol_service.registration_request(citizen, label=workload.user_label), now=0, users=users
    )
    say(f"user registered: {workload.user_label} {_short(account.identity)} address {account.address.hex}")

    # the last department is the citizen's entry point and forwards to the proposer
    ingress = simulator.registry.sorted_identities()[-1]
    gateway = Gateway(simulator, ingress)
    nonce = 0
    for text in workload.transactions:
        nonce += 1
        tx = ledger_service.make_transaction(citizen, text.encode(), nonce, timestamp=int(simulator.now))
        gateway.submit(tx)
        say(f"transaction submitted: {text!r} nonce {nonce} id {ledger_service.hash_transaction(tx).hex()[:16]}")

    # the citizen uploads to the same department that takes their transactions
    store = simulator.nodes[ingress].store
    content = workload.document.content.encode()
    doc_hash = store.put(content, workload.document.media_hint, now=int(simulator.now))
    say(f"document stored: {doc_hash.hex()} ({workload.document.media_hint}, {len(content)} bytes)")
    nonce += 1
    offchain_service.anchor_document(
        store, doc_hash, citizen, gateway, tx_nonce=nonce, now=int(simulator.now), users=users
    )
    say(f"document anchor submitted: nonce {nonce}")

    try:
        outcomes, traces = run_rounds(simulator, policy, config.round_config, target_txs=nonce)
    except SimulationError as e:
        say(f"rounds failed: {e}")
        result.exit_code = 1
        return result
    for outcome, trace in zip(outcomes, traces):
        height = outcome.block.header.nonce if outcome.status == RoundStatus.FINALIZED else "-"
        say(
            f"round {outcome.round_number}: {outcome.status.value} height {height} "
            f"txs {trace.txs_count} duration {trace.duration_ms:.3f} ms messages {trace.messages_total}"
        )

    tips = {ledger_service.header_hash(node.chain.tip.header) for node in simulator.nodes.values()}
    chain = simulator.nodes[ingress].chain
    result.chain = chain
    say(f"replicas agree: {str(len(tips) == 1).lower()} (height {chain.height})")
    replicated = sum(
        node.store.status(doc_hash) == DocumentStatus.STORED for node in simulator.nodes.values()
    )
    say(f"document replicated: {replicated}/{len(simulator.nodes)} peers")

    history = ledger_service.transaction_history(chain, citizen.identity)
    say(f"user history: {len(history)} transactions on chain")
    recovered = users.recover_wallet(citizen.identity)
    say(f"wallet recovery: {str(recovered.identity == citizen.identity).lower()}")

    verdict = offchain_service.verify_document(content, chain)
    proof_ok = verdict.anchored and verify_proof(
        verdict.tx_id, [(step.hash, step.side) for step in verdict.proof], verdict.merkle_root
    )
    say(f"document {verdict.status.value} at height {verdict.height} (proof valid: {str(proof_ok).lower()})")
    tampered = offchain_service.verify_document(content + b" ", chain)
    say(f"altered document: {tampered.status.value}")

    ledger_service.export_chain(chain, out_dir / "chain.jsonl")
    ledger_service.export_registry(simulator.registry, policy, out_dir / "registry.json")
    export_traces(traces, out_dir / "traces.jsonl")
    say("exported: chain.jsonl registry.json traces.jsonl")

    verified = ledger_service.verify_chain(chain, policy, simulator.registry)
    if not (verified and proof_ok and len(tips) == 1 and replicated == len(simulator.nodes)):
        result.exit_code = 1
    say(f"chain verified: {str(verified).lower()}")
    return result
