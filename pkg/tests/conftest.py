import pytest

from app.consortium.models.protocol import QuorumPolicy, RoundConfig, ValidatorRegistry
from app.consortium.models.schemas import Blockchain
from app.consortium.models.simulation import SimConfig
from app.consortium.services import identity_service, ledger_service, protocol_service
from app.consortium.services.protocol_service import UserDirectory
from app.consortium.services.simulation_service import seeded_wallet

TEST_SEED = 7


@pytest.fixture(scope="session")
def genesis():
    return ledger_service.make_genesis(b"test-genesis")


@pytest.fixture
def citizen():
    return seeded_wallet(TEST_SEED, "citizen")


@pytest.fixture
def users(citizen):
    directory = UserDirectory()
    protocol_service.register_user(
        protocol_service.registration_request(citizen, label="citizen"), now=0, users=directory
    )
    return directory


@pytest.fixture
def department_wallets():
    return [seeded_wallet(TEST_SEED, f"department-{i}") for i in range(4)]


@pytest.fixture
def registry(department_wallets):
    registry = ValidatorRegistry()
    for i, wallet in enumerate(department_wallets):
        registry = protocol_service.register_peer(
            protocol_service.make_peer(wallet, f"department-{i}", now=0), registry
        )
    return registry


@pytest.fixture
def policy():
    return QuorumPolicy(committee_size=4, threshold=3)


@pytest.fixture
def round_config():
    return RoundConfig(collection_window_ms=500, version=2)


@pytest.fixture
def quiet_sim():
    """Fixed 10 ms links, free processing, no shared-channel cost."""
    return SimConfig(
        seed=0,
        base_latency_ms=10.0,
        jitter_ms=0.0,
        per_signature_verify_ms=0.0,
        per_tx_validate_ms=0.0,
        medium_slot_ms=0.0,
        contention_ms=0.0,
    )


@pytest.fixture
def seal(department_wallets):
    """Attach header signatures from ``signers`` (every department by default)."""

    def _seal(block, signers=None):
        signers = department_wallets if signers is None else signers
        message = ledger_service.header_hash(block.header)
        signatures = tuple(identity_service.sign(w.keypair.private_key, message) for w in signers)
        return block.model_copy(update={"validator_signatures": signatures})

    return _seal


@pytest.fixture
def grow_chain(genesis, citizen, seal, registry, policy):
    """Genesis plus ``blocks`` sealed blocks of ``per_block`` citizen transactions."""

    def _grow(blocks=3, per_block=2):
        chain = Blockchain(blocks=(genesis,))
        nonce = 0
        for height in range(1, blocks + 1):
            txs = []
            for _ in range(per_block):
                nonce += 1
                txs.append(
                    ledger_service.make_transaction(
                        citizen, f"record-{nonce}".encode(), nonce, timestamp=height * 1000
                    )
                )
            block = ledger_service.create_block(chain.tip.header, txs, timestamp=height * 1000, version=2)
            chain = ledger_service.append_block(chain, seal(block), policy, registry)
        return chain

    return _grow
