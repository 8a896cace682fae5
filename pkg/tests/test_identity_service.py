import hashlib
import json

import pytest

from app.consortium.errors import EmptyKeyError, InvalidKeyError, WalletFormatError
from app.consortium.services import identity_service

ABC_DIGEST = "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"

# RFC 8032, section 7.1, test 1 (empty message)
RFC_SECRET = "9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60"
RFC_PUBLIC = "d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a"
RFC_SIGNATURE = (
    "e5564300c360ac729086e2cc806e828a84877f1eb8e5d974d873e065224901555"
    "fb8821590a33bacc61e39701cf9b46bd25bf5f0595bbe24655141438e7a100b"
)


def test_seeded_keypair_is_deterministic():
    first = identity_service.generate_keypair(bytes(32))
    second = identity_service.generate_keypair(bytes(32))
    assert first == second
    assert identity_service.generate_keypair(b"\x01" * 32).public_key != first.public_key


def test_unseeded_keypairs_differ():
    assert identity_service.generate_keypair().public_key != identity_service.generate_keypair().public_key


def test_seed_must_be_32_bytes():
    with pytest.raises(InvalidKeyError):
        identity_service.generate_keypair(b"short")


def test_matches_rfc8032_vector():
    keypair = identity_service.generate_keypair(bytes.fromhex(RFC_SECRET))
    assert keypair.public_key.hex() == RFC_PUBLIC
    sig = identity_service.sign(keypair.private_key, b"")
    assert sig.data.hex() == RFC_SIGNATURE
    assert identity_service.verify(keypair.public_key, b"", sig)


def test_identity_and_address_match_sha256_vector():
    assert identity_service.derive_identity(b"abc").hex == ABC_DIGEST
    assert identity_service.derive_address(b"abc").hex == ABC_DIGEST[-40:]
    assert identity_service.derive_address(b"abc").address == hashlib.sha256(b"abc").digest()[-20:]


@pytest.mark.parametrize("derive", [identity_service.derive_identity, identity_service.derive_address])
def test_empty_key_is_rejected(derive):
    with pytest.raises(EmptyKeyError):
        derive(b"")


def test_verify_rejects_other_message_and_other_key():
    alice = identity_service.generate_keypair(bytes(32))
    bob = identity_service.generate_keypair(b"\x02" * 32)
    sig = identity_service.sign(alice.private_key, b"abc")
    assert identity_service.verify(alice.public_key, b"abc", sig)
    assert not identity_service.verify(alice.public_key, b"abd", sig)
    assert not identity_service.verify(bob.public_key, b"abc", sig)
    forged = sig.model_copy(update={"data": bytes(64)})
    assert not identity_service.verify(alice.public_key, b"abc", forged)


def test_wallet_file_round_trip(tmp_path):
    wallet = identity_service.create_wallet(identity_service.generate_keypair(bytes(32)), now=1234)
    assert wallet.identity == identity_service.derive_identity(wallet.keypair.public_key)
    assert wallet.created_at == 1234

    path = identity_service.save_wallet(wallet, tmp_path / "wallets" / "w.json")
    record = json.loads(path.read_text())
    assert record["scheme"] == "ed25519"
    assert identity_service.load_wallet(path) == wallet


def test_wallet_with_mismatched_public_key_is_rejected():
    wallet = identity_service.create_wallet(identity_service.generate_keypair(bytes(32)), now=0)
    other = identity_service.generate_keypair(b"\x03" * 32)
    record = json.loads(identity_service.wallet_to_json(wallet))
    record["public_key"] = other.public_key.hex()
    with pytest.raises(WalletFormatError):
        identity_service.wallet_from_json(json.dumps(record))


@pytest.mark.parametrize("text", ["not json", "{}", '{"scheme": "rsa"}'])
def test_unreadable_wallet_files(text):
    with pytest.raises(WalletFormatError):
        identity_service.wallet_from_json(text)
