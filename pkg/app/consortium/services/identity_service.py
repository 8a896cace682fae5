"""
Key generation, identity/address derivation, wallets and signatures.

Ed25519 via PyNaCl: deterministic signatures, 32-byte seeds, 64-byte
signatures. The scheme name is written into every wallet file.
"""
import hashlib
import logging
from functools import lru_cache
from pathlib import Path

import nacl.exceptions
import nacl.signing
import nacl.utils
from pydantic import ValidationError

from app.consortium.errors import (
    EmptyKeyError,
    EntropyUnavailableError,
    InvalidKeyError,
    WalletFormatError,
)
from app.consortium.models.schemas import (
    BlockchainAddress,
    Identity,
    KeyPair,
    Signature,
    Wallet,
    WalletFile,
)

logger = logging.getLogger(__name__)

SCHEME = "ed25519"
SEED_SIZE = 32
ADDRESS_SIZE = 20


def generate_keypair(seed: bytes | None = None) -> KeyPair:
    """Seeded generation is deterministic; without a seed system entropy is used."""
    if seed is None:
        try:
            seed = nacl.utils.random(SEED_SIZE)
        except Exception as e:
            raise EntropyUnavailableError(f"system entropy unavailable: {e}") from e
    if len(seed) != SEED_SIZE:
        raise InvalidKeyError(f"seed must be {SEED_SIZE} bytes, got {len(seed)}")
    signing_key = nacl.signing.SigningKey(bytes(seed))
    return KeyPair(public_key=bytes(signing_key.verify_key), private_key=bytes(signing_key))


def keypair_from_private_key(private_key: bytes) -> KeyPair:
    return generate_keypair(private_key)


def derive_identity(public_key: bytes) -> Identity:
    if not public_key:
        raise EmptyKeyError("public key must not be empty")
    return Identity(digest=hashlib.sha256(public_key).digest())


def derive_address(public_key: bytes) -> BlockchainAddress:
    if not public_key:
        raise EmptyKeyError("public key must not be empty")
    return BlockchainAddress(address=hashlib.sha256(public_key).digest()[-ADDRESS_SIZE:])


def create_wallet(keypair: KeyPair, now: int) -> Wallet:
    return Wallet(
        identity=derive_identity(keypair.public_key),
        address=derive_address(keypair.public_key),
        keypair=keypair,
        created_at=now,
    )


def sign(private_key: bytes, message: bytes) -> Signature:
    try:
        signing_key = nacl.signing.SigningKey(bytes(private_key))
    except (TypeError, ValueError, nacl.exceptions.CryptoError) as e:
        raise InvalidKeyError(f"malformed private key: {e}") from e
    signed = signing_key.sign(bytes(message))
    return Signature(
        data=signed.signature,
        signer=derive_identity(bytes(signing_key.verify_key)),
    )


def verify(public_key: bytes, message: bytes, sig: Signature) -> bool:
    """True iff ``sig`` was made by the key matching ``public_key`` over exactly ``message``."""
    try:
        if sig.signer != derive_identity(public_key):
            return False
        return _verify_ed25519(bytes(public_key), bytes(message), bytes(sig.data))
    except (TypeError, ValueError):
        return False


@lru_cache(maxsize=1 << 16)
def _verify_ed25519(public_key: bytes, message: bytes, signature: bytes) -> bool:
    """Memoized; the result depends only on the three byte strings."""
    try:
        nacl.signing.VerifyKey(public_key).verify(message, signature)
    except (TypeError, ValueError, nacl.exceptions.CryptoError):
        return False
    return True


# -------------------------------------------------------
# Wallet files
# -------------------------------------------------------
def wallet_to_json(wallet: Wallet) -> str:
    record = WalletFile(
        scheme=SCHEME,
        public_key=wallet.keypair.public_key.hex(),
        private_key=wallet.keypair.private_key.hex(),
        identity=wallet.identity.hex,
        address=wallet.address.hex,
        created_at=wallet.created_at,
    )
    return record.model_dump_json()


def wallet_from_json(text: str) -> Wallet:
    try:
        record = WalletFile.model_validate_json(text)
        public_key = bytes.fromhex(record.public_key)
        private_key = bytes.fromhex(record.private_key)
    except (ValidationError, ValueError) as e:
        raise WalletFormatError(f"unreadable wallet: {e}") from e
    if record.scheme != SCHEME:
        raise WalletFormatError(f"unsupported signature scheme {record.scheme!r}")

    try:
        keypair = keypair_from_private_key(private_key)
    except InvalidKeyError as e:
        raise WalletFormatError(str(e)) from e
    if keypair.public_key != public_key:
        raise WalletFormatError("public key does not match private key")
    wallet = create_wallet(keypair, record.created_at)
    if wallet.identity.hex != record.identity or wallet.address.hex != record.address:
        raise WalletFormatError("identity/address do not derive from the public key")
    return wallet


def save_wallet(wallet: Wallet, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(wallet_to_json(wallet), encoding="utf-8")
    logger.info("Stored wallet %s at %s", wallet.address, path)
    return path


def load_wallet(path: str | Path) -> Wallet:
    return wallet_from_json(Path(path).read_text(encoding="utf-8"))
