"""
Pydantic models for identities, wallets, transactions and blocks.

All values are frozen after construction. Byte fields accept raw bytes in
Python and lowercase hex strings in JSON, and serialize back to hex.
"""
from enum import Enum
from typing import Annotated, Any

from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    PlainSerializer,
    model_serializer,
    model_validator,
)

UINT32_MAX = 2**32 - 1
UINT64_MAX = 2**64 - 1


def _coerce_hex(value: Any) -> Any:
    if isinstance(value, str):
        try:
            return bytes.fromhex(value)
        except ValueError as e:
            raise ValueError(f"invalid hex string: {e}") from e
    if isinstance(value, (bytearray, memoryview)):
        return bytes(value)
    return value


HexBytes = Annotated[
    bytes,
    BeforeValidator(_coerce_hex),
    PlainSerializer(lambda v: v.hex(), return_type=str, when_used="json"),
]
Digest32 = Annotated[HexBytes, Field(min_length=32, max_length=32)]
Address20 = Annotated[HexBytes, Field(min_length=20, max_length=20)]
Key32 = Annotated[HexBytes, Field(min_length=32, max_length=32)]
UInt32 = Annotated[int, Field(ge=0, le=UINT32_MAX)]
UInt64 = Annotated[int, Field(ge=0, le=UINT64_MAX)]

ZERO_HASH = bytes(32)


class _HexValue(BaseModel):
    """A model wrapping a single byte value; JSON form is the bare hex string."""

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="before")
    @classmethod
    def from_hex_input(cls, data: Any) -> Any:
        if isinstance(data, (str, bytes)):
            field = next(iter(cls.model_fields))
            return {field: data}
        return data

    @model_serializer(mode="wrap", when_used="json")
    def to_hex_output(self, handler):
        return getattr(self, next(iter(type(self).model_fields))).hex()

    @property
    def hex(self) -> str:
        return getattr(self, next(iter(type(self).model_fields))).hex()

    def __str__(self) -> str:
        return self.hex

    def __lt__(self, other: "_HexValue") -> bool:
        return self.hex < other.hex


class Identity(_HexValue):
    """SHA-256 of a participant's public key."""

    digest: Digest32


class BlockchainAddress(_HexValue):
    """Last 20 bytes of SHA-256(public key)."""

    address: Address20


class KeyPair(BaseModel):
    """Ed25519 key pair; ``private_key`` is the 32-byte seed."""

    model_config = ConfigDict(frozen=True)

    public_key: Key32
    private_key: Key32 = Field(repr=False)


class Signature(BaseModel):
    model_config = ConfigDict(frozen=True)

    data: HexBytes
    signer: Identity


class Wallet(BaseModel):
    model_config = ConfigDict(frozen=True)

    identity: Identity
    address: BlockchainAddress
    keypair: KeyPair
    created_at: UInt64


class WalletFile(BaseModel):
    """On-disk wallet layout: one flat JSON object, hex fields."""

    scheme: str
    public_key: str
    private_key: str
    identity: str
    address: str
    created_at: UInt64


class Transaction(BaseModel):
    """
    A signed user record. ``sender_key`` travels with the transaction so blocks
    can be verified without the user directory.
    """

    model_config = ConfigDict(frozen=True)

    sender: Identity
    sender_key: Key32
    payload: HexBytes
    tx_nonce: UInt64
    timestamp: UInt64
    signature: Signature


class BlockHeader(BaseModel):
    model_config = ConfigDict(frozen=True)

    version: UInt32
    prev_header_hash: Digest32
    merkle_root: Digest32
    timestamp: UInt64
    nonce: UInt32


class Block(BaseModel):
    model_config = ConfigDict(frozen=True)

    header: BlockHeader
    transactions: tuple[Transaction, ...]
    validator_signatures: tuple[Signature, ...] = ()


class Blockchain(BaseModel):
    """Ordered blocks starting at genesis. Extending it yields a new value."""

    model_config = ConfigDict(frozen=True)

    blocks: tuple[Block, ...] = ()

    @property
    def height(self) -> int:
        """Height of the tip (genesis is 0); -1 for an empty chain."""
        return len(self.blocks) - 1

    @property
    def tip(self) -> Block:
        if not self.blocks:
            raise IndexError("empty chain has no tip")
        return self.blocks[-1]


class ProofSide(str, Enum):
    """Which side the sibling hash sits on when folding a Merkle proof."""

    LEFT = "left"
    RIGHT = "right"


class RejectReason(str, Enum):
    """Reason codes reported by block and transaction validation."""

    LINK = "LINK"
    MERKLE = "MERKLE"
    TX_SIG = "TX_SIG"
    QUORUM = "QUORUM"
    GENESIS = "GENESIS"
    UNKNOWN_SENDER = "UNKNOWN_SENDER"
    BAD_SIGNATURE = "BAD_SIGNATURE"
    NONCE_REPLAY = "NONCE_REPLAY"


class ValidationResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    reasons: tuple[RejectReason, ...] = ()

    @property
    def accepted(self) -> bool:
        return not self.reasons

    def __bool__(self) -> bool:
        return self.accepted
