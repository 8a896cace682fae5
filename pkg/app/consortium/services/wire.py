"""
Binary codec for consortium wire messages.

Layout: tag(1) || version(1) || sender(32) || body. Bodies use the same
canonical rules as the ledger: big-endian integers, 4-byte length prefixes.
"""
from app.consortium.errors import WireFormatError
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
from app.consortium.models.protocol import PeerRecord
from app.consortium.models.schemas import BlockchainAddress, Identity
from app.consortium.services import ledger_service
from app.consortium.services.encoding import Reader, u8, u32, u64, var_bytes, var_text

WIRE_VERSION = 1

_BODY_TYPES = {
    MessageTag.REGISTER_PEER: PeerAnnouncement,
    MessageTag.SUBMIT_TX: SubmitTx,
    MessageTag.PRE_VOTE: PreVote,
    MessageTag.PROPOSAL: Proposal,
    MessageTag.BLOCK_SIGNATURE: SignatureReply,
    MessageTag.CHAIN_BROADCAST: ChainBroadcast,
}


def make_envelope(sender: Identity, body) -> Envelope:
    for tag, body_type in _BODY_TYPES.items():
        if isinstance(body, body_type):
            return Envelope(tag=tag, sender=sender, body=body)
    raise WireFormatError(f"no wire tag for {type(body).__name__}")


def prevote_message(round_number: int, proposer: Identity) -> bytes:
    """Bytes a committee member signs when pre-voting."""
    return b"PRE_VOTE" + u64(round_number) + proposer.digest


# -------------------------------------------------------
# Encoding
# -------------------------------------------------------
def _encode_peer(peer: PeerRecord) -> bytes:
    return (
        peer.identity.digest
        + peer.address.address
        + peer.public_key
        + var_text(peer.department_label)
        + u64(peer.enrolled_at)
    )


def _encode_body(envelope: Envelope) -> bytes:
    body = envelope.body
    tag = envelope.tag
    if tag == MessageTag.REGISTER_PEER:
        return _encode_peer(body.peer)
    if tag == MessageTag.SUBMIT_TX:
        return var_bytes(ledger_service.encode_transaction(body.tx))
    if tag == MessageTag.PRE_VOTE:
        return (
            u64(body.round_number)
            + body.proposer.digest
            + ledger_service.encode_signature(body.signature)
        )
    if tag == MessageTag.PROPOSAL:
        return u64(body.round_number) + var_bytes(ledger_service.encode_block(body.candidate))
    if tag == MessageTag.BLOCK_SIGNATURE:
        signature = b""
        if body.signature is not None:
            signature = ledger_service.encode_signature(body.signature)
        return (
            u64(body.round_number)
            + body.block_hash
            + u8(1 if body.signature is not None else 0)
            + signature
            + u32(len(body.refusal))
            + b"".join(var_text(reason) for reason in body.refusal)
        )
    if tag == MessageTag.CHAIN_BROADCAST:
        return u64(body.round_number) + var_bytes(ledger_service.encode_chain(body.chain))
    raise WireFormatError(f"unknown tag {tag}")


def encode_envelope(envelope: Envelope) -> bytes:
    return u8(envelope.tag) + u8(WIRE_VERSION) + envelope.sender.digest + _encode_body(envelope)


# -------------------------------------------------------
# Decoding
# -------------------------------------------------------
def _read_peer(reader: Reader) -> PeerRecord:
    return PeerRecord(
        identity=Identity(digest=reader.fixed(32)),
        address=BlockchainAddress(address=reader.fixed(20)),
        public_key=reader.fixed(32),
        department_label=reader.var_text(),
        enrolled_at=reader.u64(),
    )


def _read_nested(reader: Reader, read):
    nested = Reader(reader.var_bytes())
    value = read(nested)
    nested.finish()
    return value


def decode_envelope(data: bytes) -> Envelope:
    reader = Reader(data)
    try:
        tag = MessageTag(reader.u8())
    except ValueError as e:
        raise WireFormatError(f"unknown message tag: {e}") from e
    version = reader.u8()
    if version != WIRE_VERSION:
        raise WireFormatError(f"unsupported wire version {version}")
    sender = Identity(digest=reader.fixed(32))

    if tag == MessageTag.REGISTER_PEER:
        body = PeerAnnouncement(peer=_read_peer(reader))
    elif tag == MessageTag.SUBMIT_TX:
        body = SubmitTx(tx=_read_nested(reader, ledger_service.read_transaction))
    elif tag == MessageTag.PRE_VOTE:
        body = PreVote(
            round_number=reader.u64(),
            proposer=Identity(digest=reader.fixed(32)),
            signature=ledger_service.read_signature(reader),
        )
    elif tag == MessageTag.PROPOSAL:
        body = Proposal(
            round_number=reader.u64(),
            candidate=_read_nested(reader, ledger_service.read_block),
        )
    elif tag == MessageTag.BLOCK_SIGNATURE:
        round_number = reader.u64()
        block_hash = reader.fixed(32)
        signature = ledger_service.read_signature(reader) if reader.u8() else None
        refusal = tuple(reader.var_text() for _ in range(reader.u32()))
        body = SignatureReply(
            round_number=round_number,
            block_hash=block_hash,
            signature=signature,
            refusal=refusal,
        )
    else:
        body = ChainBroadcast(
            round_number=reader.u64(),
            chain=_read_nested(reader, ledger_service.read_chain),
        )
    reader.finish()
    return Envelope(tag=tag, sender=sender, body=body)
