import pytest

from app.consortium.errors import WireFormatError
from app.consortium.models.messages import MessageTag, PreVote, SignatureReply, SubmitTx
from app.consortium.services import identity_service, ledger_service, wire


@pytest.fixture
def prevote_envelope(department_wallets):
    voter, proposer = department_wallets[:2]
    signature = identity_service.sign(voter.keypair.private_key, wire.prevote_message(3, proposer.identity))
    body = PreVote(round_number=3, proposer=proposer.identity, signature=signature)
    return wire.make_envelope(voter.identity, body)


def test_envelope_header_layout(prevote_envelope):
    data = wire.encode_envelope(prevote_envelope)
    assert data[0] == MessageTag.PRE_VOTE
    assert data[1] == wire.WIRE_VERSION
    assert data[2:34] == prevote_envelope.sender.digest


def test_prevote_decodes_to_the_same_envelope(prevote_envelope):
    decoded = wire.decode_envelope(wire.encode_envelope(prevote_envelope))
    assert decoded == prevote_envelope


def test_refusal_reply_keeps_reason_codes(department_wallets):
    reply = SignatureReply(round_number=1, block_hash=bytes(32), refusal=("LINK", "MERKLE"))
    envelope = wire.make_envelope(department_wallets[0].identity, reply)
    decoded = wire.decode_envelope(wire.encode_envelope(envelope))
    assert decoded.body.signature is None
    assert decoded.body.refusal == ("LINK", "MERKLE")


@pytest.mark.parametrize("refusal", [(), ("",), ("stale tip, height 3",), ("a,b", "", "c")])
def test_refusal_reasons_are_length_prefixed(department_wallets, refusal):
    reply = SignatureReply(round_number=2, block_hash=bytes(32), refusal=refusal)
    envelope = wire.make_envelope(department_wallets[0].identity, reply)
    assert wire.decode_envelope(wire.encode_envelope(envelope)).body.refusal == refusal


def test_submitted_transaction_survives_the_wire(citizen):
    tx = ledger_service.make_transaction(citizen, b"payload", 1, 5)
    envelope = wire.make_envelope(citizen.identity, SubmitTx(tx=tx))
    decoded = wire.decode_envelope(wire.encode_envelope(envelope))
    assert ledger_service.hash_transaction(decoded.body.tx) == ledger_service.hash_transaction(tx)


def test_unknown_body_type_has_no_tag(citizen):
    with pytest.raises(WireFormatError):
        wire.make_envelope(citizen.identity, object())


@pytest.mark.parametrize(
    "mutate",
    [
        lambda data: bytes([99]) + data[1:],
        lambda data: data[:1] + bytes([wire.WIRE_VERSION + 1]) + data[2:],
        lambda data: data[:-1],
        lambda data: data + b"\x00",
        lambda data: b"",
    ],
    ids=["unknown-tag", "wrong-version", "truncated", "trailing-bytes", "empty"],
)
def test_malformed_input_is_rejected(prevote_envelope, mutate):
    with pytest.raises(WireFormatError):
        wire.decode_envelope(mutate(wire.encode_envelope(prevote_envelope)))
