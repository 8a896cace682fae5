"""
Wire message models exchanged between consortium peers.
"""
from enum import IntEnum
from typing import Optional, Union

from pydantic import BaseModel, ConfigDict, Field

from app.consortium.models.protocol import PeerRecord
from app.consortium.models.schemas import Block, Blockchain, Digest32, Identity, Signature, Transaction


class MessageTag(IntEnum):
    REGISTER_PEER = 1
    SUBMIT_TX = 2
    PRE_VOTE = 3
    PROPOSAL = 4
    BLOCK_SIGNATURE = 5
    CHAIN_BROADCAST = 6


CONSENSUS_TAGS = (
    MessageTag.PRE_VOTE,
    MessageTag.PROPOSAL,
    MessageTag.BLOCK_SIGNATURE,
    MessageTag.CHAIN_BROADCAST,
)


class PeerAnnouncement(BaseModel):
    model_config = ConfigDict(frozen=True)

    peer: PeerRecord


class SubmitTx(BaseModel):
    model_config = ConfigDict(frozen=True)

    tx: Transaction


class PreVote(BaseModel):
    """A committee member's vote that the round's proposer may build the block."""

    model_config = ConfigDict(frozen=True)

    round_number: int = Field(ge=0)
    proposer: Identity
    signature: Signature


class Proposal(BaseModel):
    model_config = ConfigDict(frozen=True)

    round_number: int = Field(ge=0)
    candidate: Block


class SignatureReply(BaseModel):
    """A validator's signature over the candidate header hash, or its refusal."""

    model_config = ConfigDict(frozen=True)

    round_number: int = Field(ge=0)
    block_hash: Digest32
    signature: Optional[Signature] = None
    refusal: tuple[str, ...] = ()


class ChainBroadcast(BaseModel):
    model_config = ConfigDict(frozen=True)

    round_number: int = Field(ge=0)
    chain: Blockchain


MessageBody = Union[PeerAnnouncement, SubmitTx, PreVote, Proposal, SignatureReply, ChainBroadcast]


class Envelope(BaseModel):
    model_config = ConfigDict(frozen=True)

    tag: MessageTag
    sender: Identity
    body: MessageBody
