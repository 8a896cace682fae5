"""
Models for the off-chain document store and on-chain anchors.
"""
from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.consortium.models.schemas import Digest32, HexBytes, Identity, ProofSide, UInt64


class DocumentStatus(str, Enum):
    STORED = "STORED"
    DELETED = "DELETED"
    NOT_FOUND = "NOT_FOUND"


class StoredDocument(BaseModel):
    model_config = ConfigDict(frozen=True)

    doc_hash: Digest32
    content: HexBytes = b""
    media_hint: str
    stored_at: UInt64
    deleted: bool = False

    @model_validator(mode="after")
    def check_tombstone(self) -> "StoredDocument":
        if self.deleted and self.content:
            raise ValueError("a deleted document keeps no content")
        return self


class IndexEntry(BaseModel):
    """One record of ``index.json``."""

    media_hint: str
    stored_at: UInt64
    deleted: bool = False


class AnchorPayload(BaseModel):
    model_config = ConfigDict(frozen=True)

    doc_hash: Digest32
    media_hint: str
    submitter: Identity


class VerificationStatus(str, Enum):
    ANCHORED = "ANCHORED"
    UNANCHORED = "UNANCHORED"


class ProofEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    hash: Digest32
    side: ProofSide


class DocumentVerification(BaseModel):
    model_config = ConfigDict(frozen=True)

    status: VerificationStatus
    doc_hash: Digest32
    height: Optional[int] = None
    tx_index: Optional[int] = None
    tx_id: Optional[Digest32] = None
    merkle_root: Optional[Digest32] = None
    proof: tuple[ProofEntry, ...] = Field(default=())

    @property
    def anchored(self) -> bool:
        return self.status == VerificationStatus.ANCHORED
