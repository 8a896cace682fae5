"""
Binary Merkle tree over transaction hashes.

Internal node = SHA-256(left || right). A level of odd width duplicates its
last hash; a single leaf is its own root.
"""
import hashlib
from typing import NamedTuple, Sequence

from pydantic import BaseModel, ConfigDict

from app.consortium.errors import EmptyMerkleTreeError, ProofIndexError
from app.consortium.models.schemas import Digest32, ProofSide


class ProofStep(NamedTuple):
    hash: bytes
    side: ProofSide


def _parent(left: bytes, right: bytes) -> bytes:
    return hashlib.sha256(left + right).digest()


def _next_level(level: Sequence[bytes]) -> list[bytes]:
    padded = list(level)
    if len(padded) % 2:
        padded.append(padded[-1])
    return [_parent(padded[i], padded[i + 1]) for i in range(0, len(padded), 2)]


class MerkleTree(BaseModel):
    model_config = ConfigDict(frozen=True)

    leaves: tuple[Digest32, ...]
    levels: tuple[tuple[bytes, ...], ...]

    @classmethod
    def build(cls, leaves: Sequence[bytes]) -> "MerkleTree":
        if not leaves:
            raise EmptyMerkleTreeError("cannot build a Merkle tree without leaves")
        levels = [tuple(leaves)]
        while len(levels[-1]) > 1:
            levels.append(tuple(_next_level(levels[-1])))
        return cls(leaves=tuple(leaves), levels=tuple(levels))

    @property
    def root(self) -> bytes:
        return self.levels[-1][0]

    def proof(self, index: int) -> list[ProofStep]:
        return merkle_proof(self, index)


def build_merkle_root(tx_hashes: Sequence[bytes]) -> bytes:
    if not tx_hashes:
        raise EmptyMerkleTreeError("cannot build a Merkle root without leaves")
    level = list(tx_hashes)
    while len(level) > 1:
        level = _next_level(level)
    return level[0]


def merkle_proof(tree: MerkleTree, index: int) -> list[ProofStep]:
    """Sibling path from leaf ``index`` up to (not including) the root."""
    if not 0 <= index < len(tree.leaves):
        raise ProofIndexError(f"leaf index {index} out of range for {len(tree.leaves)} leaves")
    proof: list[ProofStep] = []
    position = index
    for level in tree.levels[:-1]:
        if position % 2:
            proof.append(ProofStep(level[position - 1], ProofSide.LEFT))
        else:
            sibling = level[position + 1] if position + 1 < len(level) else level[position]
            proof.append(ProofStep(sibling, ProofSide.RIGHT))
        position //= 2
    return proof


def verify_proof(leaf: bytes, proof: Sequence[tuple[bytes, ProofSide]], root: bytes) -> bool:
    current = leaf
    for sibling, side in proof:
        if side == ProofSide.RIGHT:
            current = _parent(current, sibling)
        elif side == ProofSide.LEFT:
            current = _parent(sibling, current)
        else:
            return False
    return current == root
