import hashlib

import pytest

from app.consortium.errors import EmptyMerkleTreeError, ProofIndexError
from app.consortium.services.merkle import MerkleTree, build_merkle_root, verify_proof


def sha(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def leaves(count: int) -> list[bytes]:
    return [sha(f"leaf-{i}".encode()) for i in range(count)]


def test_single_leaf_is_the_root():
    (h1,) = leaves(1)
    assert build_merkle_root([h1]) == h1


def test_two_and_three_leaves():
    h1, h2, h3 = leaves(3)
    assert build_merkle_root([h1, h2]) == sha(h1 + h2)
    assert build_merkle_root([h1, h2, h3]) == sha(sha(h1 + h2) + sha(h3 + h3))


def test_empty_tree_is_rejected():
    with pytest.raises(EmptyMerkleTreeError):
        build_merkle_root([])
    with pytest.raises(EmptyMerkleTreeError):
        MerkleTree.build([])


def test_tree_root_agrees_with_build_merkle_root():
    for count in range(1, 17):
        assert MerkleTree.build(leaves(count)).root == build_merkle_root(leaves(count))


@pytest.mark.parametrize("count", range(1, 17))
def test_every_proof_verifies_and_corrupted_proofs_fail(count):
    tree = MerkleTree.build(leaves(count))
    for index, leaf in enumerate(tree.leaves):
        proof = tree.proof(index)
        assert verify_proof(leaf, proof, tree.root)
        for position, (sibling, side) in enumerate(proof):
            for bit in (0, 7, 255):
                corrupted = bytearray(sibling)
                corrupted[bit // 8] ^= 1 << (bit % 8)
                bad = list(proof)
                bad[position] = (bytes(corrupted), side)
                assert not verify_proof(leaf, bad, tree.root)


def test_proof_index_out_of_range():
    tree = MerkleTree.build(leaves(3))
    with pytest.raises(ProofIndexError):
        tree.proof(3)
    with pytest.raises(ProofIndexError):
        tree.proof(-1)
