"""
Error hierarchy for the consortium engine.

Errors that correspond to a protocol error code carry it as ``code`` so the
CLI and the simulator can report it without string matching.
"""


class ConsortiumError(Exception):
    """Base class for every domain failure."""

    code = "CONSORTIUM_ERROR"


class ConfigError(ConsortiumError, ValueError):
    code = "CONFIG"


# -------------------------------------------------------
# Identity / wallets
# -------------------------------------------------------
class InvalidKeyError(ConsortiumError, ValueError):
    code = "INVALID_KEY"


class EmptyKeyError(InvalidKeyError):
    code = "EMPTY_KEY"


class EntropyUnavailableError(ConsortiumError, RuntimeError):
    code = "ENTROPY_UNAVAILABLE"


class WalletFormatError(ConsortiumError, ValueError):
    code = "WALLET_FORMAT"


# -------------------------------------------------------
# Ledger
# -------------------------------------------------------
class WireFormatError(ConsortiumError, ValueError):
    code = "WIRE_FORMAT"


class EmptyMerkleTreeError(ConsortiumError, ValueError):
    code = "EMPTY_TREE"


class ProofIndexError(ConsortiumError, IndexError):
    code = "PROOF_INDEX"


class EmptyBatchError(ConsortiumError, ValueError):
    code = "EMPTY_BATCH"


class InvalidTransactionError(ConsortiumError, ValueError):
    code = "TX_SIG"


class BlockRejectedError(ConsortiumError):
    """Raised by append_block; ``reasons`` lists every failed check."""

    code = "BLOCK_REJECTED"

    def __init__(self, reasons):
        self.reasons = tuple(reasons)
        super().__init__("block rejected: " + ", ".join(r.value for r in self.reasons))


class ChainFormatError(ConsortiumError, ValueError):
    code = "CHAIN_FORMAT"


# -------------------------------------------------------
# Protocol
# -------------------------------------------------------
class DuplicateRegistrationError(ConsortiumError, ValueError):
    code = "DUPLICATE"


class InconsistentPeerError(ConsortiumError, ValueError):
    code = "INCONSISTENT_PEER"


class RegistryTooSmallError(ConsortiumError, ValueError):
    code = "REGISTRY_TOO_SMALL"


class NotInCommitteeError(ConsortiumError):
    code = "NOT_IN_COMMITTEE"


class SigningRefusedError(ConsortiumError):
    """A validator declined to sign a candidate it could not re-validate."""

    code = "SIGNING_REFUSED"

    def __init__(self, reasons):
        self.reasons = tuple(reasons)
        super().__init__("refused to sign: " + ", ".join(r.value for r in self.reasons))


class QuorumNotMetError(ConsortiumError):
    code = "QUORUM_NOT_MET"

    def __init__(self, distinct: int, threshold: int):
        self.distinct = distinct
        self.threshold = threshold
        super().__init__(f"quorum not met: {distinct} distinct valid signatures, {threshold} required")


class TransactionRejectedError(ConsortiumError):
    code = "TX_REJECTED"

    def __init__(self, reasons):
        self.reasons = tuple(reasons)
        super().__init__("transaction rejected: " + ", ".join(r.value for r in self.reasons))


class UnknownUserError(ConsortiumError, LookupError):
    code = "UNKNOWN_SENDER"


# -------------------------------------------------------
# Off-chain store
# -------------------------------------------------------
class EmptyDocumentError(ConsortiumError, ValueError):
    code = "EMPTY_DOCUMENT"


class DocumentNotFoundError(ConsortiumError, LookupError):
    code = "NOT_FOUND"


class DocumentDeletedError(ConsortiumError, LookupError):
    code = "DELETED"


class DocumentCorruptedError(ConsortiumError, ValueError):
    """Stored bytes no longer hash to the document's address."""

    code = "CORRUPTED"


# -------------------------------------------------------
# Simulation
# -------------------------------------------------------
class UnknownNodeError(ConsortiumError, LookupError):
    code = "UNKNOWN_NODE"


class SimulationError(ConsortiumError, RuntimeError):
    code = "SIMULATION"
