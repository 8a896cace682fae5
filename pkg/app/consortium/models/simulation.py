"""
Models for the discrete-event network simulator and the benchmark sweep.
"""
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.consortium.models.protocol import QuorumPolicy, RoundConfig, RoundStatus
from app.consortium.models.schemas import Identity, UInt64


class SimConfig(BaseModel):
    """
    Latency and processing-cost parameters, all in simulated milliseconds.

    ``medium_slot_ms`` is how long one frame holds the shared channel and
    ``contention_ms`` is added per other sender with frames still queued.
    """

    model_config = ConfigDict(frozen=True)

    seed: UInt64 = 0
    base_latency_ms: float = Field(ge=0)
    jitter_ms: float = Field(ge=0)
    per_signature_verify_ms: float = Field(ge=0)
    per_tx_validate_ms: float = Field(ge=0)
    medium_slot_ms: float = Field(ge=0)
    contention_ms: float = Field(ge=0)


class EventKind(str, Enum):
    MESSAGE = "MESSAGE"
    TIMER = "TIMER"
    CLIENT = "CLIENT"


@dataclass(order=True)
class Event:
    """Queue entry; ordering is (deliver_at, sequence) only."""

    deliver_at: float
    sequence: int
    target: Identity = field(compare=False)
    kind: EventKind = field(compare=False)
    payload: bytes = field(compare=False, repr=False)
    sender: Optional[Identity] = field(default=None, compare=False)


class Completion(str, Enum):
    DRAINED = "DRAINED"
    STOPPED = "STOPPED"
    DEADLINE = "DEADLINE"


class RoundTrace(BaseModel):
    """Measured quantities of one consensus round. One JSON line per round on export."""

    model_config = ConfigDict(frozen=True)

    round_number: int = Field(ge=0)
    validators_count: int = Field(ge=1)
    peers_count: int = Field(ge=1)
    txs_count: int = Field(ge=0)
    status: RoundStatus
    started_at: float
    finalized_at: float
    messages_sent: dict[str, int]
    reason: Optional[str] = None
    run: int = 0

    @model_validator(mode="after")
    def check_order(self) -> "RoundTrace":
        if self.finalized_at < self.started_at:
            raise ValueError("finalized_at precedes started_at")
        return self

    @property
    def duration_ms(self) -> float:
        return self.finalized_at - self.started_at

    @property
    def messages_total(self) -> int:
        return sum(self.messages_sent.values())


class SweepPlan(BaseModel):
    """The workload knobs of a sweep, as written in a run-config file."""

    model_config = ConfigDict(frozen=True)

    validator_counts: tuple[int, ...] = Field(min_length=1)
    transactions: int = Field(ge=1)
    repetitions: int = Field(ge=1)
    users: int = Field(ge=1)
    submit_interval_ms: float = Field(ge=0)
    threshold_rule: str

    @model_validator(mode="after")
    def check_counts(self) -> "SweepPlan":
        if any(count < 1 for count in self.validator_counts):
            raise ValueError("validator counts must be at least 1")
        if not re.fullmatch(r"byzantine|all|fixed:[1-9][0-9]*", self.threshold_rule):
            raise ValueError(f"unknown threshold rule {self.threshold_rule!r}")
        return self

    def policy_for(self, validators: int) -> QuorumPolicy:
        """``byzantine``: floor(2c/3)+1; ``all``: every member; ``fixed:k``: k, capped at the committee."""
        if self.threshold_rule == "all":
            return QuorumPolicy(committee_size=validators, threshold=validators)
        if self.threshold_rule.startswith("fixed:"):
            threshold = min(int(self.threshold_rule.split(":")[1]), validators)
            return QuorumPolicy(committee_size=validators, threshold=threshold)
        return QuorumPolicy.byzantine(validators)


class SweepSpec(SweepPlan):
    """A sweep plan bound to the latency model and round timing it runs under."""

    sim: SimConfig
    round_config: RoundConfig


class MetricsRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    validators: int
    tx_per_sec_mean: float
    tx_per_sec_stddev: float
    validation_time_ms_mean: float
    validation_time_ms_stddev: float
    messages_total: float


class MetricsTable(BaseModel):
    model_config = ConfigDict(frozen=True)

    rows: tuple[MetricsRow, ...] = ()

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> list[float]:
        return [getattr(row, name) for row in self.rows]
