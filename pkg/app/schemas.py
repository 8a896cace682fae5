# app/schemas.py
"""
Run-config document: one JSON file driving both ``demo`` and ``sweep``.
"""
import json
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, Field, ValidationError, model_validator

from app.consortium.errors import ConfigError
from app.consortium.models.protocol import QuorumPolicy, RoundConfig
from app.consortium.models.schemas import UInt64
from app.consortium.models.simulation import SimConfig, SweepPlan, SweepSpec


class DemoDocument(BaseModel):
    content: str
    media_hint: str


class DemoWorkload(BaseModel):
    """The end-to-end scenario: departments, one citizen, their transactions and a document."""

    genesis_seed: str
    departments: list[str] = Field(min_length=1)
    user_label: str
    transactions: list[str] = Field(min_length=1)
    document: DemoDocument


class RunConfig(BaseModel):
    seed: UInt64 = 0
    sim: SimConfig
    round_config: RoundConfig
    policy: QuorumPolicy
    demo: DemoWorkload
    sweep: SweepPlan

    @model_validator(mode="after")
    def check_committee_fits(self) -> "RunConfig":
        if self.policy.committee_size > len(self.demo.departments):
            raise ValueError(
                f"committee of {self.policy.committee_size} needs at least that many departments"
            )
        return self

    def sim_config(self) -> SimConfig:
        return self.sim.model_copy(update={"seed": self.seed})

    def sweep_spec(self) -> SweepSpec:
        return SweepSpec(
            **self.sweep.model_dump(),
            sim=self.sim_config(),
            round_config=self.round_config,
        )


def load_run_config(path: str | Path, seed: Optional[int] = None) -> RunConfig:
    """Read and validate a run-config file; ``seed`` overrides the file's seed."""
    try:
        record = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if seed is not None and isinstance(record, dict):
        record["seed"] = seed
    try:
        return RunConfig.model_validate(record)
    except ValidationError as e:
        raise ConfigError(f"invalid config {path}: {e}") from e
