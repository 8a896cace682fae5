"""
Benchmark sweeps over committee sizes: throughput and round validation time
per validator count, written out as CSV plus a plotting script.
"""
import asyncio
import csv
import logging
import os
from pathlib import Path

import numpy as np

from app.consortium.errors import ConsortiumError, SimulationError
from app.consortium.models.protocol import RoundStatus
from app.consortium.models.schemas import Transaction, Wallet
from app.consortium.models.simulation import MetricsRow, MetricsTable, RoundTrace, SweepSpec
from app.consortium.services import ledger_service, protocol_service
from app.consortium.services.protocol_service import UserDirectory
from app.consortium.services.simulation_service import (
    Gateway,
    build_consortium,
    run_rounds,
    seeded_wallet,
)

logger = logging.getLogger(__name__)

CSV_COLUMNS = (
    "validators",
    "tx_per_sec_mean",
    "tx_per_sec_stddev",
    "validation_time_ms_mean",
    "validation_time_ms_stddev",
    "messages_total",
)
IDEAL_ROUND_MS = 1000.0
GENESIS_SEED = b"consortium-sweep"


class SweepWorkload:
    """Users and their pre-signed transactions, shared by every point of one sweep."""

    def __init__(self, spec: SweepSpec):
        seed = spec.sim.seed
        self.genesis = ledger_service.make_genesis(GENESIS_SEED + str(seed).encode())
        self.users = UserDirectory()
        wallets: list[Wallet] = []
        for index in range(spec.users):
            wallet = seeded_wallet(seed, f"user-{index}")
            protocol_service.register_user(
                protocol_service.registration_request(wallet), now=0, users=self.users
            )
            wallets.append(wallet)

        self.submissions: list[tuple[float, Transaction]] = []
        for index in range(spec.transactions):
            wallet = wallets[index % spec.users]
            at = index * spec.submit_interval_ms
            tx = ledger_service.make_transaction(
                wallet,
                payload=f"tx-{index}".encode(),
                tx_nonce=index // spec.users + 1,
                timestamp=int(at),
            )
            self.submissions.append((at, tx))


def run_seed(base_seed: int, validators: int, repetition: int) -> int:
    """Independent, reproducible jitter stream for one simulation run."""
    sequence = np.random.SeedSequence([base_seed, validators, repetition])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def run_point(spec: SweepSpec, validators: int, workload: SweepWorkload) -> tuple[MetricsRow, list[RoundTrace]]:
    """``spec.repetitions`` independent simulations with N = committee = ``validators``."""
    policy = spec.policy_for(validators)
    throughputs, round_times, messages = [], [], []
    traces: list[RoundTrace] = []
    for repetition in range(spec.repetitions):
        config = spec.sim.model_copy(update={"seed": run_seed(spec.sim.seed, validators, repetition)})
        try:
            simulator = build_consortium(
                config, validators, policy, spec.round_config, workload.users, workload.genesis
            )
            proposer = protocol_service.elect_validators(simulator.registry, 0, policy)[0].identity
            gateway = Gateway(simulator, proposer)
            for at, tx in workload.submissions:
                gateway.submit(tx, at)
            _, run_traces = run_rounds(
                simulator, policy, spec.round_config, spec.transactions, run=repetition
            )
        except ConsortiumError as e:
            raise SimulationError(f"validators={validators} repetition={repetition}: {e}") from e

        total_ms = sum(t.duration_ms for t in run_traces)
        finalized = [t.duration_ms for t in run_traces if t.status == RoundStatus.FINALIZED]
        throughputs.append(spec.transactions / (total_ms / 1000.0))
        round_times.append(float(np.mean(finalized)))
        messages.append(sum(t.messages_total for t in run_traces))
        traces.extend(run_traces)

    row = MetricsRow(
        validators=validators,
        tx_per_sec_mean=float(np.mean(throughputs)),
        tx_per_sec_stddev=float(np.std(throughputs)),
        validation_time_ms_mean=float(np.mean(round_times)),
        validation_time_ms_stddev=float(np.std(round_times)),
        messages_total=float(np.mean(messages)),
    )
    logger.info(
        "validators=%d: %.3f tx/s, %.1f ms per round", validators, row.tx_per_sec_mean, row.validation_time_ms_mean
    )
    return row, traces


async def run_sweep_async(spec: SweepSpec, workers: int = 1) -> tuple[MetricsTable, list[RoundTrace]]:
    workload = SweepWorkload(spec)
    limit = asyncio.Semaphore(max(1, workers))

    async def point(validators: int):
        async with limit:
            return await asyncio.to_thread(run_point, spec, validators, workload)

    # gather keeps the requested order regardless of completion order
    results = await asyncio.gather(*(point(v) for v in spec.validator_counts))
    table = MetricsTable(rows=tuple(row for row, _ in results))
    traces = [trace for _, point_traces in results for trace in point_traces]
    return table, traces


def run_sweep(spec: SweepSpec, workers: int = 1) -> tuple[MetricsTable, list[RoundTrace]]:
    return asyncio.run(run_sweep_async(spec, workers))


def throughput_from_traces(traces: list[RoundTrace], transactions: int, validators: int) -> float:
    """Mean tx/s for one sweep point, recomputed from exported traces."""
    runs: dict[int, float] = {}
    for trace in traces:
        if trace.validators_count == validators:
            runs[trace.run] = runs.get(trace.run, 0.0) + trace.duration_ms
    return float(np.mean([transactions / (total / 1000.0) for total in runs.values()]))


# -------------------------------------------------------
# Output
# -------------------------------------------------------
def _fmt(value: float) -> str:
    return f"{value:.6g}"


def emit_csv(table: MetricsTable, path: str | Path) -> Path:
    if not len(table):
        raise ValueError("cannot write an empty metrics table")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in table.rows:
            writer.writerow(
                [row.validators]
                + [_fmt(getattr(row, column)) for column in CSV_COLUMNS[1:]]
            )
    logger.info("Wrote %d rows to %s", len(table), path)
    return path


PLOT_TEMPLATE = '''"""Plots throughput and round validation time against the number of validators."""
import csv
import os

import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))
CSV_PATH = os.path.join(HERE, {csv_path!r})

with open(CSV_PATH, newline="") as fh:
    rows = list(csv.DictReader(fh))

validators = [int(r["validators"]) for r in rows]
tps = [float(r["tx_per_sec_mean"]) for r in rows]
tps_err = [float(r["tx_per_sec_stddev"]) for r in rows]
seconds = [float(r["validation_time_ms_mean"]) / 1000.0 for r in rows]
seconds_err = [float(r["validation_time_ms_stddev"]) / 1000.0 for r in rows]

fig, (left, right) = plt.subplots(1, 2, figsize=(11, 4))

left.errorbar(validators, tps, yerr=tps_err, marker="o", capsize=3)
left.set_xlabel("Number of validators")
left.set_ylabel("Transactions per second")
left.set_title("Throughput against validators")
left.grid(True, alpha=0.3)

right.errorbar(validators, seconds, yerr=seconds_err, marker="o", capsize=3)
right.axhline({ideal_s}, linestyle="--", color="grey", label="ideal case ({ideal_s:g} s)")
right.set_xlabel("Number of validators")
right.set_ylabel("Validation time per block (s)")
right.set_title("Validation time against validators")
right.legend()
right.grid(True, alpha=0.3)

fig.tight_layout()
fig.savefig(os.path.join(HERE, {png_name!r}), dpi=150)
plt.show()
'''


def emit_plot_script(table: MetricsTable, path: str | Path, csv_path: str | Path) -> Path:
    """A standalone matplotlib script that redraws both charts from the CSV."""
    if not len(table):
        raise ValueError("cannot plot an empty metrics table")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    relative = os.path.relpath(Path(csv_path).resolve(), path.resolve().parent)
    script = PLOT_TEMPLATE.format(
        csv_path=Path(relative).as_posix(),
        ideal_s=IDEAL_ROUND_MS / 1000.0,
        png_name=path.stem + ".png",
    )
    path.write_text(script, encoding="utf-8")
    return path


def summary_lines(table: MetricsTable, transactions: int) -> list[str]:
    lines = [f"sweep: {transactions} transactions per run"]
    for row in table.rows:
        lines.append(
            f"validators={row.validators:>3}  tx/s={_fmt(row.tx_per_sec_mean):>9}  "
            f"round_ms={_fmt(row.validation_time_ms_mean):>9}  messages={_fmt(row.messages_total)}"
        )
    lines.append(f"ideal case: all transactions validated in <= {IDEAL_ROUND_MS / 1000:g} s (reference only)")
    return lines


def trace_path_for(csv_path: str | Path) -> Path:
    csv_path = Path(csv_path)
    return csv_path.with_name(csv_path.stem + ".traces.jsonl")

