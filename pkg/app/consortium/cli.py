"""
Command-line entry points: demo, sweep, verify-chain, verify-doc.

Exit codes: 0 success, 1 domain failure, 2 usage or config error.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from app.config import configure_logging, settings
from app.consortium.errors import ConfigError, ConsortiumError
from app.consortium.services import bench_service, demo_service, ledger_service, offchain_service
from app.consortium.services.simulation_service import export_traces
from app.schemas import load_run_config

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _echo(lines) -> None:
    for line in lines:
        print(line)


# -------------------------------------------------------
# Commands
# -------------------------------------------------------
def cmd_demo(args: argparse.Namespace) -> int:
    config = load_run_config(args.config, seed=args.seed)
    result = demo_service.run_demo(config, args.out or settings.data_dir)
    _echo(result.transcript)
    return result.exit_code


def cmd_sweep(args: argparse.Namespace) -> int:
    config = load_run_config(args.config, seed=args.seed)
    spec = config.sweep_spec()
    table, traces = bench_service.run_sweep(spec, workers=settings.sweep_workers)
    csv_path = bench_service.emit_csv(table, args.out)
    export_traces(traces, bench_service.trace_path_for(csv_path))
    if args.plot:
        bench_service.emit_plot_script(table, args.plot, csv_path)
    _echo(bench_service.summary_lines(table, spec.transactions))
    return EXIT_OK


def cmd_verify_chain(args: argparse.Namespace) -> int:
    chain_path = Path(args.chain)
    registry_path = Path(args.registry) if args.registry else chain_path.with_name("registry.json")
    try:
        chain = ledger_service.import_chain(chain_path)
        registry, policy = ledger_service.import_registry(registry_path)
    except OSError as e:
        raise ConfigError(f"cannot read {e.filename}: {e.strerror}") from e
    verified = ledger_service.verify_chain(chain, policy, registry)
    print(f"height: {chain.height}")
    print(f"chain verified: {str(verified).lower()}")
    return EXIT_OK if verified else EXIT_FAILURE


def cmd_verify_doc(args: argparse.Namespace) -> int:
    try:
        content = Path(args.file).read_bytes()
        chain = ledger_service.import_chain(args.chain)
    except OSError as e:
        raise ConfigError(f"cannot read {e.filename}: {e.strerror}") from e
    if not Path(args.store).is_dir():
        raise ConfigError(f"no store directory at {args.store}")
    store = offchain_service.DocumentStore(args.store)
    verdict = offchain_service.verify_document(content, chain)
    print(f"document: {verdict.doc_hash.hex()}")
    print(f"store status: {store.status(verdict.doc_hash).value}")
    if verdict.anchored:
        print(f"{verdict.status.value} at height {verdict.height}, transaction {verdict.tx_index}")
        return EXIT_OK
    print(verdict.status.value)
    return EXIT_FAILURE


# -------------------------------------------------------
# Parser
# -------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="consortium",
        description="Consortium e-government ledger: demo scenario, benchmark sweeps, verification.",
    )
    parser.add_argument("--log-level", default=None, help="Override CONSORTIUM_LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True)

    demo = commands.add_parser("demo", help="Run the end-to-end scenario")
    demo.add_argument("--config", required=True, help="Run-config JSON file")
    demo.add_argument("--seed", type=int, default=None, help="Override the config seed")
    demo.add_argument("--out", default=None, help="Output directory (default: CONSORTIUM_DATA_DIR)")
    demo.set_defaults(handler=cmd_demo)

    sweep = commands.add_parser("sweep", help="Benchmark throughput and round time over validator counts")
    sweep.add_argument("--config", required=True, help="Run-config JSON file")
    sweep.add_argument("--out", required=True, help="CSV file to write")
    sweep.add_argument("--plot", default=None, help="Also write a plotting script here")
    sweep.add_argument("--seed", type=int, default=None, help="Override the config seed")
    sweep.set_defaults(handler=cmd_sweep)

    verify_chain = commands.add_parser("verify-chain", help="Check an exported chain")
    verify_chain.add_argument("--chain", required=True, help="Chain JSON-lines export")
    verify_chain.add_argument("--registry", default=None, help="Registry export (default: registry.json next to the chain)")
    verify_chain.set_defaults(handler=cmd_verify_chain)

    verify_doc = commands.add_parser("verify-doc", help="Check that a document is anchored on chain")
    verify_doc.add_argument("--store", required=True, help="Off-chain store directory")
    verify_doc.add_argument("--file", required=True, help="Document to check")
    verify_doc.add_argument("--chain", required=True, help="Chain JSON-lines export")
    verify_doc.set_defaults(handler=cmd_verify_doc)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    configure_logging(args.log_level)
    try:
        return args.handler(args)
    except ConfigError as e:
        logger.debug("config error", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ConsortiumError as e:
        logger.debug("%s failed", args.command, exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE
