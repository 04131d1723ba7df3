"""Main entry point for the QKD link simulator."""

import argparse
import asyncio
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

# Add project root to path
PROJECT_ROOT = Path(__file__).parent
sys.path.insert(0, str(PROJECT_ROOT))

import numpy as np
from pydantic import ValidationError
from rich import box
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

import config
from errors import ConfigError, QKDSimError, SecurityAbort
from models.reports import RateReport
from models.scenario import RunMode, ScenarioConfig, load_scenario
from orchestrator import (
    ExchangeOrchestrator,
    ExchangeResult,
    calibrate_for_run,
    plan_schedule,
    predict_for_run,
)
from tools.calibration import measure_visibility
from tools.rate_model import sweep_lengths
from tools.reporting import (
    LINK_ORDER,
    VISIBILITY_PULSES,
    emit_checks,
    emit_report,
    measured_row,
    paper_net_rate_khz,
    predicted_row,
    reproduce_tables,
)
from utils import format_percent, format_rate, make_streams, setup_logging

logger = logging.getLogger("qkdsim.main")

# Rich console for formatting
console = Console()

DEFAULT_SCENARIO = "geneva_nyon_lake"


def _scenario(args: argparse.Namespace) -> ScenarioConfig:
    """Load --config and apply --pulses / --seed overrides."""
    scenario = load_scenario(args.config)
    changes = {}
    if getattr(args, "pulses", None) is not None:
        changes["n_pulses_total"] = args.pulses
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "mode", None) is not None:
        changes["mode"] = RunMode(args.mode)
    if not changes:
        return scenario
    return scenario.model_copy(update={"run": scenario.run.with_changes(**changes)})


def _write(out: Optional[str], data: bytes, label: str):
    if out is None:
        sys.stdout.write(data.decode("utf-8"))
        return
    path = Path(out)
    path.write_bytes(data)
    console.print(f"[green]✓[/green] {label} written to {path}")


def _display_report(title: str, predicted: RateReport, measured: Optional[RateReport] = None):
    """Prediction, and optionally the simulated values, side by side."""
    table = Table(title=title, box=box.ROUNDED)
    table.add_column("Quantity", style="cyan", no_wrap=True)
    table.add_column("Predicted", style="green")
    if measured is not None:
        table.add_column("Simulated", style="magenta")

    def row(label, attr, fmt):
        cells = [label, fmt(getattr(predicted, attr))]
        if measured is not None:
            value = getattr(measured, attr)
            cells.append(fmt(value) if value is not None else "N/A")
        table.add_row(*cells)

    row("p_det", "p_det", lambda v: f"{v:.3e}")
    row("R_raw", "r_raw_hz", format_rate)
    row("QBER opt", "qber_opt", format_percent)
    row("QBER dark", "qber_dark", format_percent)
    row("QBER after", "qber_after", format_percent)
    row("QBER stray", "qber_stray", format_percent)
    row("QBER total", "qber_total", format_percent)
    row("eta_tau", "eta_tau", lambda v: f"{v:.4f}")
    row("eta_duty", "eta_duty", lambda v: f"{v:.4f}")
    row("eta_dist", "eta_dist", lambda v: f"{v:.4f}")
    row("I_AE", "i_ae", lambda v: f"{v:.4f}")
    row("R_net", "r_net_hz", format_rate)
    console.print(table)


def _check_result(result: ExchangeResult):
    if result.aborted:
        raise SecurityAbort(result.aborted)


def cmd_analytic(args: argparse.Namespace) -> int:
    scenario = _scenario(args)
    run = scenario.run
    predicted = predict_for_run(run, plan_schedule(run))
    _display_report(f"Prediction: {scenario.name}", predicted)
    from_paper = paper_net_rate_khz(scenario)
    if from_paper is not None:
        console.print(Panel(
            f"R_net from published R_raw {scenario.paper.r_raw_khz} kHz and QBER "
            f"{scenario.paper.qber_pct} %: [bold]{from_paper:.3f} kHz[/bold] "
            f"(published {scenario.paper.r_net_khz} kHz)",
            style="green",
        ))
    if args.out:
        _write(args.out, predicted.model_dump_json(indent=2).encode("utf-8"), "RateReport")
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    scenario = _scenario(args)
    run = scenario.run
    orchestrator = ExchangeOrchestrator(run)
    console.print(f"\n🔬 Simulating {scenario.name}: {run.n_pulses_total} pulses, seed {run.seed}, {run.mode.value}")
    if run.mode is RunMode.NETWORKED:
        result = asyncio.run(orchestrator.run_networked())
    else:
        result = orchestrator.run_exchange()
    _display_report(f"Exchange: {scenario.name}", result.predicted, result.measured)
    console.print(Panel(orchestrator.get_last_summary(), style="red" if result.aborted else "green"))
    if args.out:
        _write(args.out, emit_report([predicted_row(scenario, result.predicted),
                                      measured_row(scenario, result)]), "Report")
    _check_result(result)
    return 0


def cmd_calibrate(args: argparse.Namespace) -> int:
    scenario = _scenario(args)
    run = scenario.run
    if args.guess is not None:
        run = run.with_changes(calibration_guess_km=args.guess)
    calibration = calibrate_for_run(run, make_streams(run.seed)["calibration"])
    table = Table(title=f"Line calibration: {scenario.name}", box=box.ROUNDED)
    table.add_column("Quantity", style="cyan")
    table.add_column("Value", style="green")
    table.add_row("Configured length", f"{run.params.fiber.length_km:.3f} km")
    guess = run.calibration_guess_km if run.calibration_guess_km is not None else run.params.fiber.length_km
    table.add_row("Initial guess", f"{guess:.3f} km")
    table.add_row("Measured length", f"{calibration.measured_length_km:.4f} km")
    table.add_row("Gate offset", f"{calibration.gate_offset_s * 1e6:.4f} us")
    table.add_row("Peak counts", str(calibration.peak_counts))
    console.print(table)
    return 0


def cmd_visibility(args: argparse.Namespace) -> int:
    scenario = _scenario(argparse.Namespace(config=args.config, seed=args.seed))
    run = scenario.run
    n_pulses = args.pulses if args.pulses is not None else VISIBILITY_PULSES
    result = measure_visibility(run.params, run.detector, n_pulses, make_streams(run.seed)["calibration"])
    table = Table(title=f"Visibility: {scenario.name}", box=box.ROUNDED)
    table.add_column("Alice", style="cyan")
    table.add_column("Bob", style="cyan")
    table.add_column("Right", style="green")
    table.add_column("Wrong", style="red")
    table.add_column("V", style="magenta")
    for setting in result.settings:
        table.add_row(
            f"{setting.alice_quarter * 90}°", f"{setting.bob_quarter * 90}°",
            str(setting.right_clicks), str(setting.wrong_clicks),
            f"{100 * setting.visibility:.3f} ± {100 * setting.stderr:.3f} %",
        )
    console.print(table)
    console.print(Panel(
        f"V = {100 * result.mean:.3f} ± {100 * result.stderr:.3f} %  (configured "
        f"{100 * run.params.visibility:.3f} %), QBER_opt {format_percent(result.qber_opt, 3)}",
        style="green",
    ))
    return 0


def _session_summary(name: str, agent) -> Panel:
    state = agent.state
    lines = [
        f"Session {state.session_id.hex()}: {state.phase.value}",
        f"Frames: {state.frames}, transcript {state.transcript_digest[:16]}…",
    ]
    if state.reason:
        lines.append(f"Reason: {state.reason}")
    key = agent.final_key()
    if key is not None:
        lines.append(f"Key bits: {len(key)}")
    return Panel("\n".join(lines), title=name, style="red" if state.aborted else "green")


def cmd_alice(args: argparse.Namespace) -> int:
    from agents.transport import serve_alice

    scenario = _scenario(args)
    host, port = config.parse_bind(args.bind)
    console.print(f"\n📡 Alice waiting on {host}:{port} for Bob ({scenario.name})")
    alice = asyncio.run(serve_alice(scenario.run, host, port))
    console.print(_session_summary("Alice", alice))
    if alice.state.aborted:
        raise SecurityAbort(alice.state.reason or "session aborted")
    return 0


def cmd_bob(args: argparse.Namespace) -> int:
    from agents.transport import connect_bob

    host, port = config.parse_bind(args.bind)
    console.print(f"\n📡 Bob connecting to {host}:{port}")
    bob = asyncio.run(connect_bob(host, port))
    console.print(_session_summary("Bob", bob))
    if bob.state.aborted:
        raise SecurityAbort(bob.state.reason or "session aborted")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    scenario = _scenario(args)
    run = scenario.run
    if args.stop <= args.start or args.step <= 0:
        raise ConfigError("sweep needs --start < --stop and a positive --step")
    params = run.params.with_changes(fiber={
        "loss_coeff_db_per_km": args.loss_db_per_km,
        "extra_loss_db": args.extra_loss_db,
    })
    lengths = np.arange(args.start, args.stop + 1e-9, args.step)
    try:
        reports = sweep_lengths(params, lengths, run.detector, run.eve)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    rows = []
    for length, report in zip(lengths, reports):
        point = scenario.model_copy(update={
            "name": f"{scenario.name}@{length:g}km",
            "run": run.with_changes(params=params.with_changes(fiber={"length_km": float(length)})),
        })
        rows.append(predicted_row(point, report))
    _write(args.out, emit_report(rows), "Sweep")
    return 0


def cmd_reproduce_tables(args: argparse.Namespace) -> int:
    names = args.scenarios or list(LINK_ORDER)
    rows, checks = reproduce_tables(names, n_pulses=args.pulses, seed=args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "key_rates.csv").write_bytes(emit_report(rows))
    (out_dir / "table_checks.csv").write_bytes(emit_checks(checks))

    table = Table(title="Reproduction checks", box=box.ROUNDED)
    table.add_column("Quantity", style="cyan")
    table.add_column("Reference", style="white")
    table.add_column("Reproduced", style="magenta")
    table.add_column("", no_wrap=True)
    for check in checks:
        table.add_row(
            check.quantity, f"{check.paper:.4g}", f"{check.reproduced:.4g}",
            "[green]✓[/green]" if check.passed else "[red]✗[/red]",
        )
    console.print(table)
    passed = sum(check.passed for check in checks)
    console.print(f"\n✅ {passed}/{len(checks)} checks pass; CSV files in {out_dir}")
    if args.strict and passed < len(checks):
        return 1
    return 0


COMMANDS = {
    "analytic": cmd_analytic,
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "visibility": cmd_visibility,
    "alice": cmd_alice,
    "bob": cmd_bob,
    "sweep": cmd_sweep,
    "reproduce-tables": cmd_reproduce_tables,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qkdsim",
        description=config.WELCOME_MESSAGE,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--debug", action="store_true", default=config.DEBUG, help="Debug logging")
    parser.add_argument("--log-file", help="Also log to this file (rotated)")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_args(p, pulses=True):
        p.add_argument("--config", default=DEFAULT_SCENARIO,
                       help=f"Bundled scenario name or scenario file (default {DEFAULT_SCENARIO})")
        p.add_argument("--seed", type=int, help="Override the scenario seed")
        if pulses:
            p.add_argument("--pulses", type=int, help="Override the number of pulses")

    p = sub.add_parser("analytic", help="Predicted rates and QBER budget")
    scenario_args(p, pulses=False)
    p.add_argument("--out", help="Write the RateReport as JSON")

    p = sub.add_parser("simulate", help="Calibrate and run one key exchange")
    scenario_args(p)
    p.add_argument("--mode", choices=[m.value for m in RunMode], help="Override the run mode")
    p.add_argument("--out", help="Write predicted and simulated rows as CSV")

    p = sub.add_parser("calibrate", help="Scan the line length")
    scenario_args(p, pulses=False)
    p.add_argument("--guess", type=float, help="Initial length guess in km")

    p = sub.add_parser("visibility", help="Measure fringe visibility with strong pulses")
    scenario_args(p)

    for role in ("alice", "bob"):
        p = sub.add_parser(role, help=f"Run {role.capitalize()}'s networked endpoint")
        if role == "alice":
            scenario_args(p)
        p.add_argument("--bind", default=config.BIND, help=f"host:port (default {config.BIND})")

    p = sub.add_parser("sweep", help="Predicted rates against link length (CSV)")
    scenario_args(p, pulses=False)
    p.add_argument("--start", type=float, default=1.0, help="First length in km")
    p.add_argument("--stop", type=float, default=100.0, help="Last length in km")
    p.add_argument("--step", type=float, default=1.0, help="Length step in km")
    p.add_argument("--loss-db-per-km", type=float, default=config.DEFAULT_LOSS_DB_PER_KM)
    p.add_argument("--extra-loss-db", type=float, default=0.0)
    p.add_argument("--out", help="CSV file (default stdout)")

    p = sub.add_parser("reproduce-tables", help="Run the bundled link scenarios and compare")
    p.add_argument("scenarios", nargs="*", help="Scenario names (default: all, in table order)")
    p.add_argument("--seed", type=int, help="Override every scenario's seed")
    p.add_argument("--pulses", type=int, help="Override every scenario's pulse count")
    p.add_argument("--out-dir", default=".", help="Directory for key_rates.csv and table_checks.csv")
    p.add_argument("--strict", action="store_true", help="Exit 1 if any check fails")
    return parser


def _error(kind: str, message: str, exit_code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": exit_code}) + "\n")
    return exit_code


def run_command(argv: Optional[List[str]] = None) -> int:
    """
    Parse and run one subcommand.

    Returns:
        Exit code: 0 success, 2 validation, 3 calibration, 4 security abort, 1 otherwise
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    setup_logging(args.debug, args.log_file)
    try:
        return COMMANDS[args.command](args)
    except ValidationError as e:
        return _error("validation", str(e), 2)
    except QKDSimError as e:
        logger.error(f"{e.kind} error: {e}")
        return _error(e.kind, str(e), e.exit_code)
    except KeyboardInterrupt:
        console.print("\n\n👋 Exiting...")
        return 130
    except Exception as e:
        logger.error(f"Unexpected error: {str(e)}", exc_info=True)
        return _error("error", str(e), 1)


if __name__ == "__main__":
    sys.exit(run_command())
