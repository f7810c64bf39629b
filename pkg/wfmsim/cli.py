"""Command line front end: simulate, sweep-snr, plan, ber-check, table1."""
import argparse
import logging
from pathlib import Path
from typing import List, Optional

import pandas as pd

from . import runner
from .config import ScenarioConfig, load_config
from .errors import EXIT_CONFIG, EXIT_INVARIANT, EXIT_OK, ConfigError, InvariantViolation
from .settings import settings

logger = logging.getLogger(__name__)

SCENARIOS = ("basic", "busy", "crossroad")


def _number_list(text: str) -> List[float]:
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from e


def _int_list(text: str) -> List[int]:
    try:
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from e


def _config(args) -> ScenarioConfig:
    return load_config(args.config) if args.config else ScenarioConfig()


def _seeds(args, cfg: ScenarioConfig) -> List[int]:
    if args.seed_list:
        return args.seed_list
    if args.seeds is not None:
        if args.seeds < 1:
            raise ConfigError("--seeds must be at least 1")
        return list(range(args.seeds))
    return list(cfg.seeds)


def _out(args, cfg: ScenarioConfig) -> Path:
    return Path(args.out or cfg.output_dir or settings.output_dir)


def _parallel(args) -> int:
    return args.parallel or settings.parallel


def _write_table(table: pd.DataFrame, out: Path, name: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / name, index=False, float_format="%.10g", lineterminator="\n")
    print(table.to_string(index=False))


def cmd_simulate(args) -> int:
    cfg = _config(args)
    seeds = _seeds(args, cfg)
    out = _out(args, cfg)
    logger.info(f"simulate: {cfg.scenario}/{cfg.protocol.strategy}, {len(seeds)} seed(s) -> {out}")
    summary = runner.simulate(cfg, seeds, out, _parallel(args))
    print(summary.describe())
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    table = runner.sweep_snr(cfg, args.snr_list or runner.DEFAULT_SNR_LIST, _seeds(args, cfg), _parallel(args))
    _write_table(table, _out(args, cfg), "sweep_snr.csv")
    return EXIT_OK


def cmd_table1(args) -> int:
    cfg = _config(args)
    table = runner.table1(cfg, args.snr_list or runner.DEFAULT_SNR_LIST, _seeds(args, cfg), _parallel(args))
    _write_table(table, _out(args, cfg), "table1.csv")
    return EXIT_OK


def cmd_plan(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    plan, reference = runner.build_plan(cfg, reference=None if args.reference_seeds is None else runner.reference_for(cfg, args.reference_seeds))
    out.mkdir(parents=True, exist_ok=True)
    (out / "plan.json").write_text(plan.to_json() + "\n")
    print(plan.describe())

    columns = {"horizon": range(len(reference)), "reference": reference}
    if args.show_reference:
        for scenario in SCENARIOS:
            columns[scenario] = runner.reference_for(cfg, args.reference_seeds, scenario=scenario)
    _write_table(pd.DataFrame(columns), out, "reference.csv")
    return EXIT_OK


def cmd_ber_check(args) -> int:
    table = runner.ber_check(args.snr_list or [6.0, 10.0, 14.0], args.bits, args.seed)
    out = Path(args.out or settings.output_dir)
    _write_table(table, out, "ber_check.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wfmsim", description="Predictive semantic video transmission simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seeds=True, parallel=True):
        p.add_argument("--config", help="experiment config file (key = value)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--verbose", "-v", action="store_true", help="debug logging")
        if seeds:
            group = p.add_mutually_exclusive_group()
            group.add_argument("--seeds", type=int, help="run seeds 0..N-1")
            group.add_argument("--seed-list", type=_int_list, help="comma-separated seeds")
        if parallel:
            p.add_argument("--parallel", type=int, help="worker processes for seeds")

    p = sub.add_parser("simulate", help="per-seed traces and a run summary")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep-snr", help="one summary row per fixed SNR")
    common(p)
    p.add_argument("--snr-list", type=_number_list)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plan", help="active plan and degradation reference")
    common(p, seeds=False, parallel=False)
    p.add_argument("--reference-seeds", type=int)
    p.add_argument("--show-reference", action="store_true", help="also print the reference of every scenario")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("ber-check", help="measured vs analytic 16-QAM BER")
    p.add_argument("--out", help="output directory")
    p.add_argument("--verbose", "-v", action="store_true")
    p.add_argument("--snr-list", type=_number_list)
    p.add_argument("--bits", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ber_check)

    p = sub.add_parser("table1", help="strategy x SNR transmission and bandwidth grid")
    common(p)
    p.add_argument("--snr-list", type=_number_list)
    p.set_defaults(func=cmd_table1)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else settings.log_level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as e:
        logger.error(f"config error: {e}")
        return EXIT_CONFIG
    except InvariantViolation as e:
        logger.error(f"invariant violation: {e}")
        return EXIT_INVARIANT
