"""Seeded experiment runs: sessions per seed, summaries, tables and output files."""
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from .codec import FULL_BYTES, MASK_BYTES, TxMode
from .config import ScenarioConfig
from .errors import InvariantViolation
from .phy import LinkConfig, analytic_ber_16qam, transmit_bytes
from .predictor import degradation_reference
from .protocol import SessionTrace, ledger_totals, run_session
from .scheduler import SchedulerPlan, normalize_reference, plan_active

logger = logging.getLogger(__name__)

TABLE1_STRATEGIES = ("feedback_part", "feedback_full", "fixed_interval")
DEFAULT_SNR_LIST = (0.0, 5.0, 10.0)
BER_TOLERANCE = 0.10
MIN_EXPECTED_ERRORS = 10.0
_STAT_COLUMNS = ("transmissions", "forward_bytes", "feedback_bytes", "mse", "psnr_db", "miou")


def with_strategy(cfg: ScenarioConfig, strategy: str) -> ScenarioConfig:
    return cfg.model_copy(update={"protocol": cfg.protocol.model_copy(update={"strategy": strategy})})


def reference_for(cfg: ScenarioConfig, n_seeds: Optional[int] = None, scenario: Optional[str] = None) -> np.ndarray:
    """Normalised degradation reference for the planner."""
    raw = degradation_reference(
        scenario or cfg.scenario,
        cfg.num_slots,
        n_seeds or cfg.reference_seeds,
        cfg.profile() if scenario is None else None,
        counts=cfg.counts() if scenario is None else None,
        guidance=cfg.guidance() if scenario is None else None,
    )
    return normalize_reference(raw, cfg.scheduler.quality_weight)


def build_plan(
    cfg: ScenarioConfig,
    fixed_snr_db: Optional[float] = None,
    reference: Optional[np.ndarray] = None,
) -> Tuple[SchedulerPlan, np.ndarray]:
    L = reference if reference is not None else reference_for(cfg)
    return plan_active(cfg.planner_forecast(fixed_snr_db), L, cfg.planner_params()), L


def run_one(cfg: ScenarioConfig, seed: int, plan: Optional[SchedulerPlan] = None, fixed_snr_db: Optional[float] = None) -> SessionTrace:
    trace = run_session(
        cfg.scenario,
        cfg.forecast(fixed_snr_db),
        cfg.protocol,
        plan,
        seed,
        profile=cfg.profile(),
        link_cfg=cfg.link,
        guidance=cfg.guidance(),
        counts=cfg.counts(),
    )
    check_trace(trace, cfg.num_slots)
    return trace


def _job(args) -> SessionTrace:
    return run_one(*args)


def run_seeds(
    cfg: ScenarioConfig,
    seeds: Sequence[int],
    plan: Optional[SchedulerPlan] = None,
    fixed_snr_db: Optional[float] = None,
    parallel: int = 1,
    progress: bool = False,
) -> List[SessionTrace]:
    """Traces ordered like `seeds`, whether sessions ran in sequence or in worker processes."""
    jobs = [(cfg, seed, plan, fixed_snr_db) for seed in seeds]
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(_job, jobs))
    return [_job(job) for job in tqdm(jobs, desc=cfg.protocol.strategy, unit="seed", disable=not progress, leave=False)]


def check_trace(trace: SessionTrace, num_slots: int) -> None:
    if len(trace) != num_slots + 1:
        raise InvariantViolation(f"seed {trace.seed}: {len(trace)} rows, expected {num_slots + 1}")
    first = trace.records[0].ledger
    if first.mode != TxMode.FULL:
        raise InvariantViolation(f"seed {trace.seed}: slot 0 was {first.mode.value}, not Full")
    modes = [e.mode for e in trace.ledger]
    expected = FULL_BYTES * modes.count(TxMode.FULL) + MASK_BYTES * modes.count(TxMode.PART)
    forward = sum(e.forward_bytes for e in trace.ledger)
    if forward != expected:
        raise InvariantViolation(f"seed {trace.seed}: forward bytes {forward} != {expected} from the mode counts")


def _json_safe(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


@dataclass
class RunSummary:
    per_seed: pd.DataFrame
    stats: Dict[str, Dict[str, float]]

    @property
    def seeds(self) -> int:
        return len(self.per_seed)

    def to_dict(self) -> Dict:
        return _json_safe({
            "seeds": self.seeds,
            "per_seed": self.per_seed.to_dict(orient="records"),
            "stats": self.stats,
        })

    def describe(self) -> str:
        lines = [f"seeds: {self.seeds}"]
        for column, stat in self.stats.items():
            lines.append(f"{column:>15}: mean {stat['mean']:.6g}  std {stat['std']:.6g}")
        return "\n".join(lines)


def summarize(traces: Sequence[SessionTrace]) -> RunSummary:
    """Per-seed totals and cross-seed mean / population std."""
    if not traces:
        raise InvariantViolation("no sessions to summarise")
    rows = []
    for trace in traces:
        totals = ledger_totals(trace)
        frame = trace.to_frame()
        mean_mse = float(frame["mse"].mean())
        rows.append({
            "seed": trace.seed,
            "transmissions": totals["transmission_count"] - 1,
            "forward_bytes": totals["forward_bytes"],
            "feedback_bytes": totals["feedback_bytes"],
            "mse": mean_mse,
            "psnr_db": float("inf") if mean_mse == 0 else float(-10.0 * np.log10(mean_mse)),
            "miou": float(frame["miou"].mean()),
        })
    per_seed = pd.DataFrame(rows)
    stats = {
        column: {"mean": float(per_seed[column].mean()), "std": float(per_seed[column].std(ddof=0))}
        for column in _STAT_COLUMNS
    }
    return RunSummary(per_seed=per_seed, stats=stats)


def write_outputs(traces: Sequence[SessionTrace], summary: RunSummary, out_dir, num_slots: int, extra: Optional[Dict] = None) -> Path:
    """Per-seed CSV traces plus summary.json, then reload both and cross-check the totals."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for trace in traces:
        trace.to_csv(out / f"trace_seed{trace.seed}.csv")
    document = {
        "run": summary.to_dict(),
        "sessions": [_json_safe(t.summary()) for t in traces],
        **(extra or {}),
    }
    path = out / "summary.json"
    path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n")
    verify_outputs(out, num_slots)
    logger.info(f"wrote {len(traces)} trace(s) and summary.json to {out}")
    return path


def verify_outputs(out_dir, num_slots: int) -> None:
    out = Path(out_dir)
    document = json.loads((out / "summary.json").read_text())
    for session in document["sessions"]:
        frame = pd.read_csv(out / f"trace_seed{session['seed']}.csv")
        if len(frame) != num_slots + 1:
            raise InvariantViolation(f"trace_seed{session['seed']}.csv has {len(frame)} rows, expected {num_slots + 1}")
        totals = session["totals"]
        forward = int(frame["forward_bytes"].sum())
        feedback = int(frame["feedback_bytes"].sum())
        if session["config"]["count_feedback_in_ledger"]:
            forward += feedback
        count = int((frame["mode"] != TxMode.PREDICT.value).sum())
        if (forward, feedback, count) != (totals["forward_bytes"], totals["feedback_bytes"], totals["transmission_count"]):
            raise InvariantViolation(f"seed {session['seed']}: summary totals disagree with the CSV columns")


def simulate(cfg: ScenarioConfig, seeds: Sequence[int], out_dir, parallel: int = 1) -> RunSummary:
    plan = None
    extra = {}
    if cfg.protocol.strategy == "feedback_active":
        plan, _ = build_plan(cfg)
        extra["plan"] = json.loads(plan.to_json())
    traces = run_seeds(cfg, seeds, plan, parallel=parallel, progress=True)
    summary = summarize(traces)
    write_outputs(traces, summary, out_dir, cfg.num_slots, extra)
    return summary


def _grid_row(strategy: str, snr_db: float, summary: RunSummary) -> Dict:
    return {
        "strategy": strategy,
        "snr_db": snr_db,
        "seeds": summary.seeds,
        "transmissions": summary.stats["transmissions"]["mean"],
        "kbytes": summary.stats["forward_bytes"]["mean"] / 1024.0,
        "mse": summary.stats["mse"]["mean"],
    }


def _run_grid(cfg: ScenarioConfig, strategies: Iterable[str], snr_list: Sequence[float], seeds: Sequence[int], parallel: int) -> List[Tuple[Dict, RunSummary]]:
    results = []
    for strategy in strategies:
        variant = with_strategy(cfg, strategy)
        reference = reference_for(variant) if strategy == "feedback_active" else None
        for snr in snr_list:
            plan = build_plan(variant, snr, reference)[0] if reference is not None else None
            summary = summarize(run_seeds(variant, seeds, plan, float(snr), parallel))
            results.append((_grid_row(strategy, float(snr), summary), summary))
            logger.info(f"{strategy} at {snr} dB: {summary.stats['transmissions']['mean']:.2f} transmissions over {summary.seeds} seed(s)")
    return results


def sweep_snr(cfg: ScenarioConfig, snr_list: Sequence[float], seeds: Sequence[int], parallel: int = 1) -> pd.DataFrame:
    """One summary row per fixed SNR for the configured strategy."""
    rows = []
    for row, summary in _run_grid(cfg, [cfg.protocol.strategy], snr_list, seeds, parallel):
        row["psnr_db"] = summary.stats["psnr_db"]["mean"]
        row["miou"] = summary.stats["miou"]["mean"]
        rows.append(row)
    return pd.DataFrame(rows)


def table1(cfg: ScenarioConfig, snr_list: Sequence[float], seeds: Sequence[int], parallel: int = 1) -> pd.DataFrame:
    """Strategy x SNR grid of mean transmissions, forward kilobytes and frame MSE."""
    rows = [row for row, _ in _run_grid(cfg, TABLE1_STRATEGIES, snr_list, seeds, parallel)]
    return pd.DataFrame(rows, columns=["strategy", "snr_db", "seeds", "transmissions", "kbytes", "mse"])


def ber_check(snr_list: Sequence[float], bits: int = 1_000_000, seed: int = 0, link_cfg: LinkConfig = LinkConfig()) -> pd.DataFrame:
    """Measured against analytic 16-QAM BER; resolvable points must agree within 10 %."""
    rng = np.random.default_rng(seed)
    payload = rng.integers(0, 256, size=max(1, -(-bits // 8)), dtype=np.uint8).tobytes()
    rows = []
    for snr in snr_list:
        _, report = transmit_bytes(payload, float(snr), link_cfg, rng)
        analytic = analytic_ber_16qam(float(snr))
        expected = analytic * report.bits_sent
        resolvable = expected >= MIN_EXPECTED_ERRORS
        rel_error = abs(report.ber - analytic) / analytic if analytic > 0 else 0.0
        rows.append({
            "snr_db": float(snr),
            "bits": report.bits_sent,
            "bit_errors": report.bit_errors,
            "measured_ber": report.ber,
            "analytic_ber": analytic,
            "relative_error": rel_error,
            "resolvable": resolvable,
            "within_tolerance": (not resolvable) or rel_error <= BER_TOLERANCE,
        })
    table = pd.DataFrame(rows)
    failed = table[~table["within_tolerance"]]
    if len(failed):
        raise InvariantViolation(f"BER outside {BER_TOLERANCE:.0%} of the analytic curve at {failed['snr_db'].tolist()} dB")
    return table
