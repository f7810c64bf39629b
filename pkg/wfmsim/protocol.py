"""Per-slot transmitter/receiver session: feedback trigger, mode selection, ledger.

Each slot t >= 1 runs the handshake: the receiver predicts frame t and feeds
its coarse depth back, the transmitter compares it with the captured truth,
a transmission is requested by the feedback trigger or by the schedule, and
the mode is chosen by SNR. Slot 0 is always a Full transmission.
"""
import io
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Literal, NamedTuple, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import world
from .channel import SnrForecast
from .codec import (
    DEPTH_BYTES,
    TxMode,
    decode_depth_cells,
    decode_full,
    decode_mask,
    depth_cells,
    encode_depth,
    encode_full,
    encode_mask,
)
from .errors import ConfigError
from .metrics import delta_exceed, miou, mse, psnr
from .phy import LinkConfig, transmit_bytes
from .predictor import (
    DegradationProfile,
    PredictorState,
    initial_state,
    predict_step,
    profile_for,
    reconstruct_full,
    repair,
    seed_from_decoded,
)
from .scheduler import SchedulerPlan, merge_runtime

logger = logging.getLogger(__name__)

Strategy = Literal["fixed_interval", "feedback_part", "feedback_full", "feedback_active", "predict_only"]
Trigger = Literal["initial", "schedule", "feedback", "none"]

CSV_COLUMNS = [
    "slot", "mode", "triggered_by", "snr_db", "forward_bytes",
    "feedback_bytes", "mse", "psnr_db", "miou", "delta_exceed",
]

_ALLOWED_MODES = {
    "fixed_interval": (TxMode.FULL, TxMode.PART),
    "feedback_part": (TxMode.PART,),
    "feedback_full": (TxMode.FULL,),
    "feedback_active": (TxMode.FULL, TxMode.PART),
    "predict_only": (),
}


class SessionConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    strategy: Strategy = "feedback_active"
    interval: int = Field(default=6, ge=1)
    sigma: float = Field(default=0.3, gt=0.0, lt=1.0)
    theta_full_db: float = 3.0
    theta_part_db: float = -2.0
    count_feedback_in_ledger: bool = False
    coding_gain_db: float = Field(default=10.0, ge=0.0)
    feedback_delay_slots: int = Field(default=0, ge=0, le=1)

    @model_validator(mode="after")
    def _thresholds(self) -> "SessionConfig":
        if self.theta_full_db < self.theta_part_db:
            raise ValueError("theta_full_db must not be below theta_part_db")
        return self

    @property
    def allowed_modes(self):
        return _ALLOWED_MODES[self.strategy]

    @property
    def uses_feedback(self) -> bool:
        return self.strategy.startswith("feedback_")


class ModeDecision(NamedTuple):
    mode: TxMode
    infeasible: bool = False


class LedgerEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    slot: int
    mode: TxMode
    forward_bytes: int
    feedback_bytes: int = 0
    snr_db: float
    triggered_by: Trigger = "none"

    @model_validator(mode="after")
    def _byte_sizes(self) -> "LedgerEntry":
        if self.forward_bytes != self.mode.forward_bytes:
            raise ValueError(f"{self.mode.value} carries {self.mode.forward_bytes} forward bytes, not {self.forward_bytes}")
        if self.feedback_bytes not in (0, DEPTH_BYTES):
            raise ValueError(f"feedback bytes must be 0 or {DEPTH_BYTES}")
        return self


@dataclass(frozen=True)
class SlotRecord:
    ledger: LedgerEntry
    mse: float
    psnr_db: float
    miou: float
    delta_exceed: float


@dataclass
class SessionTrace:
    scenario: str
    seed: int
    config: SessionConfig
    records: List[SlotRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def ledger(self) -> List[LedgerEntry]:
        return [r.ledger for r in self.records]

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {
                "slot": r.ledger.slot,
                "mode": r.ledger.mode.value,
                "triggered_by": r.ledger.triggered_by,
                "snr_db": r.ledger.snr_db,
                "forward_bytes": r.ledger.forward_bytes,
                "feedback_bytes": r.ledger.feedback_bytes,
                "mse": r.mse,
                "psnr_db": r.psnr_db,
                "miou": r.miou,
                "delta_exceed": r.delta_exceed,
            }
            for r in self.records
        ]
        return pd.DataFrame(rows, columns=CSV_COLUMNS)

    def to_csv(self, path=None) -> str:
        buffer = io.StringIO()
        self.to_frame().to_csv(buffer, index=False, float_format="%.10g", lineterminator="\n")
        text = buffer.getvalue()
        if path is not None:
            with open(path, "w", newline="") as f:
                f.write(text)
        return text

    def summary(self) -> Dict:
        totals = ledger_totals(self, self.config.count_feedback_in_ledger)
        frame = self.to_frame()
        return {
            "seed": self.seed,
            "scenario": self.scenario,
            "num_slots": len(self.records) - 1,
            "totals": totals,
            "mean_mse": float(frame["mse"].mean()),
            "mean_miou": float(frame["miou"].mean()),
            "config": self.config.model_dump(mode="json"),
        }


def ledger_totals(
    trace: Union[SessionTrace, Sequence[LedgerEntry]],
    count_feedback_in_ledger: Optional[bool] = None,
) -> Dict[str, int]:
    """Forward and feedback byte sums plus the transmission count (slot 0 included)."""
    entries = trace.ledger if isinstance(trace, SessionTrace) else list(trace)
    if count_feedback_in_ledger is None:
        count_feedback_in_ledger = trace.config.count_feedback_in_ledger if isinstance(trace, SessionTrace) else False
    forward = sum(e.forward_bytes for e in entries)
    feedback = sum(e.feedback_bytes for e in entries)
    return {
        "forward_bytes": forward + (feedback if count_feedback_in_ledger else 0),
        "feedback_bytes": feedback,
        "transmission_count": sum(1 for e in entries if e.mode != TxMode.PREDICT),
    }


def feedback_decision(true_depth, fed_back_depth, sigma: float) -> bool:
    return delta_exceed(true_depth, fed_back_depth) > sigma


def mode_select(snr_db: float, cfg: SessionConfig, requested: bool) -> ModeDecision:
    """First allowed mode whose SNR threshold holds, in the order Full, Part."""
    if not requested:
        return ModeDecision(TxMode.PREDICT)
    thresholds = {TxMode.FULL: cfg.theta_full_db, TxMode.PART: cfg.theta_part_db}
    for mode in cfg.allowed_modes:
        if snr_db >= thresholds[mode]:
            return ModeDecision(mode)
    return ModeDecision(TxMode.PREDICT, infeasible=True)


class _Streams(NamedTuple):
    predictor: np.random.Generator
    forward: np.random.Generator
    feedback: np.random.Generator


def _streams(seed: int) -> _Streams:
    children = np.random.SeedSequence(seed).spawn(3)
    return _Streams(*(np.random.default_rng(s) for s in children))


def _coarse_depth(depth: np.ndarray) -> np.ndarray:
    """Depth as the transmitter sees it over a perfect reverse link."""
    cells, _ = decode_depth_cells(encode_depth(depth))
    return cells


def run_session(
    scenario: world.Scenario,
    link: Union[SnrForecast, float],
    cfg: SessionConfig = SessionConfig(),
    plan: Optional[SchedulerPlan] = None,
    seed: int = 0,
    *,
    num_slots: int = 20,
    profile: Optional[DegradationProfile] = None,
    link_cfg: LinkConfig = LinkConfig(),
    guidance: Optional[world.Guidance] = None,
    counts: Optional[world.SceneCounts] = None,
) -> SessionTrace:
    """One seeded session over a forecast trace or a fixed SNR."""
    forecast = link if isinstance(link, SnrForecast) else SnrForecast.constant(float(link), num_slots)
    if cfg.strategy == "feedback_active" and plan is None:
        logger.info("feedback_active without a plan: running on feedback alone")
    if plan is not None and plan.slots and plan.slots[-1] > forecast.num_slots:
        raise ConfigError(f"plan slot {plan.slots[-1]} lies beyond the {forecast.num_slots}-slot horizon")

    profile = profile or profile_for(scenario)
    guidance = guidance or world.guidance_for(scenario)
    rng = _streams(seed)
    trace = SessionTrace(scenario=scenario, seed=seed, config=cfg)
    seq = 0

    def link_snr(slot: int) -> float:
        return float(forecast.snr_db[slot]) + cfg.coding_gain_db

    def full_transmission(truth, shown_truth, ps, slot):
        nonlocal seq
        payload = encode_full(shown_truth.frame, truth, seq=seq)
        seq += 1
        received, report = transmit_bytes(payload.data, link_snr(slot), link_cfg, rng.forward)
        frame, hints, corruption = decode_full(received)
        ps = seed_from_decoded(hints, corruption, ps, slot=slot)
        logger.debug(f"slot {slot}: Full, ber {report.ber:.4f}, corruption {corruption:.3f}")
        return reconstruct_full(frame, ps), ps

    def record(slot, mode, trigger, feedback_bytes, shown, ps, truth_render, delta):
        believed_mask = world.render_mask(ps.believed)
        entry = LedgerEntry(
            slot=slot,
            mode=mode,
            forward_bytes=mode.forward_bytes,
            feedback_bytes=feedback_bytes,
            snr_db=float(forecast.snr_db[slot]),
            triggered_by=trigger,
        )
        trace.records.append(SlotRecord(
            ledger=entry,
            mse=mse(shown, truth_render.frame),
            psnr_db=psnr(shown, truth_render.frame),
            miou=miou(believed_mask, truth_render.mask),
            delta_exceed=delta,
        ))

    truth = world.scene_init(scenario, seed, counts)
    truth_render = world.render(truth)
    shown, ps = full_transmission(truth, truth_render, initial_state(scenario), 0)
    delta = delta_exceed(depth_cells(truth_render.depth), _coarse_depth(world.render_depth(ps.believed)))
    record(0, TxMode.FULL, "initial", 0, shown, ps, truth_render, delta)

    pending_feedback = False
    for slot in range(1, forecast.num_slots + 1):
        truth = world.scene_step(truth, guidance)
        truth_render = world.render(truth)
        predicted_frame, predicted_depth, ps = predict_step(ps, guidance, profile, rng.predictor)

        true_cells = depth_cells(truth_render.depth)
        feedback_bytes = 0
        if cfg.uses_feedback:
            payload = encode_depth(predicted_depth, slot=slot, seq=slot)
            received, _ = transmit_bytes(payload.data, link_snr(slot), link_cfg, rng.feedback)
            fed_back, _ = decode_depth_cells(received)
            feedback_bytes = DEPTH_BYTES
        else:
            fed_back = _coarse_depth(predicted_depth)
        delta = delta_exceed(true_cells, fed_back)
        triggered_now = cfg.uses_feedback and delta > cfg.sigma

        if cfg.feedback_delay_slots:
            feedback_requested, pending_feedback = pending_feedback, triggered_now
        else:
            feedback_requested = triggered_now

        scheduled = plan is not None and slot in plan
        if cfg.strategy == "fixed_interval":
            scheduled = scheduled or slot % cfg.interval == 0
        requested = merge_runtime(plan, feedback_requested, slot) or scheduled
        trigger = "schedule" if scheduled else "feedback" if feedback_requested else "none"

        decision = mode_select(float(forecast.snr_db[slot]), cfg, requested)
        if decision.infeasible:
            logger.warning(f"slot {slot}: {trigger} request deferred, SNR {forecast.snr_db[slot]:.2f} dB below every allowed threshold")

        if decision.mode == TxMode.FULL:
            shown, ps = full_transmission(truth, truth_render, ps, slot)
        elif decision.mode == TxMode.PART:
            payload = encode_mask(truth_render.mask)
            received, _ = transmit_bytes(payload.data, link_snr(slot), link_cfg, rng.forward)
            mask, corruption = decode_mask(received)
            shown, ps = repair(ps, mask, corruption)
        else:
            shown = predicted_frame

        logger.debug(f"slot {slot}: {decision.mode.value} ({trigger}), delta {delta:.3f}, snr {forecast.snr_db[slot]:.2f} dB")
        record(slot, decision.mode, trigger, feedback_bytes, shown, ps, truth_render, delta)

    totals = ledger_totals(trace)
    logger.info(f"session {scenario}/{cfg.strategy} seed {seed}: {totals['transmission_count']} transmissions, {totals['forward_bytes']} forward bytes")
    return trace
