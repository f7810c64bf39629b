"""Large-scale propagation for the two-BS mobility scenario.

COST 231 Hata path loss, thermal noise floor, per-position SNR and the
per-slot SNR forecast along a straight trajectory. Everything here is a pure
function of value inputs.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import ConfigError, DomainError

logger = logging.getLogger(__name__)


class RadioParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    carrier_mhz: float = Field(default=2000.0, ge=150.0, le=2000.0)
    tx_power_dbm: float = 10.0
    antenna_gain_dbi: float = Field(default=15.0, gt=0.0)
    bandwidth_hz: float = Field(default=2.0e7, gt=0.0)
    bs_height_m: float = Field(default=10.0, gt=0.0)
    ue_height_m: float = Field(default=1.5, gt=0.0)


class Position(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    x_m: float
    y_m: float

    @field_validator("x_m", "y_m")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("coordinates must be finite")
        return value

    def distance_to(self, other: "Position") -> float:
        return math.hypot(self.x_m - other.x_m, self.y_m - other.y_m)


class Trajectory(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    start: Position = Position(x_m=-100.0, y_m=50.0)
    end: Position = Position(x_m=100.0, y_m=50.0)
    num_slots: int = Field(default=20, ge=1)
    slot_seconds: float = Field(default=0.5, gt=0.0)
    # only used as predictor guidance; sampling follows num_slots
    speed_mps: float = Field(default=12.0, ge=0.0)

    def position_at(self, slot: int) -> Position:
        frac = slot / self.num_slots
        return Position(
            x_m=self.start.x_m + (self.end.x_m - self.start.x_m) * frac,
            y_m=self.start.y_m + (self.end.y_m - self.start.y_m) * frac,
        )


class BlockageEvent(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    start_slot: int = Field(ge=0)
    end_slot: int = Field(ge=0)
    extra_loss_db: float = Field(default=20.0, ge=0.0)

    @model_validator(mode="after")
    def _ordered(self) -> "BlockageEvent":
        if self.start_slot > self.end_slot:
            raise ValueError("start_slot must not exceed end_slot")
        return self

    def covers(self, slot: int) -> bool:
        return self.start_slot <= slot <= self.end_slot


@dataclass(frozen=True)
class SnrForecast:
    """Per-slot SNR (slots 0..num_slots) and the index of the serving BS."""

    snr_db: np.ndarray
    serving_bs: np.ndarray
    positions: Optional[List[Position]] = None

    def __post_init__(self):
        if len(self.snr_db) != len(self.serving_bs):
            raise DomainError("snr_db and serving_bs lengths differ")
        if not np.all(np.isfinite(self.snr_db)):
            raise DomainError("SNR forecast contains non-finite entries")

    @property
    def num_slots(self) -> int:
        return len(self.snr_db) - 1

    @classmethod
    def constant(cls, snr_db: float, num_slots: int) -> "SnrForecast":
        return cls(
            snr_db=np.full(num_slots + 1, float(snr_db)),
            serving_bs=np.zeros(num_slots + 1, dtype=int),
        )

    def min_slot(self) -> int:
        return int(np.argmin(self.snr_db))


def mobile_correction(ue_height_m: float) -> float:
    """Mobile station antenna correction a(h_r) in dB."""
    if ue_height_m <= 0:
        raise DomainError(f"UE height must be positive, got {ue_height_m}")
    return 3.2 * math.log10(11.75 * ue_height_m) ** 2 - 4.97


def path_loss_db(distance_m: float, radio: RadioParams = RadioParams()) -> float:
    """COST 231 Hata loss; the distance enters the log in km."""
    if distance_m <= 0:
        raise DomainError(f"distance must be positive, got {distance_m}")
    log_ht = math.log10(radio.bs_height_m)
    return (
        46.3
        + 33.9 * math.log10(radio.carrier_mhz)
        - 13.82 * log_ht
        - mobile_correction(radio.ue_height_m)
        + (44.9 - 6.55 * log_ht) * math.log10(distance_m / 1000.0)
    )


def noise_floor_dbm(bandwidth_hz: float) -> float:
    if bandwidth_hz <= 0:
        raise DomainError(f"bandwidth must be positive, got {bandwidth_hz}")
    return -174.0 + 10.0 * math.log10(bandwidth_hz)


def snr_db_at(
    pos: Position,
    bs: Position,
    radio: RadioParams = RadioParams(),
    blockage_loss_db: float = 0.0,
) -> float:
    """Received power minus noise floor, both in dBm."""
    distance = pos.distance_to(bs)
    if distance == 0:
        raise DomainError("UE and BS positions coincide")
    received_dbm = radio.tx_power_dbm + radio.antenna_gain_dbi - path_loss_db(distance, radio) - blockage_loss_db
    return received_dbm - noise_floor_dbm(radio.bandwidth_hz)


def blockage_loss_at(slot: int, blockages: Sequence[BlockageEvent]) -> float:
    return sum(b.extra_loss_db for b in blockages if b.covers(slot))


def snr_trace(
    traj: Trajectory,
    bss: Sequence[Position],
    radio: RadioParams = RadioParams(),
    blockages: Sequence[BlockageEvent] = (),
) -> SnrForecast:
    """Serving-BS SNR for slots 0..num_slots; ties go to the lower BS index."""
    if not bss:
        raise ConfigError("at least one base station is required")

    snr = np.empty(traj.num_slots + 1)
    serving = np.empty(traj.num_slots + 1, dtype=int)
    positions = []
    for slot in range(traj.num_slots + 1):
        pos = traj.position_at(slot)
        loss = blockage_loss_at(slot, blockages)
        per_bs = np.array([snr_db_at(pos, bs, radio, loss) for bs in bss])
        best = int(np.argmax(per_bs))
        serving[slot] = best
        snr[slot] = per_bs[best]
        positions.append(pos)

    handovers = int(np.count_nonzero(np.diff(serving)))
    logger.debug(f"SNR trace: {traj.num_slots + 1} slots, min {snr.min():.2f} dB at slot {int(np.argmin(snr))}, {handovers} handover(s)")
    return SnrForecast(snr_db=snr, serving_bs=serving, positions=positions)
