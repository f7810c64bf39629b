"""Active transmission planner over an SNR forecast and a degradation reference.

Cost model: each decision slot t = 1..T adds L[gap] where gap counts slots
since the last re-seed, and a transmission adds L[0] plus the cost of the
cheapest feasible mode (the infeasible penalty when no mode is feasible).
Costs are summed left to right in slot order in every code path, so equal
plans score bit-identically under the dynamic program, the exhaustive
oracle and `evaluate_plan`.
"""
import logging
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .channel import SnrForecast
from .codec import TxMode
from .errors import ConfigError, DomainError

logger = logging.getLogger(__name__)

ORACLE_MAX_SLOTS = 22
# reference value at the horizon; puts two re-seeds around a mid-run blockage on a 20-slot drive
DEFAULT_QUALITY_WEIGHT = 0.4
_ORACLE_CHUNK = 1 << 16


class PlannerParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    lambda_full: float = 4.0
    lambda_part: float = 1.0
    theta_full_db: float = 3.0
    theta_part_db: float = -2.0
    infeasible_penalty: float = Field(default=1e6, gt=0.0)

    @model_validator(mode="after")
    def _ordering(self) -> "PlannerParams":
        if not self.lambda_full > self.lambda_part > 0:
            raise ValueError("lambda_full > lambda_part > 0 is required")
        if self.theta_full_db < self.theta_part_db:
            raise ValueError("theta_full_db must not be below theta_part_db")
        return self


class PlanEntry(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    slot: int
    mode: TxMode


class SchedulerPlan(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    entries: Tuple[PlanEntry, ...] = ()
    objective_value: float = 0.0
    infeasible_slots: Tuple[int, ...] = ()
    params: Optional[PlannerParams] = None

    @model_validator(mode="after")
    def _well_formed(self) -> "SchedulerPlan":
        slots = [e.slot for e in self.entries]
        if any(s <= 0 for s in slots):
            raise ValueError("plans never contain slot 0; the initial Full is implicit")
        if any(b <= a for a, b in zip(slots, slots[1:])):
            raise ValueError("plan slots must be strictly increasing")
        if any(e.mode == TxMode.PREDICT for e in self.entries):
            raise ValueError("plan entries must be Full or Part")
        return self

    @property
    def slots(self) -> Tuple[int, ...]:
        return tuple(e.slot for e in self.entries)

    @property
    def infeasible(self) -> bool:
        return bool(self.infeasible_slots)

    def __contains__(self, slot: int) -> bool:
        return slot in self.slots

    def describe(self) -> str:
        if not self.entries:
            lines = ["no planned transmissions"]
        else:
            lines = [f"slot {e.slot:3d}: {e.mode.value}" for e in self.entries]
        lines.append(f"objective {self.objective_value:.6f}")
        if self.infeasible:
            lines.append(f"infeasible slots: {', '.join(map(str, self.infeasible_slots))}")
        return "\n".join(lines)

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SchedulerPlan":
        try:
            return cls.model_validate_json(text)
        except ValidationError as e:
            raise ConfigError(f"invalid plan: {e}") from e


def slot_mode(snr_db: float, params: PlannerParams) -> Tuple[float, TxMode, bool]:
    """Cheapest feasible mode at one slot: (cost, mode, feasible); Full wins cost ties."""
    options = []
    if snr_db >= params.theta_full_db:
        options.append((params.lambda_full, 0, TxMode.FULL))
    if snr_db >= params.theta_part_db:
        options.append((params.lambda_part, 1, TxMode.PART))
    if not options:
        return params.infeasible_penalty, TxMode.PART, False
    cost, _, mode = min(options)
    return cost, mode, True


def _tables(snr: SnrForecast, L: Sequence[float], params: PlannerParams):
    T = snr.num_slots
    L = np.asarray(L, dtype=float)
    if T > 0 and len(L) <= T:
        raise DomainError(f"degradation reference needs at least {T + 1} entries, got {len(L)}")
    tx_value = [0.0] * (T + 1)
    modes = [TxMode.PREDICT] * (T + 1)
    infeasible = []
    for t in range(1, T + 1):
        cost, mode, feasible = slot_mode(float(snr.snr_db[t]), params)
        tx_value[t] = float(L[0]) + cost
        modes[t] = mode
        if not feasible:
            infeasible.append(t)
    return L, tx_value, modes, tuple(infeasible)


def _build(slots: Iterable[int], objective: float, modes, infeasible, params) -> SchedulerPlan:
    return SchedulerPlan(
        entries=tuple(PlanEntry(slot=t, mode=modes[t]) for t in slots),
        objective_value=float(objective),
        infeasible_slots=infeasible,
        params=params,
    )


def evaluate_plan(slots: Iterable[int], snr: SnrForecast, L: Sequence[float], params: PlannerParams = PlannerParams()) -> float:
    L, tx_value, _, _ = _tables(snr, L, params)
    chosen = set(slots)
    total = 0.0
    gap = 0
    for t in range(1, snr.num_slots + 1):
        if t in chosen:
            gap = 0
            total = total + tx_value[t]
        else:
            gap += 1
            total = total + float(L[gap])
    return total


def plan_active(snr: SnrForecast, L: Sequence[float], params: PlannerParams = PlannerParams()) -> SchedulerPlan:
    """Exact dynamic program over the gap since the last re-seed.

    Ties go to fewer transmissions, then to the lexicographically earlier slot list.
    """
    L, tx_value, modes, infeasible = _tables(snr, L, params)
    # gap -> (cost, transmissions, slots)
    best = {0: (0.0, 0, ())}
    for t in range(1, snr.num_slots + 1):
        step = {}
        for gap, (cost, count, slots) in best.items():
            for key, candidate in (
                (gap + 1, (cost + float(L[gap + 1]), count, slots)),
                (0, (cost + tx_value[t], count + 1, slots + (t,))),
            ):
                if key not in step or candidate < step[key]:
                    step[key] = candidate
        best = step

    objective, count, slots = min(best.values())
    plan = _build(slots, objective, modes, infeasible, params)
    logger.info(f"active plan: {count} transmission(s) at {list(slots)}, objective {objective:.6f}, {len(infeasible)} infeasible slot(s)")
    return plan


def exhaustive_oracle(snr: SnrForecast, L: Sequence[float], params: PlannerParams = PlannerParams()) -> SchedulerPlan:
    """Enumerate every transmit/skip pattern (2^T); the mode at a transmitting slot is its cheapest feasible one."""
    T = snr.num_slots
    if T > ORACLE_MAX_SLOTS:
        raise DomainError(f"exhaustive search is limited to {ORACLE_MAX_SLOTS} slots, got {T}")
    L, tx_value, modes, infeasible = _tables(snr, L, params)
    if T == 0:
        return _build((), 0.0, modes, infeasible, params)

    best_cost = np.inf
    candidates: List[int] = []
    for start in range(0, 1 << T, _ORACLE_CHUNK):
        patterns = np.arange(start, min(start + _ORACLE_CHUNK, 1 << T), dtype=np.int64)
        total = np.zeros(patterns.size)
        gap = np.zeros(patterns.size, dtype=np.int64)
        for t in range(1, T + 1):
            sends = ((patterns >> (t - 1)) & 1).astype(bool)
            gap = np.where(sends, 0, gap + 1)
            total = total + np.where(sends, tx_value[t], L[gap])
        low = total.min()
        if low < best_cost:
            best_cost = low
            candidates = list(patterns[total == low])
        elif low == best_cost:
            candidates.extend(patterns[total == low])

    def slots_of(pattern: int) -> Tuple[int, ...]:
        return tuple(t for t in range(1, T + 1) if (int(pattern) >> (t - 1)) & 1)

    chosen = min((slots_of(p) for p in candidates), key=lambda s: (len(s), s))
    return _build(chosen, float(best_cost), modes, infeasible, params)


def fixed_interval_plan(snr: SnrForecast, L: Sequence[float], params: PlannerParams = PlannerParams(), k: int = 6) -> SchedulerPlan:
    """Every k-th slot, scored under the same cost model."""
    if k < 1:
        raise DomainError(f"interval must be at least 1, got {k}")
    _, _, modes, infeasible = _tables(snr, L, params)
    slots = range(k, snr.num_slots + 1, k)
    return _build(slots, evaluate_plan(slots, snr, L, params), modes, infeasible, params)


def normalize_reference(L: Sequence[float], quality_weight: float = DEFAULT_QUALITY_WEIGHT) -> np.ndarray:
    """Scale L so its last entry equals quality_weight; an all-zero L stays zero."""
    L = np.asarray(L, dtype=float)
    if quality_weight <= 0:
        raise DomainError(f"quality_weight must be positive, got {quality_weight}")
    if L[-1] <= 0:
        return np.zeros_like(L)
    return L * (quality_weight / L[-1])


def merge_runtime(plan: Optional[SchedulerPlan], feedback_requested: bool, slot: int) -> bool:
    return (plan is not None and slot in plan) or bool(feedback_requested)
