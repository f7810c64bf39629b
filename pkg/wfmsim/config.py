"""Experiment configuration: flat `key = value` files with dotted sections.

The grammar is documented in docs/config_grammar.md. Parsing turns the file
into nested dicts, pydantic validates them (unknown keys are rejected) and
`serialize_config` writes the canonical sorted form back out.
"""
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import world
from .world import Guidance, Scenario, SceneCounts
from .channel import BlockageEvent, Position, RadioParams, SnrForecast, Trajectory, snr_trace
from .errors import ConfigError
from .phy import LinkConfig
from .predictor import DegradationProfile, profile_for
from .protocol import SessionConfig
from .scheduler import DEFAULT_QUALITY_WEIGHT, PlannerParams
from .settings import settings

logger = logging.getLogger(__name__)


class ChannelSection(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    base_stations: Tuple[Position, ...] = (Position(x_m=-250.0, y_m=0.0), Position(x_m=250.0, y_m=0.0))
    blockages: Tuple[BlockageEvent, ...] = ()
    fixed_snr_db: Optional[float] = None
    forecast_blockages: bool = True


class WorldSection(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    vehicles: Optional[int] = Field(default=None, ge=0)
    buildings: Optional[int] = Field(default=None, ge=0)
    road_markings: int = Field(default=0, ge=0)
    yaw_window: Optional[Tuple[int, int]] = None


class PredictorSection(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    scenario: Optional[Scenario] = None
    pos_noise_std: Optional[float] = Field(default=None, ge=0.0)
    velocity_bias: Optional[float] = Field(default=None, ge=0.0)
    heading_noise: Optional[float] = Field(default=None, ge=0.0)
    yaw_window: Optional[Tuple[int, int]] = None


class SchedulerSection(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    lambda_full: float = 4.0
    lambda_part: float = 1.0
    infeasible_penalty: float = Field(default=1e6, gt=0.0)
    quality_weight: float = Field(default=DEFAULT_QUALITY_WEIGHT, gt=0.0)
    reference_seeds: Optional[int] = Field(default=None, ge=1)


class ScenarioConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    scenario: Scenario = "basic"
    seeds: Tuple[int, ...] = (0,)
    output_dir: Optional[str] = None
    radio: RadioParams = RadioParams()
    channel: ChannelSection = ChannelSection()
    trajectory: Trajectory = Trajectory()
    link: LinkConfig = LinkConfig()
    protocol: SessionConfig = SessionConfig()
    predictor: PredictorSection = PredictorSection()
    world: WorldSection = WorldSection()
    scheduler: SchedulerSection = SchedulerSection()

    @field_validator("seeds")
    @classmethod
    def _seeds(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if not value:
            raise ValueError("at least one seed is required")
        if any(s < 0 for s in value):
            raise ValueError("seeds must be non-negative")
        return value

    @model_validator(mode="after")
    def _consistent(self) -> "ScenarioConfig":
        if self.counts().total > world.MAX_OBJECTS:
            raise ValueError(f"scene would hold more than {world.MAX_OBJECTS} objects")
        if self.channel.fixed_snr_db is None and not self.channel.base_stations:
            raise ValueError("channel.base_stations must not be empty without channel.fixed_snr_db")
        return self

    @property
    def num_slots(self) -> int:
        return self.trajectory.num_slots

    def counts(self) -> SceneCounts:
        default = world.default_counts(self.scenario)
        return SceneCounts(
            vehicles=default.vehicles if self.world.vehicles is None else self.world.vehicles,
            buildings=default.buildings if self.world.buildings is None else self.world.buildings,
            road_markings=self.world.road_markings,
        )

    def guidance(self) -> Guidance:
        default = world.guidance_for(self.scenario)
        return Guidance(
            speed_mps=self.trajectory.speed_mps,
            slot_seconds=self.trajectory.slot_seconds,
            yaw_window=self.world.yaw_window or default.yaw_window,
            yaw_total_rad=default.yaw_total_rad,
        )

    def profile(self) -> DegradationProfile:
        section = self.predictor
        base = profile_for(section.scenario or self.scenario)
        return base.model_copy(update={
            k: v for k, v in {
                "pos_noise_std_m_per_slot": section.pos_noise_std,
                "velocity_bias_frac": section.velocity_bias,
                "heading_noise_rad_per_slot": section.heading_noise,
                "yaw_window": section.yaw_window,
            }.items() if v is not None
        })

    def forecast(self, fixed_snr_db: Optional[float] = None) -> SnrForecast:
        """Runtime SNR per slot; an explicit fixed SNR overrides the geometry."""
        snr = fixed_snr_db if fixed_snr_db is not None else self.channel.fixed_snr_db
        if snr is not None:
            return SnrForecast.constant(snr, self.num_slots)
        return snr_trace(self.trajectory, self.channel.base_stations, self.radio, self.channel.blockages)

    def planner_forecast(self, fixed_snr_db: Optional[float] = None) -> SnrForecast:
        """What the planner is told; blockages are left out unless they are forecast."""
        if fixed_snr_db is not None or self.channel.fixed_snr_db is not None or self.channel.forecast_blockages:
            return self.forecast(fixed_snr_db)
        return snr_trace(self.trajectory, self.channel.base_stations, self.radio, ())

    def planner_params(self) -> PlannerParams:
        return PlannerParams(
            lambda_full=self.scheduler.lambda_full,
            lambda_part=self.scheduler.lambda_part,
            theta_full_db=self.protocol.theta_full_db,
            theta_part_db=self.protocol.theta_part_db,
            infeasible_penalty=self.scheduler.infeasible_penalty,
        )

    @property
    def reference_seeds(self) -> int:
        return self.scheduler.reference_seeds or settings.reference_seeds


# ----- value grammar -----

def _floats(text: str, count: int) -> List[float]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != count:
        raise ValueError(f"expected {count} comma-separated numbers, got '{text}'")
    return [float(p) for p in parts]


def _position(text: str) -> Dict[str, float]:
    x, y = _floats(text, 2)
    return {"x_m": x, "y_m": y}


def _items(text: str) -> List[str]:
    if text.lower() in ("", "none"):
        return []
    return [item.strip() for item in text.split(";") if item.strip()]


def _positions(text: str) -> List[Dict[str, float]]:
    return [_position(item) for item in _items(text)]


def _range(text: str) -> Tuple[int, int]:
    start, sep, end = text.partition("-")
    if not sep:
        raise ValueError(f"expected a slot range 'a-b', got '{text}'")
    return int(start), int(end)


def _window(text: str) -> Optional[Tuple[int, int]]:
    return None if text.lower() == "none" else _range(text)


def _blockages(text: str) -> List[Dict[str, Any]]:
    events = []
    for item in _items(text):
        span, _, loss = item.partition(":")
        start, end = _range(span.strip())
        event = {"start_slot": start, "end_slot": end}
        if loss.strip():
            event["extra_loss_db"] = float(loss)
        events.append(event)
    return events


def _seeds(text: str) -> List[int]:
    return [int(p) for p in text.split(",") if p.strip()]


_PARSERS: Dict[str, Callable[[str], Any]] = {
    "seeds": _seeds,
    "channel.base_stations": _positions,
    "channel.blockages": _blockages,
    "trajectory.start": _position,
    "trajectory.end": _position,
    "world.yaw_window": _window,
    "predictor.yaw_window": _window,
}


def _convert(key: str, text: str) -> Any:
    parser = _PARSERS.get(key)
    if parser is not None:
        return parser(text)
    if text.lower() == "none":
        return None
    return text


def validate_config(data: Dict[str, Any]) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(part) for part in first["loc"]) or "<config>"
        raise ConfigError(f"{where}: {first['msg']}") from e


def parse_config(text: str, source: str = "<config>") -> ScenarioConfig:
    data: Dict[str, Any] = {}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        parts = key.split(".")
        if not sep or not key or len(parts) > 2 or not all(parts):
            raise ConfigError(f"{source}:{lineno}: expected 'key = value' or 'section.key = value'")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key '{key}'")
        seen.add(key)
        try:
            converted = _convert(key, value)
        except ValueError as e:
            raise ConfigError(f"{source}:{lineno}: {key}: {e}") from e

        if len(parts) == 2:
            section = data.setdefault(parts[0], {})
            if not isinstance(section, dict):
                raise ConfigError(f"{source}:{lineno}: '{parts[0]}' is a value, not a section")
            section[parts[1]] = converted
        else:
            if isinstance(data.get(key), dict):
                raise ConfigError(f"{source}:{lineno}: '{key}' is a section, not a value")
            data[key] = converted
    return validate_config(data)


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    cfg = parse_config(text, source=str(path))
    logger.info(f"loaded config {path}: scenario {cfg.scenario}, strategy {cfg.protocol.strategy}, {len(cfg.seeds)} seed(s)")
    return cfg


# ----- canonical form -----

def _fmt(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _fmt_position(p: Dict[str, float]) -> str:
    return f"{_fmt(float(p['x_m']))},{_fmt(float(p['y_m']))}"


def _fmt_window(w) -> str:
    return "none" if w is None else f"{w[0]}-{w[1]}"


_FORMATTERS: Dict[str, Callable[[Any], str]] = {
    "seeds": lambda v: ",".join(str(s) for s in v),
    "channel.base_stations": lambda v: "; ".join(_fmt_position(p) for p in v) or "none",
    "channel.blockages": lambda v: "; ".join(
        f"{b['start_slot']}-{b['end_slot']}:{_fmt(float(b['extra_loss_db']))}" for b in v
    ) or "none",
    "trajectory.start": _fmt_position,
    "trajectory.end": _fmt_position,
    "world.yaw_window": _fmt_window,
    "predictor.yaw_window": _fmt_window,
}


def serialize_config(cfg: ScenarioConfig) -> str:
    """Canonical text form: every key, sorted; parse(serialize(c)) == c."""
    lines = []
    for name, value in cfg.model_dump().items():
        if isinstance(value, dict):
            for key, inner in value.items():
                dotted = f"{name}.{key}"
                lines.append((dotted, _FORMATTERS.get(dotted, _fmt)(inner)))
        else:
            lines.append((name, _FORMATTERS.get(name, _fmt)(value)))
    return "".join(f"{key} = {text}\n" for key, text in sorted(lines))
