"""World-model surrogate on the receiver side.

The receiver keeps a believed scene, seeded from decoded full transmissions
and extrapolated slot by slot with the known motion script plus accumulating
noise. Partial transmissions repair the believed scene from a decoded mask.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import ndimage
from sklearn.isotonic import IsotonicRegression

from . import world
from .codec import (
    IMAGE_COLS,
    IMAGE_LEVELS,
    IMAGE_ROWS,
    MASK_COLS,
    MASK_ROWS,
    SceneHints,
    cell_majority,
    cell_means,
    upsample,
)
from .errors import DomainError, PayloadError
from .metrics import mse
from .world import (
    CROSSROAD_YAW_WINDOW,
    FOCAL_PX,
    HEIGHT,
    MAX_OBJECTS,
    NUM_LABELS,
    WIDTH,
    Camera,
    Guidance,
    Scenario,
    SceneCounts,
    SceneObject,
    SceneState,
)

logger = logging.getLogger(__name__)

QUANT_FLOOR_M = 0.25
REPAIR_GATE_PX = 30.0
REPAIR_CUTOFF = 0.5
MIN_SHIFT_PX = 2.0
NOISE_DRAWS = 2 * MAX_OBJECTS + 1
REFERENCE_STREAM = 7

_CELL_PX = HEIGHT // MASK_ROWS
_NEIGHBOURHOOD = np.ones((3, 3), dtype=int)


class DegradationProfile(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    scenario: Scenario = "basic"
    pos_noise_std_m_per_slot: float = Field(default=0.15, ge=0.0)
    heading_noise_rad_per_slot: float = Field(default=0.0, ge=0.0)
    velocity_bias_frac: float = Field(default=0.05, ge=0.0)
    yaw_window: Optional[Tuple[int, int]] = None

    @classmethod
    def zero(cls, scenario: str = "basic") -> "DegradationProfile":
        return cls(scenario=scenario, pos_noise_std_m_per_slot=0.0, velocity_bias_frac=0.0)


def profile_for(scenario: str) -> DegradationProfile:
    if scenario == "basic":
        return DegradationProfile(scenario="basic", pos_noise_std_m_per_slot=0.15)
    if scenario == "busy":
        return DegradationProfile(scenario="busy", pos_noise_std_m_per_slot=0.40)
    if scenario == "crossroad":
        return DegradationProfile(
            scenario="crossroad",
            pos_noise_std_m_per_slot=0.40,
            heading_noise_rad_per_slot=0.02,
            yaw_window=CROSSROAD_YAW_WINDOW,
        )
    raise DomainError(f"unknown scenario '{scenario}'")


@dataclass(frozen=True)
class PredictorState:
    believed: SceneState
    slots_since_seed: int = 0
    seed_quality: float = 0.0
    drift_m: float = QUANT_FLOOR_M
    seed_failed: bool = False

    def __post_init__(self):
        if self.slots_since_seed < 0:
            raise DomainError("slots_since_seed must be non-negative")
        if not 0.0 <= self.seed_quality <= 1.0:
            raise DomainError(f"seed_quality must lie in [0, 1], got {self.seed_quality}")


def initial_state(scenario: Scenario) -> PredictorState:
    """Empty believed scene held before the first transmission arrives."""
    return PredictorState(believed=SceneState(camera=Camera(), objects=(), scenario=scenario))


def _pick(value: Optional[float], fallback: Optional[float]) -> Optional[float]:
    return value if value is not None else fallback


def seed_from_decoded(
    hints: SceneHints,
    corruption: float,
    prior: PredictorState,
    slot: Optional[int] = None,
) -> PredictorState:
    """Believed scene from decoded hints; missing or out-of-range fields keep the prior values."""
    if corruption >= 1.0 or not hints.usable:
        logger.warning(f"seed at slot {prior.believed.slot} fully corrupted, keeping the prior scene")
        return replace(prior, seed_quality=0.0, seed_failed=True)

    cam = prior.believed.camera
    camera = Camera(
        x=_pick(hints.camera.x, cam.x),
        y=_pick(hints.camera.y, cam.y),
        heading=_pick(hints.camera.heading, cam.heading),
    )

    objects = {}
    for hint in hints.objects:
        if hint.id in objects:
            continue
        before = prior.believed.object_by_id(hint.id)
        fields = {}
        for name in ("x", "y", "w", "h", "vx", "vy"):
            fields[name] = _pick(getattr(hint, name), getattr(before, name) if before else None)
        if any(v is None for v in fields.values()):
            continue
        objects[hint.id] = SceneObject(id=hint.id, cls=hint.cls, **fields)

    # records that failed may have hidden objects the prior still knows
    if hints.failed_checks:
        for obj in prior.believed.objects:
            objects.setdefault(obj.id, obj)

    believed = SceneState(
        camera=camera,
        objects=tuple(objects[k] for k in sorted(objects)),
        scenario=prior.believed.scenario,
        slot=prior.believed.slot if slot is None else slot,
    )
    return PredictorState(
        believed=believed,
        slots_since_seed=0,
        seed_quality=float(np.clip(1.0 - corruption, 0.0, 1.0)),
        drift_m=QUANT_FLOOR_M,
        seed_failed=False,
    )


def predict_step(
    ps: PredictorState,
    guidance: Guidance,
    profile: DegradationProfile,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray, PredictorState]:
    """Advance the believed scene by one slot and render it."""
    noise = rng.standard_normal(NOISE_DRAWS)
    state = ps.believed
    amplify = 2.0 - ps.seed_quality
    std = profile.pos_noise_std_m_per_slot * amplify

    moved = world.advance_objects(state.objects, guidance.slot_seconds, 1.0 + profile.velocity_bias_frac)
    objects = tuple(
        replace(o, x=o.x + std * noise[2 * o.id], y=o.y + std * noise[2 * o.id + 1])
        for o in moved
    )

    camera = world.advance_camera(state.camera, guidance, state.slot)
    window = profile.yaw_window if profile.yaw_window is not None else guidance.yaw_window
    if window is not None and window[0] <= state.slot < window[1]:
        camera = replace(camera, heading=camera.heading + profile.heading_noise_rad_per_slot * amplify * noise[-1])

    believed = SceneState(camera=camera, objects=objects, scenario=state.scenario, slot=state.slot + 1)
    out = world.render(believed)
    next_state = replace(
        ps,
        believed=believed,
        slots_since_seed=ps.slots_since_seed + 1,
        drift_m=math.hypot(ps.drift_m, std),
    )
    return out.frame, out.depth, next_state


def _majority_clean(cells: np.ndarray) -> np.ndarray:
    counts = np.stack([
        ndimage.convolve((cells == label).astype(int), _NEIGHBOURHOOD, mode="nearest")
        for label in range(NUM_LABELS)
    ])
    own = np.take_along_axis(counts, cells[None].astype(np.int64), axis=0)[0]
    return np.where(own == counts.max(axis=0), cells, counts.argmax(axis=0)).astype(np.uint8)


def _mask_cells(mask: np.ndarray) -> np.ndarray:
    return _majority_clean(cell_majority(np.asarray(mask, dtype=np.int64), MASK_ROWS, MASK_COLS))


def _dominant(labels: np.ndarray) -> int:
    """Most frequent non-zero component index, 0 when there is none."""
    labels = labels[labels > 0]
    if labels.size == 0:
        return 0
    return int(np.bincount(labels).argmax())


def _match_shift(
    obj_cells: np.ndarray,
    predicted: np.ndarray,
    observed: np.ndarray,
    n_observed: int,
) -> Optional[float]:
    """Column shift in pixels between the object's predicted component and its observed match."""
    component = _dominant(predicted[obj_cells])
    if component == 0 or n_observed == 0:
        return None
    region = predicted == component
    pred_row, pred_col = ndimage.center_of_mass(region)
    pred_area = int(region.sum())

    index = np.arange(1, n_observed + 1)
    areas = ndimage.sum_labels(np.ones_like(observed), observed, index)
    centroids = ndimage.center_of_mass(np.ones_like(observed), observed, index)

    overlap = np.bincount(observed[region], minlength=n_observed + 1)[1:]
    if overlap.max() > 0:
        target = int(overlap.argmax())
    else:
        distances = [
            math.hypot(r - pred_row, c - pred_col) if area >= 2 else math.inf
            for (r, c), area in zip(centroids, areas)
        ]
        target = int(np.argmin(distances))
        if math.isinf(distances[target]):
            return None

    obs_row, obs_col = centroids[target]
    if math.hypot(obs_row - pred_row, obs_col - pred_col) * _CELL_PX > REPAIR_GATE_PX:
        return None
    if not 0.5 <= areas[target] / pred_area <= 2.0:
        return None
    return (obs_col - pred_col) * _CELL_PX


def repair(
    predicted: PredictorState,
    decoded_mask: np.ndarray,
    mask_corruption: float,
) -> Tuple[np.ndarray, PredictorState]:
    """Re-align believed objects laterally onto the mask components of their class."""
    decoded_mask = np.asarray(decoded_mask)
    if decoded_mask.shape != (HEIGHT, WIDTH):
        raise PayloadError(f"mask must be {HEIGHT}x{WIDTH}, got {decoded_mask.shape}")
    before = world.render(predicted.believed)
    if mask_corruption >= REPAIR_CUTOFF:
        return before.frame, predicted

    strength = 1.0 - mask_corruption
    predicted_cells = _mask_cells(before.mask)
    observed_cells = _mask_cells(decoded_mask)
    components = {}
    for label in range(1, NUM_LABELS):
        predicted_lab, _ = ndimage.label(predicted_cells == label)
        observed_lab, n_observed = ndimage.label(observed_cells == label)
        components[label] = (predicted_lab, observed_lab, n_observed)

    state = predicted.believed
    camera = state.camera
    sin_h, cos_h = math.sin(camera.heading), math.cos(camera.heading)
    objects = []
    realigned = 0
    for obj in state.objects:
        occupied = before.ids == obj.id
        if not occupied.any():
            objects.append(obj)
            continue
        obj_cells = occupied.reshape(MASK_ROWS, _CELL_PX, MASK_COLS, _CELL_PX).any(axis=(1, 3))
        shift = _match_shift(obj_cells, *components[obj.label])
        if shift is None:
            objects.append(obj)
            continue
        realigned += 1
        # sub-cell differences are quantisation noise of the mask grid
        if abs(shift) < MIN_SHIFT_PX:
            objects.append(obj)
            continue
        forward, _ = world.to_camera(obj, camera)
        lateral = -strength * shift * forward / FOCAL_PX
        objects.append(replace(obj, x=obj.x - sin_h * lateral, y=obj.y + cos_h * lateral))

    if not realigned:
        return before.frame, predicted

    logger.debug(f"repair at slot {state.slot}: {realigned}/{len(state.objects)} objects matched, strength {strength:.2f}")
    believed = replace(state, objects=tuple(objects))
    repaired = replace(
        predicted,
        believed=believed,
        slots_since_seed=0,
        seed_quality=strength,
        drift_m=QUANT_FLOOR_M,
    )
    return world.render(believed).frame, repaired


def reconstruct_full(decoded_frame: np.ndarray, ps: PredictorState) -> np.ndarray:
    """Render of the seeded scene where it agrees with the decoded image, decoded image elsewhere."""
    rendered = world.render(ps.believed).frame
    agree = np.abs(
        cell_means(rendered, IMAGE_ROWS, IMAGE_COLS) - cell_means(decoded_frame, IMAGE_ROWS, IMAGE_COLS)
    ) <= 2.0 / IMAGE_LEVELS
    return np.where(upsample(agree), rendered, decoded_frame)


def degradation_reference(
    scenario: Scenario,
    horizon: int,
    n_seeds: int,
    profile: Optional[DegradationProfile] = None,
    start_slot: int = 0,
    seeds: Optional[Iterable[int]] = None,
    counts: Optional[SceneCounts] = None,
    guidance: Optional[Guidance] = None,
) -> np.ndarray:
    """Mean frame MSE of prediction-only operation at horizons 0..T from a perfect seed, isotonic-smoothed."""
    if horizon < 1:
        raise DomainError(f"horizon must be at least 1, got {horizon}")
    seeds = list(range(n_seeds)) if seeds is None else list(seeds)
    if not seeds:
        raise DomainError("at least one seed is required")
    profile = profile or profile_for(scenario)
    guidance = guidance or world.guidance_for(scenario)

    losses = np.zeros((len(seeds), horizon + 1))
    for row, seed in enumerate(seeds):
        truth = world.scene_init(scenario, seed, counts)
        for _ in range(start_slot):
            truth = world.scene_step(truth, guidance)
        ps = PredictorState(believed=truth, seed_quality=1.0)
        rng = np.random.default_rng(np.random.SeedSequence([seed, REFERENCE_STREAM]))
        for k in range(1, horizon + 1):
            truth = world.scene_step(truth, guidance)
            frame, _, ps = predict_step(ps, guidance, profile, rng)
            losses[row, k] = mse(frame, world.render_frame(truth))

    raw = np.sort(losses, axis=0).mean(axis=0)
    smoothed = IsotonicRegression(increasing=True).fit_transform(np.arange(horizon + 1), raw)
    logger.info(f"degradation reference {scenario}: T={horizon}, {len(seeds)} seeds, L[T]={smoothed[-1]:.5f}")
    return np.asarray(smoothed, dtype=float)
