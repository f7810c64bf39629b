"""Synthetic ground truth: a box world seen by a forward-moving pinhole camera.

Frames, depth maps and segmentation masks are rendered together from one
z-ordered pass, so a pixel's shade, depth and label always come from the same
front-most object. Background is the horizon gradient at the far plane.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, Literal, NamedTuple, Optional, Tuple

import numpy as np

from .errors import DomainError

logger = logging.getLogger(__name__)

WIDTH = 256
HEIGHT = 128
D_MIN = 1.0
D_MAX = 100.0
FOCAL_PX = 128.0
CENTER_COL = WIDTH / 2.0
HORIZON_ROW = HEIGHT / 2.0
CAMERA_HEIGHT_M = 1.5
MAX_OBJECTS = 16

Scenario = Literal["basic", "busy", "crossroad"]
ObjectClass = Literal["vehicle", "building", "road_marking"]

LABELS: Dict[str, int] = {"vehicle": 1, "building": 2, "road_marking": 3}
NUM_LABELS = 4
_BASE_SHADE = {"vehicle": 0.15, "building": 0.5, "road_marking": 0.85}

# vehicles, buildings per scenario; road markings default to none
SCENARIO_COUNTS: Dict[str, Tuple[int, int]] = {
    "basic": (3, 4),
    "busy": (8, 4),
    "crossroad": (4, 4),
}
CROSSROAD_YAW_WINDOW = (6, 12)


def _background() -> np.ndarray:
    rows = np.arange(HEIGHT, dtype=float)
    sky = 0.9 - 0.25 * rows / HORIZON_ROW
    ground = 0.45 - 0.15 * (rows - HORIZON_ROW) / (HEIGHT - HORIZON_ROW)
    column = np.where(rows < HORIZON_ROW, sky, ground)
    image = np.repeat(column[:, None], WIDTH, axis=1)
    image.flags.writeable = False
    return image


BACKGROUND = _background()


@dataclass(frozen=True)
class SceneObject:
    id: int
    cls: ObjectClass
    x: float
    y: float
    w: float
    h: float
    vx: float = 0.0
    vy: float = 0.0

    @property
    def label(self) -> int:
        return LABELS[self.cls]


@dataclass(frozen=True)
class Camera:
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0


@dataclass(frozen=True)
class SceneState:
    camera: Camera
    objects: Tuple[SceneObject, ...]
    scenario: Scenario
    slot: int = 0

    def __post_init__(self):
        if len(self.objects) > MAX_OBJECTS:
            raise DomainError(f"at most {MAX_OBJECTS} objects per scene, got {len(self.objects)}")
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise DomainError(f"object ids must be unique: {ids}")
        if any(o.w <= 0 or o.h <= 0 for o in self.objects):
            raise DomainError("object sizes must be positive")

    def object_by_id(self, object_id: int) -> Optional[SceneObject]:
        for obj in self.objects:
            if obj.id == object_id:
                return obj
        return None


@dataclass(frozen=True)
class SceneCounts:
    vehicles: int
    buildings: int
    road_markings: int = 0

    @property
    def total(self) -> int:
        return self.vehicles + self.buildings + self.road_markings


@dataclass(frozen=True)
class Guidance:
    """Known motion script: forward speed and the scripted yaw of the camera."""

    speed_mps: float = 12.0
    slot_seconds: float = 0.5
    yaw_window: Optional[Tuple[int, int]] = None
    yaw_total_rad: float = math.pi / 2.0

    @property
    def step_m(self) -> float:
        return self.speed_mps * self.slot_seconds

    def in_yaw_window(self, slot: int) -> bool:
        return self.yaw_window is not None and self.yaw_window[0] <= slot < self.yaw_window[1]

    def heading_delta(self, slot: int) -> float:
        """Yaw applied while stepping from `slot` to `slot + 1`."""
        if not self.in_yaw_window(slot):
            return 0.0
        start, end = self.yaw_window
        return self.yaw_total_rad / (end - start)


def guidance_for(scenario: str, speed_mps: float = 12.0, slot_seconds: float = 0.5) -> Guidance:
    window = CROSSROAD_YAW_WINDOW if scenario == "crossroad" else None
    return Guidance(speed_mps=speed_mps, slot_seconds=slot_seconds, yaw_window=window)


def default_counts(scenario: str) -> SceneCounts:
    if scenario not in SCENARIO_COUNTS:
        raise DomainError(f"unknown scenario '{scenario}'")
    vehicles, buildings = SCENARIO_COUNTS[scenario]
    return SceneCounts(vehicles=vehicles, buildings=buildings)


def _grid(value: float, step: float) -> float:
    return float(np.round(value / step) * step)


def _cross_street_x() -> float:
    """Camera x once the scripted crossroad turn is complete."""
    guidance = guidance_for("crossroad")
    camera = Camera()
    for slot in range(guidance.yaw_window[1]):
        camera = advance_camera(camera, guidance, slot)
    return camera.x


def scene_init(scenario: Scenario, seed: int, counts: Optional[SceneCounts] = None) -> SceneState:
    """Deterministic placement from the seed; values sit on the codec quantisation grids."""
    counts = counts or default_counts(scenario)
    if counts.total > MAX_OBJECTS:
        raise DomainError(f"scene would hold {counts.total} objects, limit is {MAX_OBJECTS}")
    rng = np.random.default_rng(seed)
    objects = []

    crossroad = scenario == "crossroad"
    cross_x = _cross_street_x() if crossroad else 0.0

    for i in range(counts.vehicles):
        if crossroad and i % 2 == 1:
            x = cross_x + rng.uniform(-3.0, 3.0)
            y = rng.uniform(40.0, 80.0)
            vx, vy = 0.0, rng.choice([-1.0, 1.0]) * rng.uniform(1.0, 3.0)
        else:
            x = rng.uniform(12.0, 80.0)
            y = rng.uniform(-4.0, 4.0)
            vx, vy = rng.uniform(-4.0, 8.0), 0.0
        objects.append(SceneObject(
            id=len(objects),
            cls="vehicle",
            x=_grid(x, 0.5),
            y=_grid(y, 0.5),
            w=_grid(rng.uniform(1.6, 2.2), 0.25),
            h=_grid(rng.uniform(1.4, 2.0), 0.25),
            vx=_grid(vx, 0.125),
            vy=_grid(vy, 0.125),
        ))

    spacing = 110.0 / max(counts.buildings, 1)
    for i in range(counts.buildings):
        side = 1.0 if i % 2 == 0 else -1.0
        if crossroad and i % 4 != 0:
            # lines the cross street the camera turns into
            x = cross_x - side * rng.uniform(10.0, 16.0)
            y = 28.0 + 20.0 * (i - 1) + rng.uniform(0.0, 10.0)
        else:
            x = 20.0 + i * spacing + rng.uniform(0.0, 0.5 * spacing)
            y = side * rng.uniform(12.0, 18.0)
        objects.append(SceneObject(
            id=len(objects),
            cls="building",
            x=_grid(x, 0.5),
            y=_grid(y, 0.5),
            w=_grid(rng.uniform(12.0, 24.0), 0.25),
            h=_grid(rng.uniform(8.0, 18.0), 0.25),
        ))

    for _ in range(counts.road_markings):
        objects.append(SceneObject(
            id=len(objects),
            cls="road_marking",
            x=_grid(rng.uniform(8.0, 60.0), 0.5),
            y=0.0,
            w=0.5,
            h=0.25,
        ))

    return SceneState(camera=Camera(), objects=tuple(objects), scenario=scenario, slot=0)


def advance_objects(objects, dt: float, velocity_scale: float = 1.0) -> Tuple[SceneObject, ...]:
    return tuple(
        replace(o, x=o.x + o.vx * velocity_scale * dt, y=o.y + o.vy * velocity_scale * dt)
        for o in objects
    )


def advance_camera(camera: Camera, guidance: Guidance, slot: int) -> Camera:
    step = guidance.step_m
    return Camera(
        x=camera.x + step * math.cos(camera.heading),
        y=camera.y + step * math.sin(camera.heading),
        heading=camera.heading + guidance.heading_delta(slot),
    )


def scene_step(state: SceneState, guidance: Optional[Guidance] = None) -> SceneState:
    """One slot of true motion: camera along its heading, objects by their velocity."""
    guidance = guidance or guidance_for(state.scenario)
    return SceneState(
        camera=advance_camera(state.camera, guidance, state.slot),
        objects=advance_objects(state.objects, guidance.slot_seconds),
        scenario=state.scenario,
        slot=state.slot + 1,
    )


class Render(NamedTuple):
    frame: np.ndarray
    depth: np.ndarray
    mask: np.ndarray
    ids: np.ndarray


def to_camera(obj: SceneObject, camera: Camera) -> Tuple[float, float]:
    """Forward distance and left-positive lateral offset of an object centre."""
    dx = obj.x - camera.x
    dy = obj.y - camera.y
    cos_h, sin_h = math.cos(camera.heading), math.sin(camera.heading)
    return dx * cos_h + dy * sin_h, -dx * sin_h + dy * cos_h


def project_column(lateral: float, forward: float) -> float:
    return CENTER_COL - FOCAL_PX * lateral / forward


def _pixel_span(lo: float, hi: float, limit: int) -> Tuple[int, int]:
    return max(0, math.ceil(lo - 0.5)), min(limit, math.ceil(hi - 0.5))


def render(state: SceneState) -> Render:
    frame = BACKGROUND.copy()
    depth = np.full((HEIGHT, WIDTH), D_MAX)
    mask = np.zeros((HEIGHT, WIDTH), dtype=np.uint8)
    ids = np.full((HEIGHT, WIDTH), -1, dtype=np.int16)

    visible = []
    for obj in state.objects:
        forward, lateral = to_camera(obj, state.camera)
        if forward < D_MIN or forward >= D_MAX:
            continue
        visible.append((forward, lateral, obj))

    # painter's order: far to near
    for forward, lateral, obj in sorted(visible, key=lambda item: (-item[0], item[2].id)):
        center = project_column(lateral, forward)
        half = FOCAL_PX * obj.w / (2.0 * forward)
        c0, c1 = _pixel_span(center - half, center + half, WIDTH)
        r0, r1 = _pixel_span(
            HORIZON_ROW - FOCAL_PX * (obj.h - CAMERA_HEIGHT_M) / forward,
            HORIZON_ROW + FOCAL_PX * CAMERA_HEIGHT_M / forward,
            HEIGHT,
        )
        if c0 >= c1 or r0 >= r1:
            continue
        fog = 0.4 * forward / D_MAX
        shade = (_BASE_SHADE[obj.cls] + 0.03 * (obj.id % 4)) * (1.0 - fog) + 0.7 * fog
        frame[r0:r1, c0:c1] = shade
        depth[r0:r1, c0:c1] = forward
        mask[r0:r1, c0:c1] = obj.label
        ids[r0:r1, c0:c1] = obj.id

    return Render(frame=frame, depth=depth, mask=mask, ids=ids)


def render_frame(state: SceneState) -> np.ndarray:
    return render(state).frame


def render_depth(state: SceneState) -> np.ndarray:
    return render(state).depth


def render_mask(state: SceneState) -> np.ndarray:
    return render(state).mask
