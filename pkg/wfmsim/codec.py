"""Fixed-rate payload codecs: full frame (2048 B), mask (512 B) and depth (102 B).

Layouts are bit-exact and documented in docs/wire_format.md. Decoders are
total: any block of the right length decodes, and bit errors show up as a
corruption score in [0, 1] instead of an exception.
"""
import logging
import struct
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from .errors import PayloadError
from .world import D_MAX, D_MIN, HEIGHT, MAX_OBJECTS, NUM_LABELS, WIDTH, SceneObject, SceneState

logger = logging.getLogger(__name__)

MAGIC = 0xA5
KIND_FULL = 0x01
KIND_MASK = 0x02
KIND_DEPTH = 0x03

FULL_BYTES = 2048
MASK_BYTES = 512
DEPTH_BYTES = 102
PAYLOAD_BYTES = {"full": FULL_BYTES, "mask": MASK_BYTES, "depth": DEPTH_BYTES}

HEADER_BYTES = 16
RECORD_BYTES = 16
DESCRIPTOR_BYTES = MAX_OBJECTS * RECORD_BYTES
IMAGE_BYTES = 1536
TAIL_BYTES = FULL_BYTES - HEADER_BYTES - DESCRIPTOR_BYTES - IMAGE_BYTES
DEPTH_HEADER_BYTES = 6

IMAGE_ROWS, IMAGE_COLS = 32, 64
MASK_ROWS, MASK_COLS = 32, 64
DEPTH_ROWS, DEPTH_COLS = 8, 16
IMAGE_LEVELS = 62  # level 63 marks an out-of-range cell
DEPTH_LEVELS = 63
# expected share of cells with no same-label neighbour when labels are uniform on the 32 x 64 grid
RANDOM_ISOLATED_SHARE = 0.113

CENTER_STEP_M = 0.5
SIZE_STEP_M = 0.25
VELOCITY_STEP_MPS = 0.125
CENTER_RANGE_M = 1000.0
SIZE_RANGE_M = 40.0
VELOCITY_RANGE_MPS = 15.0
HEADING_RANGE_RAD = 4.0 * np.pi

CLASS_CODES = {"vehicle": 0, "building": 1, "road_marking": 2}
CODE_CLASSES = {code: cls for cls, code in CLASS_CODES.items()}
SCENE_CHECKS = 2 + MAX_OBJECTS  # header, camera record, object records

_RECORD = struct.Struct(">BBhhBBhh3x")
_CAMERA = struct.Struct(">iii3x")
_FULL_HEADER = struct.Struct(">BBHH10x")
_DEPTH_HEADER = struct.Struct(">BBHH")


class TxMode(str, Enum):
    FULL = "Full"
    PART = "Part"
    PREDICT = "Predict"

    @property
    def forward_bytes(self) -> int:
        return {TxMode.FULL: FULL_BYTES, TxMode.PART: MASK_BYTES}.get(self, 0)


@dataclass(frozen=True)
class Payload:
    kind: str
    data: bytes

    def __post_init__(self):
        expected = PAYLOAD_BYTES.get(self.kind)
        if expected is None:
            raise PayloadError(f"unknown payload kind '{self.kind}'")
        if len(self.data) != expected:
            raise PayloadError(f"{self.kind} payload must be {expected} bytes, got {len(self.data)}")


@dataclass(frozen=True)
class ObjectHint:
    """One decoded object record; fields that failed their range check are None."""

    id: int
    cls: str
    x: Optional[float]
    y: Optional[float]
    w: Optional[float]
    h: Optional[float]
    vx: Optional[float]
    vy: Optional[float]
    checksum_ok: bool

    @property
    def complete(self) -> bool:
        return None not in (self.x, self.y, self.w, self.h, self.vx, self.vy)


@dataclass(frozen=True)
class CameraHint:
    x: Optional[float]
    y: Optional[float]
    heading: Optional[float]
    checksum_ok: bool


@dataclass(frozen=True)
class SceneHints:
    slot: int
    seq: int
    header_ok: bool
    camera: CameraHint
    objects: Tuple[ObjectHint, ...]
    failed_checks: int

    @property
    def usable(self) -> bool:
        return bool(self.objects) or any(v is not None for v in (self.camera.x, self.camera.y, self.camera.heading))


# ----- grid helpers -----

def cell_means(image: np.ndarray, rows: int, cols: int) -> np.ndarray:
    h, w = image.shape
    return image.reshape(rows, h // rows, cols, w // cols).mean(axis=(1, 3))


def cell_majority(mask: np.ndarray, rows: int, cols: int, n_labels: int = NUM_LABELS) -> np.ndarray:
    """Majority label per cell; ties resolve to the lower label."""
    h, w = mask.shape
    blocks = mask.reshape(rows, h // rows, cols, w // cols).transpose(0, 2, 1, 3).reshape(rows, cols, -1)
    counts = (blocks[..., None] == np.arange(n_labels)).sum(axis=2)
    return counts.argmax(axis=-1).astype(np.uint8)


def upsample(cells: np.ndarray, height: int = HEIGHT, width: int = WIDTH) -> np.ndarray:
    rows, cols = cells.shape
    return np.repeat(np.repeat(cells, height // rows, axis=0), width // cols, axis=1)


def depth_cells(depth: np.ndarray) -> np.ndarray:
    """Depth at feedback resolution (16 x 8 cells)."""
    return cell_means(depth, DEPTH_ROWS, DEPTH_COLS)


def _pack(values: np.ndarray, width: int) -> bytes:
    shifts = np.arange(width - 1, -1, -1)
    bits = ((values.reshape(-1)[:, None].astype(np.int64) >> shifts) & 1).astype(np.uint8)
    return np.packbits(bits.reshape(-1)).tobytes()


def _unpack(data: bytes, count: int, width: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))[: count * width].reshape(count, width)
    return bits.astype(np.int64) @ (1 << np.arange(width - 1, -1, -1))


def _checksum(body: bytes) -> int:
    return ~sum(body) & 0xFF


def _check_length(data: bytes, kind: str) -> bytes:
    data = data.data if isinstance(data, Payload) else bytes(data)
    expected = PAYLOAD_BYTES[kind]
    if len(data) != expected:
        raise PayloadError(f"{kind} payload must be {expected} bytes, got {len(data)}")
    return data


def _check_image(image: np.ndarray, name: str) -> np.ndarray:
    image = np.asarray(image)
    if image.shape != (HEIGHT, WIDTH):
        raise PayloadError(f"{name} must be {HEIGHT}x{WIDTH}, got {image.shape}")
    return image


def _quantize(value: float, step: float, lo: int, hi: int) -> int:
    return int(np.clip(np.rint(value / step), lo, hi))


def _in_range(value: float, limit: float) -> Optional[float]:
    return value if abs(value) <= limit else None


# ----- scene descriptor -----

def _encode_record(obj: Optional[SceneObject]) -> bytes:
    if obj is None:
        body = _RECORD.pack(0, 0, 0, 0, 0, 0, 0, 0)
    else:
        body = _RECORD.pack(
            0x80 | CLASS_CODES[obj.cls],
            obj.id & 0xFF,
            _quantize(obj.x, CENTER_STEP_M, -32768, 32767),
            _quantize(obj.y, CENTER_STEP_M, -32768, 32767),
            _quantize(obj.w, SIZE_STEP_M, 0, 255),
            _quantize(obj.h, SIZE_STEP_M, 0, 255),
            _quantize(obj.vx, VELOCITY_STEP_MPS, -32768, 32767),
            _quantize(obj.vy, VELOCITY_STEP_MPS, -32768, 32767),
        )
    return body + bytes([_checksum(body)])


def _decode_record(record: bytes) -> Tuple[Optional[ObjectHint], bool]:
    """Returns the hint (None for an empty or unusable record) and whether the checksum held."""
    body = record[:-1]
    checksum_ok = _checksum(body) == record[-1]
    flags, object_id, xq, yq, wq, hq, vxq, vyq = _RECORD.unpack(body)
    if not flags & 0x80:
        return None, checksum_ok
    code = flags & 0x03
    if code not in CODE_CLASSES or object_id >= MAX_OBJECTS:
        return None, checksum_ok

    def size(q: int) -> Optional[float]:
        value = q * SIZE_STEP_M
        return value if 0 < value <= SIZE_RANGE_M else None

    hint = ObjectHint(
        id=object_id,
        cls=CODE_CLASSES[code],
        x=_in_range(xq * CENTER_STEP_M, CENTER_RANGE_M),
        y=_in_range(yq * CENTER_STEP_M, CENTER_RANGE_M),
        w=size(wq),
        h=size(hq),
        vx=_in_range(vxq * VELOCITY_STEP_MPS, VELOCITY_RANGE_MPS),
        vy=_in_range(vyq * VELOCITY_STEP_MPS, VELOCITY_RANGE_MPS),
        checksum_ok=checksum_ok,
    )
    return hint, checksum_ok


def _encode_camera(state: SceneState) -> bytes:
    limit = 2**31 - 1
    body = _CAMERA.pack(
        int(np.clip(np.rint(state.camera.x * 1000.0), -limit, limit)),
        int(np.clip(np.rint(state.camera.y * 1000.0), -limit, limit)),
        int(np.clip(np.rint(state.camera.heading * 1e6), -limit, limit)),
    )
    return body + bytes([_checksum(body)])


def _decode_camera(record: bytes) -> CameraHint:
    body = record[:-1]
    x_mm, y_mm, heading_urad = _CAMERA.unpack(body)
    return CameraHint(
        x=_in_range(x_mm / 1000.0, CENTER_RANGE_M),
        y=_in_range(y_mm / 1000.0, CENTER_RANGE_M),
        heading=_in_range(heading_urad / 1e6, HEADING_RANGE_RAD),
        checksum_ok=_checksum(body) == record[-1],
    )


# ----- full frame -----

def encode_full(frame: np.ndarray, scene: SceneState, seq: int = 0) -> Payload:
    """Header, scene descriptor, 64x32 image at 6 bits per cell, camera record and padding."""
    frame = _check_image(frame, "frame")
    header = _FULL_HEADER.pack(MAGIC, KIND_FULL, scene.slot & 0xFFFF, seq & 0xFFFF)

    by_slot = sorted(scene.objects, key=lambda o: o.id)[:MAX_OBJECTS]
    records = [_encode_record(obj) for obj in by_slot]
    records += [_encode_record(None)] * (MAX_OBJECTS - len(records))

    levels = np.clip(np.rint(cell_means(frame, IMAGE_ROWS, IMAGE_COLS) * IMAGE_LEVELS), 0, IMAGE_LEVELS)
    image = _pack(levels.astype(np.int64), 6)

    tail = _encode_camera(scene)
    tail += bytes(TAIL_BYTES - len(tail))

    data = header + b"".join(records) + image + tail
    assert len(data) == FULL_BYTES
    return Payload(kind="full", data=data)


def decode_full(payload) -> Tuple[np.ndarray, SceneHints, float]:
    """Frame, scene hints and corruption = mean of the failed-check and bad-cell fractions."""
    data = _check_length(payload, "full")
    magic, kind, slot, seq = _FULL_HEADER.unpack(data[:HEADER_BYTES])
    header_ok = magic == MAGIC and kind == KIND_FULL
    failed = 0 if header_ok else 1

    hints = []
    for i in range(MAX_OBJECTS):
        start = HEADER_BYTES + i * RECORD_BYTES
        hint, checksum_ok = _decode_record(data[start:start + RECORD_BYTES])
        failed += 0 if checksum_ok else 1
        if hint is not None:
            hints.append(hint)

    image_start = HEADER_BYTES + DESCRIPTOR_BYTES
    levels = _unpack(data[image_start:image_start + IMAGE_BYTES], IMAGE_ROWS * IMAGE_COLS, 6)
    levels = levels.reshape(IMAGE_ROWS, IMAGE_COLS)
    bad = levels > IMAGE_LEVELS
    cells = np.where(bad, 0.5, levels / IMAGE_LEVELS)

    tail_start = image_start + IMAGE_BYTES
    camera = _decode_camera(data[tail_start:tail_start + RECORD_BYTES])
    failed += 0 if camera.checksum_ok else 1

    scene_hints = SceneHints(
        slot=slot,
        seq=seq,
        header_ok=header_ok,
        camera=camera,
        objects=tuple(hints),
        failed_checks=failed,
    )
    corruption = 0.5 * failed / SCENE_CHECKS + 0.5 * float(bad.mean())
    return upsample(cells), scene_hints, min(1.0, corruption)


# ----- mask -----

def mask_inconsistency(cells: np.ndarray) -> float:
    """Share of cells sharing their label with none of their 8 neighbours, scaled so random labels give 1."""
    kernel = np.ones((3, 3), dtype=int)
    kernel[1, 1] = 0
    cells = np.asarray(cells, dtype=np.int64)
    same = np.zeros(cells.shape, dtype=int)
    for label in range(NUM_LABELS):
        here = cells == label
        neighbours = ndimage.convolve(here.astype(int), kernel, mode="constant", cval=0)
        same += np.where(here, neighbours, 0)
    return min(1.0, float((same == 0).mean()) / RANDOM_ISOLATED_SHARE)


def encode_mask(mask: np.ndarray) -> Payload:
    mask = _check_image(mask, "mask")
    if mask.size and (mask.min() < 0 or mask.max() >= NUM_LABELS):
        raise PayloadError(f"mask labels must lie in 0..{NUM_LABELS - 1}")
    cells = cell_majority(mask.astype(np.int64), MASK_ROWS, MASK_COLS)
    data = _pack(cells.astype(np.int64), 2)
    assert len(data) == MASK_BYTES
    return Payload(kind="mask", data=data)


def decode_mask_cells(payload) -> Tuple[np.ndarray, float]:
    data = _check_length(payload, "mask")
    cells = _unpack(data, MASK_ROWS * MASK_COLS, 2).reshape(MASK_ROWS, MASK_COLS).astype(np.uint8)
    return cells, mask_inconsistency(cells)


def decode_mask(payload) -> Tuple[np.ndarray, float]:
    cells, corruption = decode_mask_cells(payload)
    return upsample(cells), corruption


# ----- depth -----

def depth_level(values: np.ndarray) -> np.ndarray:
    span = np.log(D_MAX / D_MIN)
    return np.clip(np.rint(DEPTH_LEVELS * np.log(np.asarray(values) / D_MIN) / span), 0, DEPTH_LEVELS).astype(np.int64)


def depth_value(levels: np.ndarray) -> np.ndarray:
    return D_MIN * (D_MAX / D_MIN) ** (np.asarray(levels) / DEPTH_LEVELS)


def encode_depth(depth: np.ndarray, slot: int = 0, seq: int = 0) -> Payload:
    depth = _check_image(depth, "depth")
    if depth.min() < D_MIN or depth.max() > D_MAX:
        raise PayloadError(f"depth must lie in [{D_MIN}, {D_MAX}] m")
    header = _DEPTH_HEADER.pack(MAGIC, KIND_DEPTH, slot & 0xFFFF, seq & 0xFFFF)
    data = header + _pack(depth_level(depth_cells(depth)), 6)
    assert len(data) == DEPTH_BYTES
    return Payload(kind="depth", data=data)


def decode_depth_cells(payload) -> Tuple[np.ndarray, float]:
    data = _check_length(payload, "depth")
    magic, kind, _, _ = _DEPTH_HEADER.unpack(data[:DEPTH_HEADER_BYTES])
    corruption = ((magic != MAGIC) + (kind != KIND_DEPTH)) / 2.0
    levels = _unpack(data[DEPTH_HEADER_BYTES:], DEPTH_ROWS * DEPTH_COLS, 6).reshape(DEPTH_ROWS, DEPTH_COLS)
    return depth_value(levels), corruption


def decode_depth(payload) -> Tuple[np.ndarray, float]:
    cells, corruption = decode_depth_cells(payload)
    return upsample(cells), corruption
