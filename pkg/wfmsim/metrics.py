"""Quality metrics on frames, masks and depth maps."""
import numpy as np

from .errors import DomainError, PayloadError

DELTA_THRESHOLD = 1.25
PEAK = 1.0


def _pair(a, b, name: str):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise PayloadError(f"{name} shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(frame_a, frame_b) -> float:
    a, b = _pair(frame_a, frame_b, "frame")
    return float(np.mean((a.astype(float) - b.astype(float)) ** 2))


def psnr(frame_a, frame_b) -> float:
    """PSNR in dB with peak 1.0; identical frames give +inf."""
    error = mse(frame_a, frame_b)
    if error == 0.0:
        return float("inf")
    return float(10.0 * np.log10(PEAK**2 / error))


def miou(mask_a, mask_b, n_classes: int = 4) -> float:
    """Mean IoU over classes present in at least one of the masks."""
    a, b = _pair(mask_a, mask_b, "mask")
    scores = []
    for label in range(n_classes):
        in_a = a == label
        in_b = b == label
        union = np.count_nonzero(in_a | in_b)
        if union == 0:
            continue
        scores.append(np.count_nonzero(in_a & in_b) / union)
    return float(np.mean(scores)) if scores else 1.0


def delta_exceed(depth_a, depth_b) -> float:
    """Share of cells whose depth ratio, either way round, exceeds 1.25."""
    a, b = _pair(depth_a, depth_b, "depth")
    if np.any(a <= 0) or np.any(b <= 0):
        raise DomainError("depth values must be positive")
    ratio = np.maximum(a / b, b / a)
    return float(np.mean(ratio > DELTA_THRESHOLD))
