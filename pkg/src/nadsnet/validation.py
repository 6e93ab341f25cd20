"""Input checking shared by the estimators and the CLI."""

import numpy as np

from .exceptions import ShapeError
from .graph import HeadOutputs


def check_image(x, input_size):
    """Return ``x`` as a finite float32 ``(input_size, input_size, 3)`` array."""
    arr = np.asarray(x, dtype=np.float32)
    expected = (input_size, input_size, 3)
    if arr.shape != expected:
        raise ShapeError(f"image shape {arr.shape} != {expected}")
    if not np.isfinite(arr).all():
        raise ValueError("image contains NaN or infinite values")
    return np.ascontiguousarray(arr)


def check_image_batch(X, input_size):
    """Accept one image or a batch; return ``(batch, was_single)``."""
    arr = np.asarray(X, dtype=np.float32)
    if arr.ndim == 3:
        return check_image(arr, input_size)[None], True
    if arr.ndim != 4:
        raise ShapeError(f"expected (N, H, W, 3) or (H, W, 3), got shape {arr.shape}")
    return np.stack([check_image(x, input_size) for x in arr]) if len(arr) else arr, False


def check_heads(heads, topology):
    """Check head tensors agree with each other and with ``topology``."""
    if not isinstance(heads, HeadOutputs):
        raise TypeError(f"expected HeadOutputs, got {type(heads).__name__}")
    kp = np.asarray(heads.keypoint_maps)
    if kp.ndim != 3 or kp.shape[2] != topology.keypoint_channels:
        raise ShapeError(f"keypoint maps {kp.shape} need {topology.keypoint_channels} channels")
    size = kp.shape[:2]
    if np.asarray(heads.paf_maps).shape != size + (topology.paf_channels,):
        raise ShapeError(f"PAF maps {np.asarray(heads.paf_maps).shape} != {size + (topology.paf_channels,)}")
    if heads.seatbelt_map is not None and np.asarray(heads.seatbelt_map).shape != size + (1,):
        raise ShapeError(f"seat-belt map {np.asarray(heads.seatbelt_map).shape} != {size + (1,)}")
    return heads
