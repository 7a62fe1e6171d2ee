"""Landmark-driven lip cropping.

For every frame: take the tight box around the 24 lip landmarks, grow it
about its center to a fixed aspect ratio, crop (edge-replicating anything
outside the frame) and bilinearly resize to 30x18. The per-frame crops are
then sampled to a fixed clip length.

Coordinates are continuous pixels: pixel ``k`` spans ``[k, k+1)`` and has
its center at ``k + 0.5``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .clipio import N_LANDMARKS
from .errors import (ConfigError, DegenerateLandmarksError, FrameError, OutOfFrameError,
                     UsageError)


@dataclass(frozen=True)
class LandmarkFrame:
    points: np.ndarray  # [24, 2] as (x, y)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if pts.shape != (N_LANDMARKS, 2):
            raise ValueError(f"expected {N_LANDMARKS} landmark points, got {pts.shape[0]}")
        if not np.all(np.isfinite(pts)) or np.any(pts < 0):
            raise ValueError("landmark coordinates must be finite and non-negative")
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def center(self) -> tuple:
        return ((self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2)

    @property
    def aspect_ratio(self) -> float:
        return self.width / self.height


@dataclass
class PreprocessConfig:
    target_aspect_ratio: float = 5 / 3
    target_width: int = 30
    target_height: int = 18
    clip_length: int = 32
    interpolation: str = "bilinear"

    def validate(self) -> None:
        if self.target_aspect_ratio <= 0:
            raise ConfigError("target_aspect_ratio must be positive")
        if self.target_width < 1 or self.target_height < 1 or self.clip_length < 1:
            raise ConfigError("target size and clip_length must be >= 1")
        if abs(self.target_width / self.target_height - self.target_aspect_ratio) > 1e-9:
            raise ConfigError(
                f"target size {self.target_width}x{self.target_height} does not have "
                f"aspect ratio {self.target_aspect_ratio}")
        if self.interpolation != "bilinear":
            raise ConfigError(f"unsupported interpolation {self.interpolation!r}")


@dataclass
class VideoClip:
    frames: np.ndarray  # [T, H, W, C] float32 in [0, 1]
    client_id: Optional[str] = None
    phrase_id: Optional[str] = None
    emotion_id: Optional[str] = None


def lip_bbox(landmarks) -> BoundingBox:
    """Tight axis-aligned hull of the landmark points."""
    pts = landmarks.points if isinstance(landmarks, LandmarkFrame) else LandmarkFrame(landmarks).points
    x_min, y_min = pts.min(axis=0)
    x_max, y_max = pts.max(axis=0)
    if x_max <= x_min or y_max <= y_min:
        raise DegenerateLandmarksError(
            f"landmarks span zero {'width' if x_max <= x_min else 'height'}")
    return BoundingBox(float(x_min), float(y_min), float(x_max), float(y_max))


def adjust_aspect(box: BoundingBox, ar: float) -> BoundingBox:
    """Enlarge the short side so that width / height == ``ar``; the box
    grows symmetrically about its center and never shrinks."""
    if ar <= 0:
        raise UsageError("aspect ratio must be positive")
    w, h = box.width, box.height
    if w <= 0 or h <= 0:
        raise DegenerateLandmarksError("box has zero width or height")
    if w / h < ar:
        w = h * ar
    else:
        h = max(h, w / ar)
    cx, cy = box.center
    return BoundingBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def _axis_weights(start: float, length: float, n_out: int, n_in: int):
    # sample centers mapped back to pixel-index space, then clamped (edge replication)
    pos = start + (np.arange(n_out) + 0.5) * (length / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def crop_resize(frame: np.ndarray, box: BoundingBox, cfg: PreprocessConfig) -> np.ndarray:
    """Resample the region under ``box`` to ``target_height x target_width``."""
    frame = np.asarray(frame)
    if frame.ndim == 2:
        frame = frame[..., None]
    h, w = frame.shape[:2]
    if box.x_max <= 0 or box.y_max <= 0 or box.x_min >= w or box.y_min >= h:
        raise OutOfFrameError(f"box {box} lies entirely outside the {w}x{h} frame")
    x0, x1, fx = _axis_weights(box.x_min, box.width, cfg.target_width, w)
    y0, y1, fy = _axis_weights(box.y_min, box.height, cfg.target_height, h)
    img = frame.astype(np.float64)
    fx = fx[None, :, None]
    fy = fy[:, None, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bottom = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


def temporal_sample(frames: Sequence, T: int) -> list:
    """Pick ``T`` frames: evenly spaced (first and last included) when there
    are enough, otherwise pad by repeating the last frame."""
    n = len(frames)
    if n == 0:
        raise UsageError("temporal_sample needs at least one frame")
    if T < 1:
        raise UsageError("T must be >= 1")
    return [frames[i] for i in sample_indices(n, T)]


def sample_indices(n: int, T: int) -> list:
    if n < T:
        return list(range(n)) + [n - 1] * (T - n)
    if T == 1:
        return [0]
    return [int(np.floor(i * (n - 1) / (T - 1) + 0.5)) for i in range(T)]


def _to_unit_range(frame: np.ndarray) -> np.ndarray:
    if frame.dtype == np.uint8:
        return frame.astype(np.float64) / 255.0
    return frame


def preprocess_clip(frames: Sequence, landmarks: Sequence, cfg: Optional[PreprocessConfig] = None,
                    client_id=None, phrase_id=None, emotion_id=None) -> VideoClip:
    """Crop every frame around its lips, then sample to ``cfg.clip_length``."""
    cfg = cfg or PreprocessConfig()
    cfg.validate()
    if len(frames) != len(landmarks):
        raise UsageError(f"{len(frames)} frames but {len(landmarks)} landmark frames")
    if len(frames) == 0:
        raise UsageError("empty video")
    crops = []
    for i, (frame, lm) in enumerate(zip(frames, landmarks)):
        try:
            box = adjust_aspect(lip_bbox(lm), cfg.target_aspect_ratio)
            crops.append(crop_resize(_to_unit_range(np.asarray(frame)), box, cfg))
        except (ValueError, UsageError) as exc:
            raise FrameError(i, exc) from exc
    out = np.stack(temporal_sample(crops, cfg.clip_length)).astype(np.float32)
    np.clip(out, 0.0, 1.0, out=out)
    return VideoClip(out, client_id, phrase_id, emotion_id)
