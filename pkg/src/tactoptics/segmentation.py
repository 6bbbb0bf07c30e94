"""Frame-differencing contact segmentation against a frozen no-contact reference."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .imaging import (Component, ImageLike, MaskLike, bits_of, connected_components, label,
                      pixels_of)

REFERENCE_FRAMES = 10
DEFAULT_MIN_COMPONENT = 3


@dataclass(frozen=True)
class Thresholds:
    t0: float = 25     # mean of the three channel deltas
    t1: float = 20     # at least one channel
    t2: float = 30     # at least two channels
    t3: float = 40     # all three channels

    def __post_init__(self):
        if min(self.t0, self.t1, self.t2, self.t3) < 0:
            raise ValueError("thresholds must be non-negative")


DEFAULT_THRESHOLDS = Thresholds()


@dataclass(frozen=True)
class ReferenceState:
    mean: np.ndarray          # (H, W, 3) float64
    frame_count: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.mean.shape[:2]


def build_reference(frames: Sequence[ImageLike], n: int = REFERENCE_FRAMES) -> ReferenceState:
    """Per-pixel, per-channel mean of the first ``n`` frames."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(frames) < n:
        raise ValueError(f"need {n} reference frames, got {len(frames)}")
    stack = [pixels_of(f) for f in frames[:n]]
    shape = stack[0].shape
    for k, f in enumerate(stack):
        if f.shape != shape:
            raise ValueError(f"reference frame {k} is {f.shape[:2]}, expected {shape[:2]}")
    acc = np.zeros(shape, np.float64)
    for f in stack:
        acc += f
    return ReferenceState(acc / n, n)


def difference(frame: ImageLike, ref: ReferenceState) -> np.ndarray:
    """Signed int16 per-channel difference ``frame - round(I_ref)``."""
    p = pixels_of(frame)
    if p.shape[:2] != ref.shape:
        raise ValueError(f"frame is {p.shape[:2]}, reference is {ref.shape}")
    return p.astype(np.int16) - np.rint(ref.mean).astype(np.int16)


def contact_rule(delta: np.ndarray, th: Thresholds = DEFAULT_THRESHOLDS) -> np.ndarray:
    """Four-condition brightness check on ``(..., 3)`` signed deltas."""
    d = np.asarray(delta, np.int16).astype(np.float64)
    above1 = (d > th.t1).sum(axis=-1)
    above2 = (d > th.t2).sum(axis=-1)
    above3 = (d > th.t3).sum(axis=-1)
    return (d.mean(axis=-1) > th.t0) | (above1 >= 1) | (above2 >= 2) | (above3 == 3)


def segment(frame: ImageLike, ref: ReferenceState,
            th: Thresholds = DEFAULT_THRESHOLDS) -> np.ndarray:
    return contact_rule(difference(frame, ref), th)


@dataclass(frozen=True)
class ContactStats:
    pixel_count: int
    coverage: float
    centroid: Optional[tuple[float, float]]    # (x, y); None for an empty mask
    components: tuple[Component, ...]


def stats(mask: MaskLike, connectivity: int = 8) -> ContactStats:
    b = bits_of(mask)
    count = int(b.sum())
    if count == 0:
        return ContactStats(0, 0.0, None, ())
    ys, xs = np.nonzero(b)
    return ContactStats(count, count / b.size, (float(xs.mean()), float(ys.mean())),
                        tuple(connected_components(b, connectivity)))


def denoise(mask: MaskLike, min_component: int = DEFAULT_MIN_COMPONENT,
            connectivity: int = 8) -> np.ndarray:
    """Drop components smaller than ``min_component`` pixels."""
    if min_component < 0:
        raise ValueError("min_component must be >= 0")
    b = bits_of(mask)
    if min_component == 0:
        return b.copy()
    lab, n = label(b, connectivity)
    sizes = np.bincount(lab.ravel(), minlength=n + 1)
    keep = sizes >= min_component
    keep[0] = False
    return keep[lab]
