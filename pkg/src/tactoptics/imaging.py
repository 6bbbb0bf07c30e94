"""Raster primitives: frames, masks, statistics, components, remapping, PNG I/O.

Frames are ``(H, W, 3) uint8`` arrays and masks ``(H, W) bool`` arrays. The
:class:`SensorImage` / :class:`ContactMask` wrappers validate those shapes;
every function here also accepts the bare arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image
from scipy import ndimage


@dataclass(frozen=True)
class SensorImage:
    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels)
        if p.ndim != 3 or p.shape[2] != 3 or p.dtype != np.uint8:
            raise ValueError(f"expected (H, W, 3) uint8 pixels, got {p.shape} {p.dtype}")
        if p.shape[0] == 0 or p.shape[1] == 0:
            raise ValueError("image dimensions must be positive")
        object.__setattr__(self, "pixels", p)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class ContactMask:
    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 2 or b.dtype != bool:
            raise ValueError(f"expected (H, W) bool mask, got {b.shape} {b.dtype}")
        object.__setattr__(self, "bits", b)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]


ImageLike = Union[SensorImage, np.ndarray]
MaskLike = Union[ContactMask, np.ndarray]


def pixels_of(img: ImageLike) -> np.ndarray:
    return img.pixels if isinstance(img, SensorImage) else SensorImage(img).pixels


def bits_of(mask: MaskLike) -> np.ndarray:
    return mask.bits if isinstance(mask, ContactMask) else ContactMask(np.asarray(mask, bool)).bits


# ---------------------------------------------------------------- statistics

CHANNELS = {"R": 0, "G": 1, "B": 2}


def mean_std(img: ImageLike, channel: str = "gray") -> tuple[float, float]:
    """Mean and population std of one channel; ``gray`` is the per-pixel RGB mean."""
    p = pixels_of(img).astype(np.float64)
    if channel == "gray":
        v = p.mean(axis=2)
    elif channel in CHANNELS:
        v = p[..., CHANNELS[channel]]
    else:
        raise ValueError(f"unknown channel {channel!r}")
    return float(v.mean()), float(v.std())


# ---------------------------------------------------------------- components

@dataclass(frozen=True)
class Component:
    count: int
    centroid: tuple[float, float]            # (x, y) px
    bbox: tuple[int, int, int, int]          # (x0, y0, x1, y1) inclusive
    label: int                               # label in the returned label image


_STRUCTURE = {4: ndimage.generate_binary_structure(2, 1),
              8: ndimage.generate_binary_structure(2, 2)}


def label(mask: MaskLike, connectivity: int = 8) -> tuple[np.ndarray, int]:
    if connectivity not in _STRUCTURE:
        raise ValueError("connectivity must be 4 or 8")
    return ndimage.label(bits_of(mask), structure=_STRUCTURE[connectivity])


def connected_components(mask: MaskLike, connectivity: int = 8,
                         weights: Optional[np.ndarray] = None) -> list[Component]:
    """Components sorted by pixel count (desc), ties by bbox top-left (y, x).

    Centroids are arithmetic means of member coordinates, or weighted means
    when ``weights`` (same shape as the mask) is given.
    """
    lab, n = label(mask, connectivity)
    if n == 0:
        return []
    idx = np.arange(1, n + 1)
    counts = ndimage.sum_labels(np.ones(lab.shape), lab, idx)
    w = np.ones(lab.shape) if weights is None else np.asarray(weights, float)
    mass = ndimage.sum_labels(w, lab, idx)
    ys, xs = np.indices(lab.shape)
    cx = ndimage.sum_labels(w * xs, lab, idx) / mass
    cy = ndimage.sum_labels(w * ys, lab, idx) / mass
    comps = []
    for k, sl in enumerate(ndimage.find_objects(lab)):
        bbox = (sl[1].start, sl[0].start, sl[1].stop - 1, sl[0].stop - 1)
        comps.append(Component(int(counts[k]), (float(cx[k]), float(cy[k])), bbox, k + 1))
    comps.sort(key=lambda c: (-c.count, c.bbox[1], c.bbox[0]))
    return comps


# ---------------------------------------------------------------- remap / crop

@dataclass(frozen=True)
class RectifyMap:
    """Destination-pixel lookup into a raw frame.

    ``src_x``/``src_y`` are (H_out, W_out) float source coordinates (pixel
    centres at integers); ``valid`` flags samples inside the raw frame.
    ``crop`` is the (x0, y0, x1, y1) rectangle of the destination grid in
    rectified pixels and ``raw_shape`` the expected raw (H, W).
    """

    src_x: np.ndarray
    src_y: np.ndarray
    raw_shape: tuple[int, int]
    crop: tuple[int, int, int, int] = (0, 0, 0, 0)

    @property
    def shape(self) -> tuple[int, int]:
        return self.src_x.shape

    @property
    def valid(self) -> np.ndarray:
        h, w = self.raw_shape
        return ((self.src_x >= 0) & (self.src_x <= w - 1)
                & (self.src_y >= 0) & (self.src_y <= h - 1))

    @classmethod
    def identity(cls, height: int, width: int) -> "RectifyMap":
        ys, xs = np.indices((height, width), dtype=float)
        return cls(xs, ys, (height, width), (0, 0, width - 1, height - 1))


def remap(img: ImageLike, m: RectifyMap) -> np.ndarray:
    """Bilinear resampling; samples outside the raw frame come out black."""
    p = pixels_of(img)
    if p.shape[:2] != tuple(m.raw_shape):
        raise ValueError(f"map expects a {m.raw_shape} frame, got {p.shape[:2]}")
    h, w = p.shape[:2]
    ok = m.valid
    x = np.where(ok, m.src_x, 0.0)
    y = np.where(ok, m.src_y, 0.0)
    x0 = np.minimum(np.floor(x).astype(np.int64), w - 1)
    y0 = np.minimum(np.floor(y).astype(np.int64), h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    f = p.astype(np.float64)
    out = ((1 - fy) * ((1 - fx) * f[y0, x0] + fx * f[y0, x1])
           + fy * ((1 - fx) * f[y1, x0] + fx * f[y1, x1]))
    out[~ok] = 0.0
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def remap_mask(mask: MaskLike, m: RectifyMap) -> np.ndarray:
    """Nearest-neighbour mask resampling (invalid -> False)."""
    b = bits_of(mask)
    if b.shape != tuple(m.raw_shape):
        raise ValueError(f"map expects a {m.raw_shape} mask, got {b.shape}")
    ok = m.valid
    xi = np.clip(np.rint(np.where(ok, m.src_x, 0)).astype(np.int64), 0, b.shape[1] - 1)
    yi = np.clip(np.rint(np.where(ok, m.src_y, 0)).astype(np.int64), 0, b.shape[0] - 1)
    return b[yi, xi] & ok


class NoContactError(ValueError):
    pass


def bounding_box(mask: MaskLike) -> Optional[tuple[int, int, int, int]]:
    b = bits_of(mask)
    rows = np.flatnonzero(b.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(b.any(axis=0))
    return int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1])


def crop_around(img: ImageLike, mask: MaskLike, padding: int = 0) -> np.ndarray:
    """Crop to the mask bounding box grown by ``padding``, clipped to the frame."""
    p = pixels_of(img)
    b = bits_of(mask)
    if b.shape != p.shape[:2]:
        raise ValueError("mask and image dimensions differ")
    if padding < 0:
        raise ValueError("padding must be non-negative")
    box = bounding_box(b)
    if box is None:
        raise NoContactError("mask is empty: no contact to crop around")
    x0, y0, x1, y1 = box
    h, w = b.shape
    x0, y0 = max(x0 - padding, 0), max(y0 - padding, 0)
    x1, y1 = min(x1 + padding, w - 1), min(y1 + padding, h - 1)
    return p[y0:y1 + 1, x0:x1 + 1].copy()


# ---------------------------------------------------------------- PNG

def write_png(path, img: ImageLike) -> None:
    Image.fromarray(pixels_of(img)).save(Path(path), format="PNG")


def read_png(path) -> np.ndarray:
    with Image.open(Path(path)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_mask_png(path, mask: MaskLike) -> None:
    Image.fromarray(bits_of(mask)).convert("1").save(Path(path), format="PNG")


def read_mask_png(path) -> np.ndarray:
    with Image.open(Path(path)) as im:
        return np.asarray(im.convert("1"), dtype=bool).copy()
