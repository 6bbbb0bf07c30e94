"""Imprint-grid calibration: detect the grid, estimate pixel pitch, build a rectify map.

Grid coordinates: row ``i`` grows downward, column ``j`` rightward. Centres
are stored row-major as an ``(rows, cols, 2)`` array of (x, y) pixels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .imaging import ImageLike, RectifyMap, connected_components, pixels_of

DEFAULT_THRESHOLD = 60
MAP_FORMAT_VERSION = 1


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    rows: int = 5
    cols: int = 5
    pitch: float = 3.0       # mm

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise ValueError("grid needs at least 2 rows and 2 columns")
        if not self.pitch > 0:
            raise ValueError("pitch must be positive")

    @property
    def count(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class GridDetection:
    centers: np.ndarray                  # (rows, cols, 2) x, y px
    corner_indices: tuple                # (row, col) of TL, TR, BR, BL
    mean_pixel_pitch: float              # px per grid pitch
    px_per_mm: float
    image_shape: tuple[int, int]

    @property
    def corners(self) -> np.ndarray:
        return np.array([self.centers[r, c] for r, c in self.corner_indices])


# ---------------------------------------------------------------- detection

def _bilinear(q: np.ndarray, s: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Point at (s, t) in the patch with corners q = [TL, TR, BR, BL]."""
    s = np.asarray(s, float)[..., None]
    t = np.asarray(t, float)[..., None]
    return ((1 - s) * (1 - t) * q[0] + s * (1 - t) * q[1]
            + s * t * q[2] + (1 - s) * t * q[3])


def _inverse_bilinear(q: np.ndarray, p: np.ndarray, iters: int = 30):
    """Newton solve for (s, t) with _bilinear(q, s, t) = p."""
    s = np.full(len(p), 0.5)
    t = np.full(len(p), 0.5)
    for _ in range(iters):
        r = _bilinear(q, s, t) - p
        ds = ((1 - t)[:, None] * (q[1] - q[0]) + t[:, None] * (q[2] - q[3]))
        dt = ((1 - s)[:, None] * (q[3] - q[0]) + s[:, None] * (q[2] - q[1]))
        det = ds[:, 0] * dt[:, 1] - ds[:, 1] * dt[:, 0]
        if np.any(np.abs(det) < 1e-12):
            raise CalibrationError("degenerate grid: corner imprints are collinear")
        s = s - (dt[:, 1] * r[:, 0] - dt[:, 0] * r[:, 1]) / det
        t = t - (-ds[:, 1] * r[:, 0] + ds[:, 0] * r[:, 1]) / det
        if np.abs(r).max() < 1e-10:
            break
    return s, t


def detect_grid(img: ImageLike, spec: GridSpec = GridSpec(),
                threshold: float = DEFAULT_THRESHOLD) -> GridDetection:
    """Find the ``rows x cols`` imprint centres and order them row-major.

    Imprints are the largest components of ``gray > threshold``; centroids
    are intensity weighted. The four corner imprints are the extremes of
    x + y and x - y; every centroid is then located inside the corner
    quadrilateral by inverse bilinear interpolation and snapped to its
    (row, col) slot.
    """
    p = pixels_of(img)
    gray = p.astype(np.float64).mean(axis=2)
    comps = connected_components(gray > threshold, 8, weights=gray)
    if len(comps) < spec.count:
        raise CalibrationError(
            f"too few imprints: found {len(comps)}, need {spec.count}")
    pts = np.array([c.centroid for c in comps[:spec.count]])

    sum_, diff = pts.sum(axis=1), pts[:, 0] - pts[:, 1]
    k = [int(np.argmin(sum_)), int(np.argmax(diff)), int(np.argmax(sum_)), int(np.argmin(diff))]
    if len(set(k)) != 4:
        raise CalibrationError("degenerate grid: corner imprints coincide")
    quad = pts[k]
    e1 = quad[1] - quad[0]
    e2 = quad[3] - quad[0]
    if abs(e1[0] * e2[1] - e1[1] * e2[0]) < 1e-6 * (np.hypot(*e1) * np.hypot(*e2) + 1e-12):
        raise CalibrationError("degenerate grid: corner imprints are collinear")

    s, t = _inverse_bilinear(quad, pts)
    gc = s * (spec.cols - 1)
    gr = t * (spec.rows - 1)
    col = np.rint(gc).astype(int)
    row = np.rint(gr).astype(int)
    off = np.maximum(np.abs(gc - col), np.abs(gr - row))
    centers = np.full((spec.rows, spec.cols, 2), np.nan)
    for n in np.argsort(off):
        r, c = row[n], col[n]
        x, y = pts[n]
        if not (0 <= r < spec.rows and 0 <= c < spec.cols) or off[n] > 0.4:
            raise CalibrationError(
                f"ambiguous ordering: imprint at ({x:.1f}, {y:.1f}) px does not fall "
                f"near a grid slot (projected to row {gr[n]:.2f}, col {gc[n]:.2f})")
        if not np.isnan(centers[r, c, 0]):
            raise CalibrationError(
                f"ambiguous ordering: imprint at ({x:.1f}, {y:.1f}) px collides with "
                f"another imprint in slot (row {r}, col {c})")
        centers[r, c] = pts[n]
    _check_monotone(centers)

    corner_idx = ((0, 0), (0, spec.cols - 1), (spec.rows - 1, spec.cols - 1), (spec.rows - 1, 0))
    tl, tr, br, bl = (centers[i] for i in corner_idx)
    per_pitch = np.mean([np.hypot(*(tr - tl)) / (spec.cols - 1),
                         np.hypot(*(br - bl)) / (spec.cols - 1),
                         np.hypot(*(bl - tl)) / (spec.rows - 1),
                         np.hypot(*(br - tr)) / (spec.rows - 1)])
    return GridDetection(centers, corner_idx, float(per_pitch),
                         float(per_pitch / spec.pitch), p.shape[:2])


def _check_monotone(centers: np.ndarray) -> None:
    """Projections along each grid line must advance in the same direction."""
    rows, cols = centers.shape[:2]
    ax_c = centers[:, -1].mean(axis=0) - centers[:, 0].mean(axis=0)
    ax_r = centers[-1].mean(axis=0) - centers[0].mean(axis=0)
    for r in range(rows):
        proj = centers[r] @ ax_c
        bad = np.flatnonzero(np.diff(proj) <= 0)
        if bad.size:
            x, y = centers[r, bad[0] + 1]
            raise CalibrationError(
                f"ambiguous ordering: imprint at ({x:.1f}, {y:.1f}) px (row {r}, col "
                f"{bad[0] + 1}) is out of order along its row")
    for c in range(cols):
        proj = centers[:, c] @ ax_r
        bad = np.flatnonzero(np.diff(proj) <= 0)
        if bad.size:
            x, y = centers[bad[0] + 1, c]
            raise CalibrationError(
                f"ambiguous ordering: imprint at ({x:.1f}, {y:.1f}) px (row {bad[0] + 1}, "
                f"col {c}) is out of order along its column")


# ---------------------------------------------------------------- rectification

def lattice(spec: GridSpec, out_resolution: float) -> tuple[np.ndarray, float, tuple[int, int]]:
    """Even destination lattice: ``(centres, margin_px, (H, W))``.

    Half a pitch of margin surrounds the grid on every side.
    """
    step = spec.pitch * out_resolution
    margin = 0.5 * step
    jj, ii = np.meshgrid(np.arange(spec.cols), np.arange(spec.rows))
    pts = np.stack([margin + jj * step, margin + ii * step], axis=-1)
    w = int(round((spec.cols - 1) * step + 2 * margin)) + 1
    h = int(round((spec.rows - 1) * step + 2 * margin)) + 1
    return pts, margin, (h, w)


def build_rectify_map(det: GridDetection, spec: GridSpec = GridSpec(),
                      out_resolution: float = 10.0) -> RectifyMap:
    """Piecewise-bilinear warp over the detected cells.

    Each destination pixel falls in (or beyond, in the margin) one lattice
    cell; its source point is the bilinear blend of that cell's four
    detected centres, so every centre maps back to itself exactly. Margin
    pixels extrapolate the boundary cell.
    """
    c = np.asarray(det.centers, float)
    if c.shape != (spec.rows, spec.cols, 2):
        raise ValueError("detection does not match the grid spec")
    _check_cells(c)
    step = spec.pitch * out_resolution
    _, margin, (h, w) = lattice(spec, out_resolution)
    ys, xs = np.indices((h, w), dtype=float)
    gc = (xs - margin) / step
    gr = (ys - margin) / step
    j0 = np.clip(np.floor(gc).astype(int), 0, spec.cols - 2)
    i0 = np.clip(np.floor(gr).astype(int), 0, spec.rows - 2)
    u = (gc - j0)[..., None]
    v = (gr - i0)[..., None]
    p00, p01 = c[i0, j0], c[i0, j0 + 1]
    p10, p11 = c[i0 + 1, j0], c[i0 + 1, j0 + 1]
    src = (1 - v) * ((1 - u) * p00 + u * p01) + v * ((1 - u) * p10 + u * p11)
    return RectifyMap(src[..., 0], src[..., 1], tuple(det.image_shape), (0, 0, w - 1, h - 1))


def _check_cells(c: np.ndarray) -> None:
    """Every cell must be a proper quadrilateral with consistent orientation."""
    a = c[:-1, 1:] - c[:-1, :-1]
    b = c[1:, :-1] - c[:-1, :-1]
    cross = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    scale = np.hypot(a[..., 0], a[..., 1]) * np.hypot(b[..., 0], b[..., 1])
    if np.any(np.abs(cross) <= 1e-6 * scale) or not (np.all(cross > 0) or np.all(cross < 0)):
        raise CalibrationError("degenerate grid: detected centres are collinear or folded")


def map_residuals(m: RectifyMap, det: GridDetection, spec: GridSpec,
                  out_resolution: float) -> np.ndarray:
    """Distance (px) between the map evaluated at lattice points and the detected centres."""
    pts, _, _ = lattice(spec, out_resolution)
    xi = np.rint(pts[..., 0]).astype(int)
    yi = np.rint(pts[..., 1]).astype(int)
    got = np.stack([m.src_x[yi, xi], m.src_y[yi, xi]], axis=-1)
    return np.hypot(*(got - det.centers).transpose(2, 0, 1))


def save_rectify_map(path, m: RectifyMap) -> None:
    with open(path, "wb") as fh:
        np.savez_compressed(fh, version=MAP_FORMAT_VERSION, src_x=m.src_x, src_y=m.src_y,
                            raw_shape=np.asarray(m.raw_shape), crop=np.asarray(m.crop))


def load_rectify_map(path) -> RectifyMap:
    with np.load(path) as z:
        version = int(z["version"])
        if version != MAP_FORMAT_VERSION:
            raise CalibrationError(f"unsupported rectify-map version {version}")
        return RectifyMap(z["src_x"], z["src_y"], tuple(int(v) for v in z["raw_shape"]),
                          tuple(int(v) for v in z["crop"]))


# ---------------------------------------------------------------- synthetic grids

Warp = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]


def render_grid(spec: GridSpec = GridSpec(), px_per_mm: float = 10.0,
                shape: Optional[tuple[int, int]] = None, warp: Optional[Warp] = None,
                radius_mm: float = 0.6, level: float = 220.0, background: float = 4.0,
                supersample: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Render bright imprint discs on a dark field.

    The undistorted grid is centred in the frame. ``warp`` maps raw pixel
    coordinates to undistorted ones (it is the lookup, not the forward
    distortion). Returns ``(image, true_centres)`` with true centres in raw
    pixels, found by inverting ``warp`` numerically.
    """
    step = spec.pitch * px_per_mm
    if shape is None:
        side = int(round(max(spec.rows, spec.cols) * step + 2 * step))
        shape = (side, side)
    h, w = shape
    jj, ii = np.meshgrid(np.arange(spec.cols), np.arange(spec.rows))
    ideal = np.stack([(w - 1) / 2 + (jj - (spec.cols - 1) / 2) * step,
                      (h - 1) / 2 + (ii - (spec.rows - 1) / 2) * step], axis=-1)
    off = (np.arange(supersample) + 0.5) / supersample - 0.5
    ys, xs = np.indices(shape, dtype=float)
    acc = np.zeros(shape)
    r = radius_mm * px_per_mm
    for oy in off:
        for ox in off:
            sx, sy = xs + ox, ys + oy
            if warp is not None:
                sx, sy = warp(sx, sy)
            # nearest lattice node in undistorted coordinates
            gj = np.clip(np.rint((sx - ideal[0, 0, 0]) / step), 0, spec.cols - 1).astype(int)
            gi = np.clip(np.rint((sy - ideal[0, 0, 1]) / step), 0, spec.rows - 1).astype(int)
            d = np.hypot(sx - ideal[gi, gj, 0], sy - ideal[gi, gj, 1])
            acc += d <= r
    frac = acc / supersample ** 2
    gray = background + (level - background) * frac
    img = np.repeat(np.clip(np.rint(gray), 0, 255).astype(np.uint8)[..., None], 3, axis=2)
    true = ideal if warp is None else invert_warp(warp, ideal)
    return img, true


def invert_warp(warp: Warp, target: np.ndarray, iters: int = 50) -> np.ndarray:
    """Raw points whose warp equals ``target`` (Newton with finite-difference Jacobian)."""
    p = np.asarray(target, float).copy()
    h = 1e-4
    for _ in range(iters):
        fx, fy = warp(p[..., 0], p[..., 1])
        rx, ry = fx - target[..., 0], fy - target[..., 1]
        if max(np.abs(rx).max(), np.abs(ry).max()) < 1e-10:
            break
        ax, ay = warp(p[..., 0] + h, p[..., 1])
        bx, by = warp(p[..., 0], p[..., 1] + h)
        j11, j21 = (ax - fx) / h, (ay - fy) / h
        j12, j22 = (bx - fx) / h, (by - fy) / h
        det = j11 * j22 - j12 * j21
        p[..., 0] -= (j22 * rx - j12 * ry) / det
        p[..., 1] -= (-j21 * rx + j11 * ry) / det
    return p


def affine_warp(matrix, center) -> Warp:
    """Lookup for the forward map ``x -> center + matrix @ (x - center)``."""
    inv = np.linalg.inv(np.asarray(matrix, float))
    cx, cy = center

    def f(x, y):
        dx, dy = x - cx, y - cy
        return cx + inv[0, 0] * dx + inv[0, 1] * dy, cy + inv[1, 0] * dx + inv[1, 1] * dy
    return f


def rotation_warp(degrees: float, center) -> Warp:
    a = np.radians(degrees)
    return affine_warp([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]], center)


def scale_warp(sx: float, sy: float, center) -> Warp:
    return affine_warp([[sx, 0.0], [0.0, sy]], center)


def radial_warp(k: float, center, norm: float) -> Warp:
    """Smooth polynomial lookup ``c + d (1 + k |d / norm|^2)`` (barrel for k > 0)."""
    cx, cy = center

    def f(x, y):
        dx, dy = x - cx, y - cy
        g = 1.0 + k * (dx * dx + dy * dy) / norm ** 2
        return cx + dx * g, cy + dy * g
    return f
