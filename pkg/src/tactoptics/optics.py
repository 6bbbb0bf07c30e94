"""Closed-form 2D geometric optics for the wedge sensor.

Angles are radians everywhere in this module; degrees only appear at the
config boundary (see :mod:`tactoptics.config`).

Geometry convention used by :class:`OpticalConfig`: the touching surface runs
from the origin along +x, the medium lies above it (+y), and the viewing
surface leaves the +x end of the touching surface at interior angle
``theta_tv``. Signed incidence on the touching surface is positive when the
ray travels toward the viewing-surface end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

ANGLE_TOL = 1e-9

SURFACE_NAMES = ("touching", "viewing", "chamfer", "top", "left_wall", "surface_a")


@dataclass(frozen=True)
class MediumPair:
    n_medium: float = 1.45
    n_air: float = 1.0

    def __post_init__(self):
        if not (self.n_medium > 0 and self.n_air > 0):
            raise ValueError("refractive indices must be positive")


@dataclass(frozen=True)
class Segment:
    """Directed 2D segment ``a -> b`` in millimetres."""

    a: tuple[float, float]
    b: tuple[float, float]

    @property
    def length(self) -> float:
        return math.hypot(self.b[0] - self.a[0], self.b[1] - self.a[1])

    @property
    def tangent(self) -> np.ndarray:
        d = np.subtract(self.b, self.a, dtype=float)
        return d / np.hypot(*d)

    def point(self, u: float) -> np.ndarray:
        return np.asarray(self.a, float) + u * np.subtract(self.b, self.a, dtype=float)


@dataclass(frozen=True)
class Ray2D:
    origin: tuple[float, float]
    direction: tuple[float, float]
    radiance: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if abs(math.hypot(*self.direction) - 1.0) > 1e-9:
            raise ValueError("ray direction must be a unit vector")
        if any(c < 0 for c in self.radiance):
            raise ValueError("radiance must be non-negative")


@dataclass(frozen=True)
class OpticalConfig:
    """Full cross-section geometry of the sensor.

    Lengths in mm, angles in rad. ``led_axis`` and ``camera_axis`` are
    direction angles measured from +x. ``absorptivity`` maps the names in
    ``SURFACE_NAMES`` (absorbing ones only) to a fraction in [0, 1].
    """

    media: MediumPair = field(default_factory=MediumPair)
    theta_tv: float = math.pi / 2
    theta_s: float = math.pi / 2
    touching_length: float = 12.0
    viewing_length: float = 7.0
    shell_height: float = 10.0
    surface_a_height: float = 3.0
    chamfer: float = 3.0
    led_position: tuple[float, float] = (11.2, 7.0)
    led_axis: float = math.radians(-115.8)
    led_half_angle: float = math.radians(32.1)
    camera_position: tuple[float, float] = (17.0, 10.0)
    camera_axis: float = math.radians(-145.0)
    camera_fov: float = math.radians(120.0)
    camera_aperture: float = 3.0
    absorptivity: dict = field(default_factory=lambda: {
        "chamfer": 1.0, "top": 1.0, "left_wall": 1.0, "surface_a": 1.0})

    def __post_init__(self):
        if not 0 < self.theta_tv < math.pi:
            raise ValueError("theta_tv must lie in (0, pi)")
        if not 0 < self.theta_s <= math.pi / 2 + ANGLE_TOL:
            raise ValueError("theta_s must lie in (0, pi/2]")
        for name in ("touching_length", "viewing_length", "shell_height",
                     "surface_a_height", "camera_aperture"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.chamfer < 0:
            raise ValueError("chamfer must be non-negative")
        if not 0 <= self.led_half_angle < math.pi / 2:
            raise ValueError("led_half_angle must lie in [0, pi/2)")
        if not 0 < self.camera_fov < math.pi:
            raise ValueError("camera_fov must lie in (0, pi)")
        for name, a in self.absorptivity.items():
            if name not in SURFACE_NAMES:
                raise ValueError(f"unknown surface {name!r}")
            if not 0.0 <= a <= 1.0:
                raise ValueError(f"absorptivity of {name!r} outside [0, 1]")

    @property
    def touching_surface(self) -> Segment:
        return Segment((0.0, 0.0), (self.touching_length, 0.0))

    @property
    def viewing_surface(self) -> Segment:
        phi = math.pi - self.theta_tv
        x0 = self.touching_length
        return Segment((x0, 0.0), (x0 + self.viewing_length * math.cos(phi),
                                   self.viewing_length * math.sin(phi)))

    def with_(self, **changes) -> "OpticalConfig":
        from dataclasses import replace
        return replace(self, **changes)


@dataclass(frozen=True)
class Check:
    """Outcome of one design condition; ``passed`` iff ``margin > 0``."""

    passed: bool
    margin: float
    value: Optional[object] = None


@dataclass(frozen=True)
class ConditionReport:
    external_rejection: Check
    internal_rejection: Check
    contact_transmission: Check

    @property
    def all_passed(self) -> bool:
        return (self.external_rejection.passed and self.internal_rejection.passed
                and self.contact_transmission.passed)


def _check(margin: float, value=None) -> Check:
    # boundaries graze: anything within tolerance of zero counts as failing
    if abs(margin) <= ANGLE_TOL:
        margin = 0.0
    return Check(passed=bool(margin > 0.0), margin=float(margin), value=value)


def critical_angle(media: MediumPair) -> float:
    """TIR onset angle ``asin(n_air / n_medium)``."""
    if media.n_medium <= media.n_air:
        raise ValueError(
            f"no TIR regime: n_medium ({media.n_medium}) must exceed n_air ({media.n_air})")
    return math.asin(media.n_air / media.n_medium)


def refract(incident_angle: float, media: MediumPair, entering: bool) -> Optional[float]:
    """Snell refraction at a planar medium/air interface.

    Args:
        incident_angle: angle from the normal on the incident side, in [0, pi/2).
        entering: True for air -> medium, False for medium -> air.

    Returns:
        The transmitted angle, or ``None`` when the ray is totally internally
        reflected (only possible when exiting).
    """
    if not 0.0 <= incident_angle < math.pi / 2:
        raise ValueError("incident angle must lie in [0, pi/2)")
    if entering:
        return math.asin(media.n_air / media.n_medium * math.sin(incident_angle))
    if incident_angle >= critical_angle(media):
        return None
    s = media.n_medium / media.n_air * math.sin(incident_angle)
    return math.asin(min(s, 1.0))


def check_external_rejection(cfg: OpticalConfig) -> Check:
    theta_c = critical_angle(cfg.media)
    return _check(cfg.theta_tv - 2.0 * theta_c)


def incidence_on_touching(cfg: OpticalConfig, direction) -> np.ndarray:
    """Signed incidence of direction(s) on the touching surface.

    Positive values tilt toward the viewing surface. Works on a single
    ``(dx, dy)`` or an ``(n, 2)`` array.
    """
    d = np.asarray(direction, float)
    t = cfg.touching_surface.tangent
    n_out = np.array([t[1], -t[0]])
    return np.arctan2(d @ t, d @ n_out)


def _led_touching_range(cfg: OpticalConfig) -> tuple[float, float]:
    """Signed-incidence interval of cone rays that land on the touching surface."""
    seg = cfg.touching_surface
    p = np.asarray(cfg.led_position, float)
    end_a = incidence_on_touching(cfg, np.asarray(seg.a) - p)
    end_b = incidence_on_touching(cfg, np.asarray(seg.b) - p)
    axis = np.array([math.cos(cfg.led_axis), math.sin(cfg.led_axis)])
    axis_inc = float(incidence_on_touching(cfg, axis))
    lo = max(min(end_a, end_b), axis_inc - cfg.led_half_angle)
    hi = min(max(end_a, end_b), axis_inc + cfg.led_half_angle)
    if not (abs(axis_inc) < math.pi / 2 and lo <= hi):
        raise ValueError("LED cone does not illuminate the touching surface")
    return float(lo), float(hi)


def max_led_incidence(cfg: OpticalConfig, samples: int = 65) -> float:
    """Worst-case signed incidence of LED cone rays on the touching surface.

    The extremum sits on a cone edge or a segment endpoint; interior samples
    are intersected explicitly as a guard.
    """
    lo, hi = _led_touching_range(cfg)
    worst = hi
    p = np.asarray(cfg.led_position, float)
    seg = cfg.touching_surface
    t = seg.tangent
    n_out = np.array([t[1], -t[0]])
    inc = np.linspace(lo, hi, samples)
    dirs = np.outer(np.sin(inc), t) + np.outer(np.cos(inc), n_out)
    # ray/line intersection with the touching surface
    e = np.subtract(seg.b, seg.a)
    denom = dirs[:, 0] * e[1] - dirs[:, 1] * e[0]
    w = np.asarray(seg.a) - p
    u = (dirs[:, 0] * w[1] - dirs[:, 1] * w[0]) / denom
    hit = (u >= -1e-12) & (u <= 1 + 1e-12)
    if hit.any():
        worst = max(worst, float(inc[hit].max()))
    return worst


def check_internal_rejection(cfg: OpticalConfig) -> Check:
    """True iff every LED ray reflecting off the touching surface meets TIR
    at the viewing surface, i.e. ``max theta_it < theta_tv - theta_c``."""
    limit = cfg.theta_tv - critical_angle(cfg.media)
    worst = max_led_incidence(cfg)
    return _check(limit - worst, value=worst)


def check_contact_transmission(cfg: OpticalConfig) -> Check:
    """Diffuse contact light can exit the viewing surface iff
    ``theta_tv < pi/2 + theta_c``. ``value`` holds the transmitted incidence
    window on the viewing surface."""
    theta_c = critical_angle(cfg.media)
    margin = math.pi / 2 + theta_c - cfg.theta_tv
    window = (max(cfg.theta_tv - math.pi / 2, -theta_c), theta_c)
    return _check(margin, value=window)


def camera_exclusion_angle(cfg: OpticalConfig) -> float:
    """Angle between the most slanted transmitted ambient ray and the
    horizontal, for the relaxed regime ``theta_c <= theta_tv < 2 theta_c``.

    The camera has to sit outside this ray field.
    """
    theta_c = critical_angle(cfg.media)
    if not theta_c <= cfg.theta_tv < 2.0 * theta_c:
        raise ValueError("camera_exclusion_angle needs theta_c <= theta_tv < 2*theta_c")
    ratio = cfg.media.n_medium / cfg.media.n_air
    s = ratio * math.sin(cfg.theta_tv - theta_c)
    return math.pi / 2 + cfg.theta_tv - math.asin(min(s, 1.0))


def full_report(cfg: OpticalConfig) -> ConditionReport:
    return ConditionReport(
        external_rejection=check_external_rejection(cfg),
        internal_rejection=check_internal_rejection(cfg),
        contact_transmission=check_contact_transmission(cfg),
    )
