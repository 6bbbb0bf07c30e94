"""Simulated contact-driven behaviours: coverage PD, dipping, film following, grasping.

Units: mm, seconds, coverage as a fraction of the sensing surface. One call
to a ``step_*`` function is one control tick of ``1 / control_rate`` s, and
consumes exactly one observation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import phototrace as pt
from .optics import OpticalConfig
from .segmentation import ReferenceState, Thresholds, build_reference, segment, stats

MEDIA = ("liquid", "semiliquid", "film", "rigid")


class WorkspaceError(RuntimeError):
    pass


class TravelLimitError(RuntimeError):
    pass


class GraspFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class Done:
    """Terminal marker returned by ``step_dip`` / ``step_grasp``."""

    state: object


@dataclass(frozen=True)
class Workspace:
    x: tuple[float, float] = (0.0, 100.0)
    y: tuple[float, float] = (-50.0, 50.0)
    z: tuple[float, float] = (-20.0, 100.0)

    def check(self, p) -> None:
        for v, (lo, hi), name in zip(p, (self.x, self.y, self.z), "xyz"):
            if not lo <= v <= hi:
                raise WorkspaceError(f"{name} = {v:.3f} mm leaves the workspace [{lo}, {hi}]")


@dataclass(frozen=True)
class EndEffectorState:
    position: tuple[float, float, float] = (50.0, 0.0, 10.0)
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    gripper_aperture: float = 40.0

    @property
    def x(self) -> float:
        return self.position[0]

    @property
    def z(self) -> float:
        return self.position[2]

    def moved(self, dx=0.0, dz=0.0, vx=None, vz=None, dt=1.0) -> "EndEffectorState":
        x, y, z = self.position
        vx = dx / dt if vx is None else vx
        vz = dz / dt if vz is None else vz
        return replace(self, position=(x + dx, y, z + dz), velocity=(vx, 0.0, vz))


@dataclass(frozen=True)
class PDGains:
    kp: float = 2.0                 # mm per unit coverage error
    kd: float = 0.5                 # mm per unit change of error per tick
    target_coverage: float = 0.5
    control_rate: float = 30.0      # Hz
    dz_limit: float = 1.0           # mm per tick

    def __post_init__(self):
        if self.kp < 0 or self.kd < 0:
            raise ValueError("gains must be non-negative")
        if not 0 < self.target_coverage < 1:
            raise ValueError("target_coverage must lie in (0, 1)")
        if not self.control_rate > 0 or not self.dz_limit > 0:
            raise ValueError("control_rate and dz_limit must be positive")

    @property
    def dt(self) -> float:
        return 1.0 / self.control_rate


# ---------------------------------------------------------------- world

@dataclass
class ContactWorld:
    """Surface heights over a lateral strip plus a penetration -> coverage law.

    ``coverage = clip(depth / wet_depth, 0, 1)`` where depth is how far the
    sensor bottom sits below the local surface. For liquids, contact also
    spreads the medium: the swept cell loses ``spread_rate * coverage`` mm of
    height per tick, down to ``floor``. A world with ``heights = None`` has
    no surface at all.
    """

    xs: np.ndarray
    heights: Optional[np.ndarray]
    medium: str = "liquid"
    wet_depth: float = 2.0
    spread_rate: float = 0.0
    floor: float = -math.inf
    sensor_length: float = 12.0

    def __post_init__(self):
        if self.medium not in MEDIA:
            raise ValueError(f"unknown medium {self.medium!r}")
        if not self.wet_depth > 0:
            raise ValueError("wet_depth must be positive")
        self.xs = np.asarray(self.xs, float)
        if self.heights is not None:
            self.heights = np.array(self.heights, float)
            if self.heights.shape != self.xs.shape:
                raise ValueError("heights must match xs")

    @classmethod
    def flat(cls, level: float = 0.0, medium: str = "liquid", width: float = 100.0,
             cells: int = 101, **kw) -> "ContactWorld":
        xs = np.linspace(0.0, width, cells)
        return cls(xs, np.full(cells, level), medium, **kw)

    @classmethod
    def empty(cls, width: float = 100.0) -> "ContactWorld":
        return cls(np.linspace(0.0, width, 2), None)

    def surface_at(self, x: float) -> Optional[float]:
        if self.heights is None:
            return None
        return float(np.interp(x, self.xs, self.heights))

    def coverage(self, state: EndEffectorState) -> float:
        h = self.surface_at(state.x)
        if h is None:
            return 0.0
        return float(np.clip((h - state.z) / self.wet_depth, 0.0, 1.0))

    def contact_response(self, state: EndEffectorState) -> pt.ContactSpec:
        """Ground-truth contact band, centred on the touching surface."""
        c = self.coverage(state)
        if c <= 0.0:
            return pt.NO_CONTACT
        half = 0.5 * c * self.sensor_length
        mid = 0.5 * self.sensor_length
        return pt.ContactSpec.band(mid - half, mid + half)

    def spread(self, state: EndEffectorState) -> None:
        if self.medium != "liquid" or self.spread_rate <= 0 or self.heights is None:
            return
        c = self.coverage(state)
        if c > 0:
            k = int(np.argmin(np.abs(self.xs - state.x)))
            self.heights[k] = max(self.heights[k] - self.spread_rate * c, self.floor)


# ---------------------------------------------------------------- observers

class FastObserver:
    """Ground-truth coverage, quantised to the image columns like a render."""

    def __init__(self, height: int = 48, width: int = 64, sensor_length: float = 12.0):
        self.height, self.width = height, width
        self.scene = pt.Scene2D(OpticalConfig(touching_length=sensor_length))

    def mask(self, spec: pt.ContactSpec, step: int = 0) -> np.ndarray:
        cols = pt.ground_truth_columns(self.scene, spec, self.width)
        return np.broadcast_to(cols, (self.height, self.width)).copy()

    def coverage(self, spec: pt.ContactSpec, step: int = 0) -> float:
        return stats(self.mask(spec, step)).coverage

    def pixel_count(self, spec: pt.ContactSpec, step: int = 0) -> int:
        return stats(self.mask(spec, step)).pixel_count


class RenderObserver(FastObserver):
    """Full chain: contact spec -> render -> segment -> stats.

    Traces are cached per contact spec; each step draws fresh sensor noise.
    """

    def __init__(self, scene: Optional[pt.Scene2D] = None, height: int = 48, width: int = 64,
                 rays: int = 30_000, seed: int = 0, thresholds: Thresholds = Thresholds(),
                 noise_sigma: float = pt.DEFAULT_NOISE.sigma, quantise: bool = True):
        self.scene = scene or realistic_scene()
        self.height, self.width = height, width
        self.rays, self.seed = rays, seed
        self.thresholds = thresholds
        self.noise_sigma = noise_sigma
        self.quantise = quantise
        self.cache: dict = {}
        self.exposure = pt.calibrate_exposure(self.scene, seed)
        frames = [self._frame(pt.NO_CONTACT, -1 - k) for k in range(10)]
        self.reference: ReferenceState = build_reference(frames)

    def _snap(self, spec: pt.ContactSpec) -> pt.ContactSpec:
        # snap band edges to column edges so the trace cache stays small
        if not self.quantise or not spec.intervals:
            return spec
        edges = pt.column_edges(self.scene, self.width)
        iv = []
        for a, b in spec.intervals:
            a, b = edges[np.argmin(np.abs(edges - a))], edges[np.argmin(np.abs(edges - b))]
            if b > a:
                iv.append((a, b))
        return pt.ContactSpec(tuple(iv), spec.albedo[:len(iv)]) if iv else pt.NO_CONTACT

    def _frame(self, spec: pt.ContactSpec, step: int) -> np.ndarray:
        noise = pt.NoiseModel(self.noise_sigma, 1_000_003 + step)
        return pt.render(self.scene, self._snap(spec), self.seed, self.rays, self.height,
                         self.width, self.exposure, noise, self.cache)

    def mask(self, spec: pt.ContactSpec, step: int = 0) -> np.ndarray:
        return segment(self._frame(spec, step), self.reference, self.thresholds)


def realistic_scene(config: Optional[OpticalConfig] = None, ambient: float = 1.0) -> pt.Scene2D:
    return pt.Scene2D(config or OpticalConfig(), led_intensity=1.0, ambient_intensity=ambient,
                      absorptivity=pt.REALISTIC_ABSORPTIVITY)


# ---------------------------------------------------------------- single steps

def step_spread(world: ContactWorld, state: EndEffectorState, gains: PDGains,
                observed_coverage: float, prev_error: Optional[float] = None,
                sweep_speed: float = 5.0,
                workspace: Workspace = Workspace()) -> tuple[EndEffectorState, float]:
    """One PD height update plus a constant lateral sweep.

    ``e = target - coverage``; ``dz = -(kp e + kd (e - e_prev))`` clamped to
    ``dz_limit``. The sweep reverses at the ends of the world strip. Returns
    the new state and ``e`` (feed it back as ``prev_error``).
    """
    if not 0.0 <= observed_coverage <= 1.0:
        raise ValueError("observed_coverage must lie in [0, 1]")
    e = gains.target_coverage - observed_coverage
    de = 0.0 if prev_error is None else e - prev_error
    dz = -(gains.kp * e + gains.kd * de)
    dz = float(np.clip(dz, -gains.dz_limit, gains.dz_limit))
    vx = state.velocity[0] if state.velocity[0] != 0 else sweep_speed
    dx = vx * gains.dt
    lo, hi = world.xs[0], world.xs[-1]
    if not lo <= state.x + dx <= hi:
        vx, dx = -vx, -dx
    new = state.moved(dx=dx, dz=dz, vx=vx, vz=dz / gains.dt)
    workspace.check(new.position)
    return new, e


def step_dip(world: ContactWorld, state: EndEffectorState, observed_coverage: float,
             approach_speed_fast: float = 30.0, approach_speed_slow: float = 3.0,
             stop_coverage: float = 0.5, dt: float = 1.0 / 30.0,
             travel_limit: float = -20.0):
    """Fast descent with no contact, slow descent in light contact, Done past ``stop_coverage``."""
    if not (approach_speed_fast > 0 and approach_speed_slow > 0):
        raise ValueError("approach speeds must be positive")
    if not 0.0 < stop_coverage <= 1.0:
        raise ValueError("stop_coverage must lie in (0, 1]")
    if observed_coverage > stop_coverage:
        return Done(replace(state, velocity=(0.0, 0.0, 0.0)))
    v = approach_speed_fast if observed_coverage <= 0.0 else approach_speed_slow
    new = state.moved(dz=-v * dt, vz=-v, vx=0.0)
    if new.z < travel_limit:
        raise TravelLimitError(f"surface never reached above z = {travel_limit} mm")
    return new


def step_film(left_contact: bool, right_contact: bool, state: EndEffectorState,
              speed: float = 10.0, return_gain: float = 2.0, center: float = 50.0,
              dt: float = 1.0 / 30.0) -> EndEffectorState:
    """Follow the contacting side; both in contact holds; neither returns to centre."""
    if left_contact and right_contact:
        vx = 0.0
    elif right_contact:
        vx = speed
    elif left_contact:
        vx = -speed
    else:
        vx = -return_gain * (state.x - center)
    return state.moved(dx=vx * dt, vx=vx, vz=0.0)


def step_grasp(pixel_count: int, aperture: float, close_speed: float = 5.0,
               stop_pixels: int = 100, dt: float = 1.0 / 30.0):
    """Close until one sensor reports more than ``stop_pixels`` contact pixels."""
    if not aperture > 0:
        raise ValueError("aperture must be positive")
    if not close_speed > 0:
        raise ValueError("close_speed must be positive")
    if pixel_count > stop_pixels:
        return Done(aperture)
    new = aperture - close_speed * dt
    if new <= 0.0:
        raise GraspFailed("grasp failed: gripper closed without reaching the pixel threshold")
    return new


# ---------------------------------------------------------------- closed loops

@dataclass
class LogRow:
    step: int
    x: float
    z: float
    coverage: float
    command: float
    phase: str = ""


def run_spread(world: ContactWorld, observer, steps: int = 700,
               gains: PDGains = PDGains(), start: EndEffectorState = EndEffectorState(),
               sweep_speed: float = 5.0) -> list[LogRow]:
    state, prev = start, None
    log = []
    for k in range(steps):
        cov = observer.coverage(world.contact_response(state), k)
        new, prev = step_spread(world, state, gains, cov, prev, sweep_speed)
        log.append(LogRow(k, state.x, state.z, cov, new.z - state.z))
        world.spread(new)
        state = new
    return log


def run_dip(world: ContactWorld, observer, start: EndEffectorState = EndEffectorState(),
            fast: float = 30.0, slow: float = 3.0, stop_coverage: float = 0.5,
            max_steps: int = 10_000, dt: float = 1.0 / 30.0,
            travel_limit: float = -20.0) -> list[LogRow]:
    state = start
    log = []
    for k in range(max_steps):
        cov = observer.coverage(world.contact_response(state), k)
        out = step_dip(world, state, cov, fast, slow, stop_coverage, dt, travel_limit)
        if isinstance(out, Done):
            log.append(LogRow(k, state.x, state.z, cov, 0.0, "done"))
            return log
        phase = "fast" if cov <= 0 else "slow"
        log.append(LogRow(k, state.x, state.z, cov, out.z - state.z, phase))
        state = out
    raise TravelLimitError("dip did not finish within max_steps")


@dataclass
class GraspWorld:
    """Object of ``width`` mm centred between the fingers; penetration of a
    finger into it maps to coverage over ``wet_depth`` like the contact world."""

    width: Optional[float] = 20.0
    wet_depth: float = 1.0
    sensor_length: float = 12.0

    def contact_response(self, aperture: float) -> pt.ContactSpec:
        if self.width is None:
            return pt.NO_CONTACT
        c = float(np.clip(0.5 * (self.width - aperture) / self.wet_depth, 0.0, 1.0))
        if c <= 0:
            return pt.NO_CONTACT
        mid, half = 0.5 * self.sensor_length, 0.5 * c * self.sensor_length
        return pt.ContactSpec.band(mid - half, mid + half)


def run_grasp(world: GraspWorld, observer, aperture: float = 30.0, close_speed: float = 5.0,
              stop_pixels: int = 100, dt: float = 1.0 / 30.0,
              max_steps: int = 100_000) -> list[LogRow]:
    log = []
    for k in range(max_steps):
        n = observer.pixel_count(world.contact_response(aperture), k)
        out = step_grasp(n, aperture, close_speed, stop_pixels, dt)
        if isinstance(out, Done):
            log.append(LogRow(k, 0.0, aperture, float(n), 0.0, "done"))
            return log
        log.append(LogRow(k, 0.0, aperture, float(n), out - aperture, "close"))
        aperture = out
    raise GraspFailed("grasp did not finish within max_steps")


@dataclass
class FilmWorld:
    """A film strip ``[left, right]`` (mm); each sensor is in contact when its
    lateral position lies on the strip. Sensors sit ``offset`` mm either
    side of the end effector."""

    left: float = 40.0
    right: float = 60.0
    offset: float = 15.0

    def contacts(self, x: float) -> tuple[bool, bool]:
        on = lambda p: self.left <= p <= self.right
        return on(x - self.offset), on(x + self.offset)


def run_film(world: FilmWorld, observer, steps: int = 300,
             start: EndEffectorState = EndEffectorState(), **kw) -> list[LogRow]:
    state = start
    log = []
    band = pt.ContactSpec.band(3.0, 9.0)
    for k in range(steps):
        truth = world.contacts(state.x)
        seen = tuple(observer.pixel_count(band if c else pt.NO_CONTACT, 2 * k + i) > 0
                     for i, c in enumerate(truth))
        new = step_film(seen[0], seen[1], state, **kw)
        log.append(LogRow(k, state.x, state.z, float(seen[0]) - float(seen[1]), new.x - state.x,
                          f"{int(seen[0])}{int(seen[1])}"))
        state = new
    return log


def write_log(path, log: list[LogRow]) -> None:
    with open(path, "w") as fh:
        fh.write("step,x_mm,z_mm,coverage,command,phase\n")
        for r in log:
            fh.write(f"{r.step},{r.x},{r.z},{r.coverage},{r.command},{r.phase}\n")
