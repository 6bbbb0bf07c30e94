"""Monte Carlo 2D light transport through the sensor cross-section.

Rays are traced forward from the internal LED and from ambient light entering
through the touching surface. Every ray owns an independent counter-based
random stream keyed by ``(seed, ray_index)``, so a trace over ray indices
``[0, N)`` equals the merge of traces over ``[0, k)`` and ``[k, N)``.
Camera accumulators are int64 fixed point, which makes that merge bit-exact
and independent of summation order.

The camera is modelled as an aperture segment focused on the touching plane:
a ray that leaves the viewing surface and crosses the aperture inside the
field of view is binned at the point where its in-medium line meets the
touching surface. Rays whose line misses the touching surface are outside
the view the shell allows and are discarded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from .optics import OpticalConfig, Segment

REALISTIC_ABSORPTIVITY = 0.95
MAX_BOUNCES = 32
ROULETTE_THRESHOLD = 1e-6
FIXED_POINT = float(2 ** 24)
_EPS = 1e-9
_CHUNK = 1 << 16

# counter layout: emission uses slots 0..3, bounce b uses 4*(b+1) + slot
_SLOT_EVENT, _SLOT_DIR, _SLOT_ROULETTE = 0, 1, 2


# ---------------------------------------------------------------- random streams

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def ray_keys(seed: int, index: np.ndarray) -> np.ndarray:
    """Per-ray stream keys; ``index`` is the global ray index (uint64)."""
    s = _mix(np.full(1, seed & 0xFFFFFFFFFFFFFFFF, dtype=np.uint64))[0]
    return _mix(index.astype(np.uint64) * _GOLDEN ^ s)


def uniform(keys: np.ndarray, counter: int) -> np.ndarray:
    """Uniform [0, 1) draw number ``counter`` from each stream."""
    z = _mix(keys + np.uint64(((counter + 1) * 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF))
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


# ---------------------------------------------------------------- scene types

@dataclass(frozen=True)
class Surface:
    segment: Segment
    kind: str                 # "touching" | "viewing" | "absorber"
    name: str
    absorptivity: float = 1.0


@dataclass(frozen=True)
class ContactSpec:
    """Contact intervals along the touching surface (mm from its start).

    ``texture`` optionally gives, per interval, an RGB profile sampled
    linearly across the interval; it replaces the flat albedo there.
    """

    intervals: tuple = ()
    albedo: tuple = ()
    texture: Optional[tuple] = None

    def __post_init__(self):
        iv = tuple((float(a), float(b)) for a, b in self.intervals)
        alb = tuple(tuple(float(c) for c in rgb) for rgb in self.albedo)
        if not alb and iv:
            alb = ((1.0, 1.0, 1.0),) * len(iv)
        if len(alb) != len(iv):
            raise ValueError("one albedo per interval")
        for a, b in iv:
            if not a < b:
                raise ValueError(f"empty or reversed interval ({a}, {b})")
        srt = sorted(iv)
        for (_, b0), (a1, _) in zip(srt, srt[1:]):
            if a1 < b0:
                raise ValueError("contact intervals overlap")
        for rgb in alb:
            if len(rgb) != 3 or not all(0.0 <= c <= 1.0 for c in rgb):
                raise ValueError("albedo must be RGB in [0, 1]")
        object.__setattr__(self, "intervals", iv)
        object.__setattr__(self, "albedo", alb)
        if self.texture is not None:
            tex = tuple(None if t is None else tuple(tuple(map(float, c)) for c in t)
                        for t in self.texture)
            if len(tex) != len(iv):
                raise ValueError("one texture entry per interval")
            object.__setattr__(self, "texture", tex)

    @classmethod
    def band(cls, start: float, end: float, albedo=(1.0, 1.0, 1.0)) -> "ContactSpec":
        return cls(((start, end),), (tuple(albedo),))

    def albedo_at(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(in_contact, rgb)`` for positions ``x`` (mm)."""
        inside = np.zeros(x.shape, bool)
        rgb = np.zeros(x.shape + (3,))
        for k, ((a, b), alb) in enumerate(zip(self.intervals, self.albedo)):
            m = (x >= a) & (x < b)
            if not m.any():
                continue
            inside |= m
            tex = self.texture[k] if self.texture is not None else None
            if tex is None:
                rgb[m] = alb
            else:
                prof = np.asarray(tex)
                s = (x[m] - a) / (b - a) * (len(prof) - 1)
                for c in range(3):
                    rgb[m, c] = np.interp(s, np.arange(len(prof)), prof[:, c])
        return inside, rgb

    def validate(self, length: float) -> None:
        for a, b in self.intervals:
            if a < -_EPS or b > length + _EPS:
                raise ValueError(f"contact interval ({a}, {b}) leaves the touching surface")


NO_CONTACT = ContactSpec()


def build_boundary(cfg: OpticalConfig, absorptivity=None) -> tuple[Surface, ...]:
    """Closed counter-clockwise boundary of the medium for ``cfg``.

    Vertices: touching start, touching end, viewing end, chamfer top, top-left,
    surface-A top. Surface A leaves the origin at interior angle ``theta_s``
    and rises ``surface_a_height``; the left wall continues vertically to the
    shell top.
    """
    absorb = dict(cfg.absorptivity)
    if absorptivity is not None:
        if isinstance(absorptivity, (int, float)):
            absorb = {k: float(absorptivity) for k in absorb}
        else:
            absorb.update(absorptivity)
    t = cfg.touching_surface
    v = cfg.viewing_surface
    h = cfg.shell_height
    ax = cfg.surface_a_height / math.tan(cfg.theta_s) if cfg.theta_s < math.pi / 2 else 0.0
    a_top = (ax, cfg.surface_a_height)
    p2 = v.b
    p3 = (p2[0] - cfg.chamfer, h)
    p4 = (ax, h)
    surfaces = [
        Surface(t, "touching", "touching"),
        Surface(v, "viewing", "viewing"),
        Surface(Segment(p2, p3), "absorber", "chamfer", absorb.get("chamfer", 1.0)),
        Surface(Segment(p3, p4), "absorber", "top", absorb.get("top", 1.0)),
        Surface(Segment(p4, a_top), "absorber", "left_wall", absorb.get("left_wall", 1.0)),
        Surface(Segment(a_top, t.a), "absorber", "surface_a", absorb.get("surface_a", 1.0)),
    ]
    return tuple(s for s in surfaces if s.segment.length > _EPS)


@dataclass(frozen=True)
class Scene2D:
    """Sensor cross-section plus sources.

    Intensities are linear lux proxies: each source emits a total power
    equal to its intensity, split evenly over its rays.
    """

    config: OpticalConfig = field(default_factory=OpticalConfig)
    led_intensity: float = 1.0
    ambient_intensity: float = 0.0
    absorptivity: Optional[object] = None   # override for every absorber
    fresnel: bool = False
    max_bounces: int = MAX_BOUNCES
    surfaces: Optional[tuple] = None        # explicit boundary, else built from config

    def __post_init__(self):
        if self.led_intensity < 0 or self.ambient_intensity < 0:
            raise ValueError("source intensities must be non-negative")

    @property
    def boundary(self) -> tuple[Surface, ...]:
        if self.surfaces is not None:
            return self.surfaces
        return build_boundary(self.config, self.absorptivity)

    def replace(self, **changes) -> "Scene2D":
        return replace(self, **changes)

    def validate(self) -> None:
        surf = self.boundary
        for s0, s1 in zip(surf, surf[1:] + surf[:1]):
            if np.hypot(*np.subtract(s0.segment.b, s1.segment.a)) > 1e-6:
                raise ValueError(f"scene boundary is not closed between {s0.name!r} and {s1.name!r}")
        kinds = [s.kind for s in surf]
        if kinds.count("touching") != 1 or kinds.count("viewing") != 1:
            raise ValueError("scene needs exactly one touching and one viewing surface")
        poly = np.array([s.segment.a for s in surf])
        if _signed_area(poly) <= 0:
            raise ValueError("scene boundary must be counter-clockwise and non-degenerate")
        if self.led_intensity > 0 and not _inside(poly, self.config.led_position):
            raise ValueError("LED lies outside the medium")


def _signed_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _inside(poly: np.ndarray, p) -> bool:
    x, y = p
    inside = False
    for (x0, y0), (x1, y1) in zip(poly, np.roll(poly, -1, axis=0)):
        if (y0 > y) != (y1 > y):
            if x < x0 + (y - y0) * (x1 - x0) / (y1 - y0):
                inside = not inside
    return inside


# ---------------------------------------------------------------- camera profile

@dataclass
class CameraProfile:
    """Per-column camera accumulators, split by source.

    Sums are fixed point (``FIXED_POINT`` units per unit throughput).
    :attr:`flux` is the power collected per column; :attr:`radiance` divides
    it by the column's etendue, which is what a camera pixel reports.
    """

    led_sum: np.ndarray
    ambient_sum: np.ndarray
    led_rays: int
    ambient_rays: int
    led_intensity: float
    ambient_intensity: float
    etendue: np.ndarray

    @property
    def pixel_count(self) -> int:
        return self.led_sum.shape[0]

    @property
    def ray_count(self) -> int:
        return self.led_rays + self.ambient_rays

    @property
    def flux(self) -> np.ndarray:
        out = np.zeros(self.led_sum.shape)
        if self.led_rays and self.led_intensity:
            out += self.led_sum * (self.led_intensity / (FIXED_POINT * self.led_rays))
        if self.ambient_rays and self.ambient_intensity:
            out += self.ambient_sum * (self.ambient_intensity / (FIXED_POINT * self.ambient_rays))
        return out

    @property
    def radiance(self) -> np.ndarray:
        g = self.etendue[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(g > 0, self.flux / g, 0.0)

    def merge(self, other: "CameraProfile") -> "CameraProfile":
        if (self.pixel_count != other.pixel_count
                or not np.array_equal(self.etendue, other.etendue)
                or self.led_intensity != other.led_intensity
                or self.ambient_intensity != other.ambient_intensity):
            raise ValueError("profiles from different scenes cannot be merged")
        return CameraProfile(self.led_sum + other.led_sum,
                             self.ambient_sum + other.ambient_sum,
                             self.led_rays + other.led_rays,
                             self.ambient_rays + other.ambient_rays,
                             self.led_intensity, self.ambient_intensity, self.etendue)

    def same_as(self, other: "CameraProfile") -> bool:
        return (np.array_equal(self.led_sum, other.led_sum)
                and np.array_equal(self.ambient_sum, other.ambient_sum)
                and self.led_rays == other.led_rays
                and self.ambient_rays == other.ambient_rays)

    def to_csv(self, path) -> None:
        rad = self.radiance
        rows = ["column,r,g,b"] + [f"{i},{r},{g},{b}" for i, (r, g, b) in enumerate(rad)]
        with open(path, "w") as fh:
            fh.write("\n".join(rows) + "\n")


# ---------------------------------------------------------------- tracing

def _cross(ax, ay, bx, by):
    return ax * by - ay * bx


class _Geometry:
    """Boundary arrays and camera frame, precomputed once per trace."""

    def __init__(self, scene: Scene2D):
        surf = scene.boundary
        self.surfaces = surf
        self.a = np.array([s.segment.a for s in surf], float)
        self.e = np.array([np.subtract(s.segment.b, s.segment.a) for s in surf], float)
        tang = self.e / np.hypot(self.e[:, 0], self.e[:, 1])[:, None]
        self.tangent = tang
        self.normal_in = np.stack([-tang[:, 1], tang[:, 0]], axis=1)
        self.kind = [s.kind for s in surf]
        self.absorb = np.array([s.absorptivity for s in surf])
        self.i_touch = self.kind.index("touching")
        self.i_view = self.kind.index("viewing")
        cfg = scene.config
        self.ratio = cfg.media.n_medium / cfg.media.n_air
        self.length = surf[self.i_touch].segment.length
        self.cam = np.asarray(cfg.camera_position, float)
        self.axis = np.array([math.cos(cfg.camera_axis), math.sin(cfg.camera_axis)])
        self.cos_half_fov = math.cos(cfg.camera_fov / 2)
        self.half_aperture = cfg.camera_aperture / 2


def _fresnel_reflectance(cos_i: np.ndarray, n1: float, n2: float) -> np.ndarray:
    """Unpolarised Fresnel reflectance going from index n1 into n2."""
    sin_t = n1 / n2 * np.sqrt(np.clip(1.0 - cos_i ** 2, 0.0, 1.0))
    tir = sin_t >= 1.0
    cos_t = np.sqrt(np.clip(1.0 - sin_t ** 2, 0.0, 1.0))
    rs = ((n1 * cos_i - n2 * cos_t) / (n1 * cos_i + n2 * cos_t)) ** 2
    rp = ((n1 * cos_t - n2 * cos_i) / (n1 * cos_t + n2 * cos_i)) ** 2
    return np.where(tir, 1.0, 0.5 * (rs + rp))


def _emit(scene: Scene2D, geo: _Geometry, contact: ContactSpec, idx: np.ndarray,
          keys: np.ndarray, led: np.ndarray):
    n = idx.size
    pos = np.empty((n, 2))
    d = np.empty((n, 2))
    alive = np.ones(n, bool)
    cfg = scene.config
    u0 = uniform(keys, 0)
    u1 = uniform(keys, 1)

    # LED: uniform angle inside the cone
    ang = cfg.led_axis + (2.0 * u0[led] - 1.0) * cfg.led_half_angle
    pos[led] = cfg.led_position
    d[led, 0] = np.cos(ang)
    d[led, 1] = np.sin(ang)

    # ambient: uniform point on the touching surface, uniform angle in air
    amb = ~led
    it = geo.i_touch
    x = u0[amb] * geo.length
    pos[amb] = geo.a[it] + x[:, None] * geo.tangent[it]
    blocked, _ = contact.albedo_at(x)
    # isotropic radiance outside: cosine-weighted incidence in air
    sin_alpha = 2.0 * u1[amb] - 1.0
    alpha = np.arcsin(sin_alpha)
    theta = np.arcsin(sin_alpha / geo.ratio)
    d[amb] = (np.cos(theta)[:, None] * geo.normal_in[it]
              + np.sin(theta)[:, None] * geo.tangent[it])
    amb_alive = ~blocked
    if scene.fresnel:
        r = _fresnel_reflectance(np.cos(alpha), 1.0, geo.ratio)
        amb_alive &= uniform(keys[amb], 2) >= r
    alive[amb] = amb_alive
    return pos, d, alive


def _trace_chunk(scene, geo, contact, seed, idx, led_sum, amb_sum, accept):
    keys = ray_keys(seed, idx)
    led = (idx % np.uint64(2)) == 0
    if scene.led_intensity == 0:
        keep = ~led
    elif scene.ambient_intensity == 0:
        keep = led
    else:
        keep = np.ones(idx.size, bool)
    keys, led = keys[keep], led[keep]
    if keys.size == 0:
        return
    pos, d, alive = _emit(scene, geo, contact, idx[keep], keys, led)
    w = np.ones((keys.size, 3))
    sel = alive
    pos, d, w, keys, led = pos[sel], d[sel], w[sel], keys[sel], led[sel]
    # next-event estimation for the direct contact -> camera path; the
    # acceptance table has no Fresnel losses, so it is off in that mode
    nee = accept is not None
    fresh = np.zeros(keys.size, bool)

    for bounce in range(scene.max_bounces):
        n = keys.size
        if n == 0:
            break
        base = 4 * (bounce + 1)
        t_best, j_best, u_best = _nearest_hit(geo, pos, d)

        hit = j_best >= 0
        pos = pos + np.where(hit, t_best, 0.0)[:, None] * d
        n_in = geo.normal_in[np.maximum(j_best, 0)]
        tang = geo.tangent[np.maximum(j_best, 0)]
        dn = np.einsum("ij,ij->i", d, n_in)
        reflected = d - 2.0 * dn[:, None] * n_in
        u_event = uniform(keys, base + _SLOT_EVENT)

        new_d = reflected
        survive = hit.copy()
        new_fresh = np.zeros(n, bool)

        # touching surface
        m_t = j_best == geo.i_touch
        if m_t.any():
            x = u_best[m_t] * geo.length
            in_c, rgb = contact.albedo_at(x)
            idx_t = np.flatnonzero(m_t)
            ic = idx_t[in_c]
            if ic.size:
                s = 2.0 * uniform(keys[ic], base + _SLOT_DIR) - 1.0
                c = np.sqrt(1.0 - s * s)
                new_d[ic] = c[:, None] * n_in[ic] + s[:, None] * tang[ic]
                w[ic] *= rgb[in_c]
                if nee:
                    nb = accept.size
                    b = np.minimum((x[in_c] * (nb / geo.length)).astype(np.int64), nb - 1)
                    _deposit(b // _ACCEPT_SUB, w[ic] * accept[b][:, None], led[ic],
                             led_sum, amb_sum)
                    new_fresh[ic] = True
            nc = idx_t[~in_c]
            if scene.fresnel and nc.size:
                r = _fresnel_reflectance(-dn[nc], geo.ratio, 1.0)
                survive[nc] &= u_event[nc] < r

        # viewing surface
        m_v = j_best == geo.i_view
        if m_v.any():
            iv = np.flatnonzero(m_v)
            cos_i = -dn[iv]
            sin_t = geo.ratio * np.sqrt(np.clip(1.0 - cos_i ** 2, 0.0, 1.0))
            out = sin_t < 1.0
            if scene.fresnel:
                r = _fresnel_reflectance(cos_i, geo.ratio, 1.0)
                out &= u_event[iv] >= r
            ex = iv[out]
            if ex.size:
                cnt = ~fresh[ex]
                acc = ex[cnt]
                _to_camera(geo, pos[acc], d[acc], -n_in[acc], cos_i[out][cnt], w[acc],
                           led[acc], led_sum, amb_sum)
                survive[ex] = False

        # absorbers: survive as a specular bounce with probability 1 - a
        m_a = hit & ~m_t & ~m_v
        if m_a.any():
            ia = np.flatnonzero(m_a)
            survive[ia] &= u_event[ia] < 1.0 - geo.absorb[j_best[ia]]

        # russian roulette on relative throughput
        low = survive & (w.max(axis=1) < ROULETTE_THRESHOLD)
        if low.any():
            il = np.flatnonzero(low)
            live = uniform(keys[il], base + _SLOT_ROULETTE) < 0.5
            survive[il[~live]] = False
            w[il[live]] *= 2.0

        pos, d, w, keys, led = (pos[survive], new_d[survive], w[survive],
                                keys[survive], led[survive])
        fresh = new_fresh[survive]


def _camera_hits(geo, p, d_in, n_out, cos_i):
    """Refract out of the viewing surface and test the camera.

    Returns ``(ok, u)``: accepted mask and the touching-surface parameter the
    in-medium line projects back to.
    """
    tang_part = d_in - cos_i[:, None] * n_out
    sin_t = geo.ratio * np.hypot(tang_part[:, 0], tang_part[:, 1])
    cos_t = np.sqrt(np.clip(1.0 - sin_t ** 2, 0.0, 1.0))
    d_out = geo.ratio * tang_part + cos_t[:, None] * n_out

    da = d_out @ geo.axis
    with np.errstate(divide="ignore", invalid="ignore"):
        t = ((geo.cam - p) @ geo.axis) / da
    q = p + np.where(np.isfinite(t), t, 0.0)[:, None] * d_out
    perp = np.array([-geo.axis[1], geo.axis[0]])
    lateral = (q - geo.cam) @ perp
    ok = (sin_t < 1.0) & (-da >= geo.cos_half_fov) & (t > 0) & (np.abs(lateral) <= geo.half_aperture)

    it = geo.i_touch
    ex, ey = geo.e[it]
    wx = geo.a[it, 0] - p[:, 0]
    wy = geo.a[it, 1] - p[:, 1]
    den = _cross(-d_in[:, 0], -d_in[:, 1], ex, ey)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = _cross(wx, wy, ex, ey) / den
        u = _cross(wx, wy, -d_in[:, 0], -d_in[:, 1]) / den
    ok &= (np.abs(den) > 1e-15) & (s >= 0) & (u >= 0.0) & (u < 1.0)
    return ok, u


def _to_camera(geo, p, d_in, n_out, cos_i, w, led, led_sum, amb_sum):
    ok, u = _camera_hits(geo, p, d_in, n_out, cos_i)
    if not ok.any():
        return
    cols = np.minimum((u[ok] * led_sum.shape[0]).astype(np.int64), led_sum.shape[0] - 1)
    _deposit(cols, w[ok], led[ok], led_sum, amb_sum)


def _deposit(cols, w, is_led, led_sum, amb_sum):
    q = np.rint(w * FIXED_POINT).astype(np.int64)
    for ch in range(3):
        np.add.at(led_sum[:, ch], cols[is_led], q[is_led, ch])
        np.add.at(amb_sum[:, ch], cols[~is_led], q[~is_led, ch])


def _nearest_hit(geo, pos, d):
    n = pos.shape[0]
    t_best = np.full(n, np.inf)
    j_best = np.full(n, -1)
    u_best = np.zeros(n)
    for j in range(len(geo.surfaces)):
        ex, ey = geo.e[j]
        wx = geo.a[j, 0] - pos[:, 0]
        wy = geo.a[j, 1] - pos[:, 1]
        den = _cross(d[:, 0], d[:, 1], ex, ey)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = _cross(wx, wy, ex, ey) / den
            u = _cross(wx, wy, d[:, 0], d[:, 1]) / den
        ok = (np.abs(den) > 1e-15) & (t > _EPS) & (u >= 0.0) & (u <= 1.0) & (t < t_best)
        t_best[ok] = t[ok]
        j_best[ok] = j
        u_best[ok] = u[ok]
    return t_best, j_best, u_best


_ACCEPT_SUB = 8
_ACCEPT_CACHE: dict = {}


def acceptance_table(scene: Scene2D, pixel_count: int) -> np.ndarray:
    """Cached :func:`direct_acceptance` at ``_ACCEPT_SUB`` bins per column."""
    cfg = scene.config
    key = (tuple((s.segment, s.kind) for s in scene.boundary), cfg.media,
           cfg.camera_position, cfg.camera_axis, cfg.camera_fov,
           cfg.camera_aperture, pixel_count)
    if key not in _ACCEPT_CACHE:
        _ACCEPT_CACHE[key] = direct_acceptance(scene, pixel_count * _ACCEPT_SUB)
    return _ACCEPT_CACHE[key]


def direct_acceptance(scene: Scene2D, bins: int, angles: int = 2048) -> np.ndarray:
    """Fraction of a Lambertian emitter at each touching-surface bin that
    reaches the camera directly (touching -> viewing -> aperture).

    Quadrature at bin centres over ``angles`` directions uniform in
    sin(theta), i.e. cosine weighted.
    """
    geo = _Geometry(scene)
    it, iv = geo.i_touch, geo.i_view
    xs = (np.arange(bins) + 0.5) * (geo.length / bins)
    s = -1.0 + (np.arange(angles) + 0.5) * (2.0 / angles)
    X, S = np.meshgrid(xs, s, indexing="ij")
    C = np.sqrt(1.0 - S * S)
    pos = geo.a[it] + X.reshape(-1, 1) * geo.tangent[it]
    d = C.reshape(-1, 1) * geo.normal_in[it] + S.reshape(-1, 1) * geo.tangent[it]
    t, j, _ = _nearest_hit(geo, pos, d)
    on_v = j == iv
    p = pos[on_v] + t[on_v, None] * d[on_v]
    n_out = -geo.normal_in[iv]
    cos_i = d[on_v] @ n_out
    ok, _ = _camera_hits(geo, p, d[on_v], np.broadcast_to(n_out, p.shape), cos_i)
    accepted = np.zeros(X.size, bool)
    accepted[np.flatnonzero(on_v)[ok]] = True
    return accepted.reshape(bins, angles).mean(axis=1)


def column_etendue(scene: Scene2D, pixel_count: int) -> np.ndarray:
    """Geometric etendue of each column toward the camera (mm, 2D).

    A Lambertian column of radiance L delivers ``L * G`` power.
    """
    frac = acceptance_table(scene, pixel_count).reshape(pixel_count, _ACCEPT_SUB)
    width = _touch_len(scene) / pixel_count
    return 2.0 * width * frac.mean(axis=1)


def trace(scene: Scene2D, contact: ContactSpec = NO_CONTACT, seed: int = 0,
          rays: int = 100_000, pixel_count: int = 64, first_ray: int = 0,
          nee: bool = True) -> CameraProfile:
    """Trace ray indices ``[first_ray, first_ray + rays)``.

    Even indices start at the LED, odd ones as ambient light; a source with
    zero intensity is skipped (its rays would contribute exactly zero).
    With ``nee`` the direct contact -> camera path is added in expectation
    from the acceptance table instead of being sampled (same mean, far less
    noise); it is ignored in Fresnel mode.
    """
    if rays < 1:
        raise ValueError("rays must be >= 1")
    if pixel_count < 1:
        raise ValueError("pixel_count must be >= 1")
    scene.validate()
    geo = _Geometry(scene)
    contact.validate(geo.length)
    led_sum = np.zeros((pixel_count, 3), np.int64)
    amb_sum = np.zeros((pixel_count, 3), np.int64)
    accept = None
    if nee and contact.intervals and not scene.fresnel:
        accept = acceptance_table(scene, pixel_count)
    stop = first_ray + rays
    for lo in range(first_ray, stop, _CHUNK):
        idx = np.arange(lo, min(lo + _CHUNK, stop), dtype=np.uint64)
        _trace_chunk(scene, geo, contact, seed, idx, led_sum, amb_sum, accept)
    n_led = (stop + 1) // 2 - (first_ray + 1) // 2
    return CameraProfile(led_sum, amb_sum, n_led, rays - n_led,
                         scene.led_intensity, scene.ambient_intensity,
                         column_etendue(scene, pixel_count))


def emitted_power(scene: Scene2D) -> float:
    """Total source power; an upper bound on ``profile.flux.sum()`` per channel."""
    return scene.led_intensity + scene.ambient_intensity


# ---------------------------------------------------------------- sweeps

@dataclass(frozen=True)
class SweepRow:
    value: float
    mean: float
    std: float


SWEEP_VARIABLES = ("external_intensity", "led_intensity", "theta_s", "absorptivity")


def scene_for(scene: Scene2D, variable: str, value: float) -> Scene2D:
    if variable == "external_intensity":
        return scene.replace(ambient_intensity=float(value))
    if variable == "led_intensity":
        return scene.replace(led_intensity=float(value))
    if variable == "theta_s":
        if scene.surfaces is not None:
            raise ValueError("theta_s sweep needs a config-built scene")
        return scene.replace(config=scene.config.with_(theta_s=float(value)))
    if variable == "absorptivity":
        return scene.replace(absorptivity=float(value))
    raise ValueError(f"unknown sweep variable {variable!r}; expected one of {SWEEP_VARIABLES}")


def leakage(profile: CameraProfile) -> tuple[float, float]:
    """Mean and std of per-pixel (channel-averaged) radiance."""
    lum = profile.radiance.mean(axis=1)
    return float(lum.mean()), float(lum.std())


def leakage_sweep(scene: Scene2D, variable: str, values: Sequence[float], seed: int = 0,
                  rays: int = 100_000, pixel_count: int = 64) -> list[SweepRow]:
    """No-contact leakage for each value of ``variable``.

    ``theta_s`` values are in radians. The same seed is used for every row,
    so rows share their random streams.
    """
    rows = []
    for v in values:
        prof = trace(scene_for(scene, variable, v), NO_CONTACT, seed, rays, pixel_count)
        mean, std = leakage(prof)
        rows.append(SweepRow(float(v), mean, std))
    return rows


# ---------------------------------------------------------------- rendering

@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean Gaussian read noise in gray levels, clipped at 0."""

    sigma: float = 0.8
    seed: int = 0


DEFAULT_NOISE = NoiseModel()
REFERENCE_GRAY = 200.0


def calibrate_exposure(scene: Scene2D, seed: int = 0, rays: int = 200_000,
                       pixel_count: int = 64, target: float = REFERENCE_GRAY) -> float:
    """Exposure scale that maps a full white contact render to ``target`` at its peak."""
    full = ContactSpec.band(0.0, _touch_len(scene))
    peak = float(trace(scene, full, seed, rays, pixel_count).radiance.max())
    if peak <= 0:
        raise ValueError("reference contact produced no camera signal")
    return target / peak


def _touch_len(scene: Scene2D) -> float:
    return next(s.segment.length for s in scene.boundary if s.kind == "touching")


def profile_to_gray(radiance: np.ndarray, exposure_scale: float) -> np.ndarray:
    return radiance * exposure_scale


def render(scene: Scene2D, contact: Union[ContactSpec, Sequence[ContactSpec]] = NO_CONTACT,
           seed: int = 0, rays: int = 100_000, height: int = 48, width: int = 64,
           exposure_scale: float = 1.0, noise: Optional[NoiseModel] = DEFAULT_NOISE,
           cache: Optional[dict] = None) -> np.ndarray:
    """Render an ``height x width`` 8-bit RGB frame.

    A single ContactSpec is extruded over every row; a sequence gives one
    spec per row (rows with equal specs share one trace). ``cache`` may be a
    dict reused across calls to avoid re-tracing identical specs.
    """
    if height < 1 or width < 1:
        raise ValueError("image dimensions must be positive")
    if isinstance(contact, ContactSpec):
        rows = [contact] * height
    else:
        rows = list(contact)
        if len(rows) != height:
            raise ValueError("need one ContactSpec per row")
    cache = {} if cache is None else cache
    linear = np.empty((height, width, 3))
    for r, spec in enumerate(rows):
        key = (spec, seed, rays, width)
        if key not in cache:
            cache[key] = trace(scene, spec, seed, rays, width).radiance
        linear[r] = cache[key]
    gray = linear * exposure_scale
    if noise is not None and noise.sigma > 0:
        rng = np.random.default_rng([seed, noise.seed])
        gray = gray + rng.normal(0.0, noise.sigma, gray.shape)
    return np.clip(np.rint(gray), 0, 255).astype(np.uint8)


def column_edges(scene: Scene2D, width: int) -> np.ndarray:
    """Touching-surface positions (mm) of the ``width + 1`` column edges."""
    return np.linspace(0.0, _touch_len(scene), width + 1)


def ground_truth_columns(scene: Scene2D, contact: ContactSpec, width: int) -> np.ndarray:
    """Columns whose centre lies in contact."""
    edges = column_edges(scene, width)
    centres = 0.5 * (edges[:-1] + edges[1:])
    inside, _ = contact.albedo_at(centres)
    return inside


def ground_truth_mask(scene: Scene2D, rows: Sequence[ContactSpec], width: int) -> np.ndarray:
    return np.stack([ground_truth_columns(scene, spec, width) for spec in rows])
