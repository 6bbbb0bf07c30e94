"""Acceptance suite: one test per numbered criterion.

A PASS/FAIL line per criterion is printed in the terminal summary
(see conftest.py).
"""
import itertools
import math
import time

import mpmath
import numpy as np
import pytest

from tactoptics import calibration as cal
from tactoptics import control as ctl
from tactoptics import phototrace as pt
from tactoptics import segmentation as seg
from tactoptics.cli import main
from tactoptics.imaging import connected_components, label, mean_std, remap
from tactoptics.optics import (OpticalConfig, camera_exclusion_angle, critical_angle,
                               full_report, max_led_incidence)

from oracles import flood_fill_components

THETA_C = critical_angle(OpticalConfig().media)
REAL = pt.Scene2D(OpticalConfig(), 1.0, 1.0, absorptivity=pt.REALISTIC_ABSORPTIVITY)
criterion = pytest.mark.criterion


def non_decreasing(xs):
    return all(b >= a for a, b in zip(xs, xs[1:]))


# ---------------------------------------------------------------- 1

@criterion(1, "zero leakage with ideal absorbers, 1e6 rays, < 30 s")
def test_zero_leakage_theorem():
    scene = pt.Scene2D(OpticalConfig(), led_intensity=1.0, ambient_intensity=1.0)
    t = time.perf_counter()
    prof = pt.trace(scene, pt.NO_CONTACT, 0, 1_000_000)
    elapsed = time.perf_counter() - t
    assert prof.ray_count == 1_000_000
    assert not prof.led_sum.any() and not prof.ambient_sum.any()
    assert np.all(prof.radiance == 0.0)
    assert elapsed < 30


# ---------------------------------------------------------------- 2

STEEP_LED = OpticalConfig(led_position=(4.0, 7.0), led_axis=math.radians(-60),
                          led_half_angle=math.radians(20))
CONDITIONS = ("external_rejection", "internal_rejection", "contact_transmission")


def failing(cfg):
    r = full_report(cfg)
    return [name for name in CONDITIONS if not getattr(r, name).passed]


@criterion(2, "design check default passes; three perturbations flip one condition each")
def test_design_condition_conformance(tmp_path, capsys):
    assert failing(OpticalConfig()) == []
    assert failing(OpticalConfig(theta_tv=math.radians(60))) == ["external_rejection"]
    assert failing(OpticalConfig(theta_tv=math.radians(140))) == ["contact_transmission"]
    assert max_led_incidence(STEEP_LED) >= STEEP_LED.theta_tv - THETA_C
    assert failing(STEEP_LED) == ["internal_rejection"]

    assert main(["design", "check"]) == 0
    perturbed = {
        '{"theta_tv_deg": 60}': "external_rejection",
        '{"theta_tv_deg": 140}': "contact_transmission",
        '{"led": {"position_mm": [4, 7], "axis_deg": -60, "half_angle_deg": 20}}':
            "internal_rejection",
    }
    capsys.readouterr()
    for k, (text, name) in enumerate(perturbed.items()):
        path = tmp_path / f"c{k}.json"
        path.write_text(text)
        assert main(["design", "check", "--config", str(path)]) == 1
        out = capsys.readouterr().out.splitlines()
        assert [ln.split()[0] for ln in out if " FAIL " in ln] == [name]


# ---------------------------------------------------------------- 3

def exclusion_by_ray_construction(theta_tv: float, n: float = 1.45) -> mpmath.mpf:
    """Follow the grazing ambient ray through both faces with vector Snell's law.

    Touching face on y = 0 with the medium above; the viewing face leaves
    the corner at interior angle theta_tv. The result is the exit ray's
    angle measured from -x.
    """
    with mpmath.workdps(50):
        n = mpmath.mpf(n)
        tv = mpmath.mpf(theta_tv)
        # grazing incidence from below refracts to the critical angle
        sin_t = 1 / n
        d = mpmath.matrix([sin_t, mpmath.sqrt(1 - sin_t ** 2)])
        normal = mpmath.matrix([mpmath.sin(tv), mpmath.cos(tv)])     # outward, viewing face
        cos_i = d[0] * normal[0] + d[1] * normal[1]
        k = 1 - n ** 2 * (1 - cos_i ** 2)
        out = n * d + (mpmath.sqrt(k) - n * cos_i) * normal
        return mpmath.pi - mpmath.atan2(out[1], out[0])


@criterion(3, "camera exclusion angle: pi/2 + theta_c at theta_c; 100 high-precision checks")
def test_camera_exclusion_formula():
    at_c = camera_exclusion_angle(OpticalConfig(theta_tv=THETA_C))
    assert abs(at_c - (math.pi / 2 + THETA_C)) < 1e-9
    rng = np.random.default_rng(2024)
    worst = 0.0
    for t in rng.uniform(THETA_C, 2 * THETA_C, 100):
        got = camera_exclusion_angle(OpticalConfig(theta_tv=float(t)))
        worst = max(worst, abs(got - float(exclusion_by_ray_construction(float(t)))))
    assert worst < 1e-9


# ---------------------------------------------------------------- 4

@criterion(4, "leakage non-decreasing over 6 ambient intensities, 1e5 rays/point, < 2 min")
def test_external_light_trend():
    t = time.perf_counter()
    rows = pt.leakage_sweep(REAL, "external_intensity", [0.5, 1.0, 2.0, 4.0, 8.0, 16.0],
                            seed=0, rays=100_000)
    elapsed = time.perf_counter() - t
    means = [r.mean for r in rows]
    assert means[-1] > means[0] > 0
    assert non_decreasing(means)
    assert elapsed < 120


# ---------------------------------------------------------------- 5

@criterion(5, "leakage non-decreasing as theta_s falls 45 -> 30 deg")
def test_wedge_shell_trend():
    angles = [math.radians(a) for a in (45, 40, 35, 30)]
    rows = pt.leakage_sweep(REAL, "theta_s", angles, seed=0, rays=4_000_000)
    means = [r.mean for r in rows]
    assert non_decreasing(means)
    assert means[-1] > means[0]


# ---------------------------------------------------------------- 6

@criterion(6, "segmentation rule matches brute force on 1331 stride-5 cases")
def test_segmentation_truth_table():
    cube = np.array(list(itertools.product(range(0, 51, 5), repeat=3)))
    got = seg.contact_rule(cube, seg.Thresholds(25, 20, 30, 40))
    want = []
    for d in cube:
        above = lambda t: sum(int(v) > t for v in d)
        want.append(sum(int(v) for v in d) / 3 > 25 or above(20) >= 1 or above(30) >= 2
                    or above(40) == 3)
    assert len(cube) == 1331
    assert int((got != np.array(want)).sum()) == 0


# ---------------------------------------------------------------- 7

def polynomial_warp(center, scale):
    cx, cy = center

    def f(x, y):
        u, v = (x - cx) / scale, (y - cy) / scale
        return (x + scale * (0.04 * u * u + 0.03 * u * v - 0.02 * v ** 3),
                y + scale * (0.03 * v * v - 0.025 * u * v + 0.02 * u ** 3))
    return f


@criterion(7, "calibration round trip within 0.5 px; row-major order never broken")
def test_calibration_round_trip():
    spec = cal.GridSpec(5, 5, 3.0)
    base, _ = cal.render_grid(spec)
    c = ((base.shape[1] - 1) / 2, (base.shape[0] - 1) / 2)
    warps = {"identity": None, "rotation 10": cal.rotation_warp(10, c),
             "anisotropic 1.2": cal.scale_warp(1.2, 1.0, c),
             "polynomial": polynomial_warp(c, base.shape[0] / 2)}
    lattice, _, _ = cal.lattice(spec, 10.0)
    for name, w in warps.items():
        img, true = cal.render_grid(spec, warp=w)
        det = cal.detect_grid(img, spec)
        # each detected slot must hold the imprint rendered at that slot
        assert np.hypot(*(det.centers - true).transpose(2, 0, 1)).max() < 0.5, name
        m = cal.build_rectify_map(det, spec, 10.0)
        again = cal.detect_grid(remap(img, m), spec)
        assert np.hypot(*(again.centers - lattice).transpose(2, 0, 1)).max() < 0.5, name


# ---------------------------------------------------------------- 8

def rows_from_mask(mask, albedo, edges):
    specs = []
    for row in mask:
        iv, c, w = [], 0, len(row)
        while c < w:
            if row[c]:
                s = c
                while c < w and row[c]:
                    c += 1
                iv.append((float(edges[s]), float(edges[c])))
            else:
                c += 1
        specs.append(pt.ContactSpec(tuple(iv), (albedo,) * len(iv)))
    return specs


@criterion(8, "render -> segment IoU >= 0.95 on 20 layouts; no-contact mean gray < 3")
def test_end_to_end_perception():
    h, w = 48, 64
    exposure = pt.calibrate_exposure(REAL)
    cache = {}
    refs = [pt.render(REAL, pt.NO_CONTACT, 0, 100_000, h, w, exposure, pt.NoiseModel(0.8, k), cache)
            for k in range(10)]
    assert max(mean_std(f)[0] for f in refs) < 3
    ref = seg.build_reference(refs)
    edges = pt.column_edges(REAL, w)
    rng = np.random.default_rng(1)
    yy, xx = np.indices((h, w))
    ious = []
    for k in range(20):
        mask = np.zeros((h, w), bool)
        for _ in range(rng.integers(1, 4)):
            cx, cy = rng.uniform(0, w), rng.uniform(0, h)
            a, b = rng.uniform(4, 20), rng.uniform(4, 15)
            mask |= ((xx - cx) / a) ** 2 + ((yy - cy) / b) ** 2 <= 1
        albedo = tuple(rng.uniform(0.6, 1.0, 3))
        rows = rows_from_mask(mask, albedo, edges)
        gt = pt.ground_truth_mask(REAL, rows, w)
        assert np.array_equal(gt, mask)
        frame = pt.render(REAL, rows, 0, 100_000, h, w, exposure, pt.NoiseModel(0.8, 100 + k),
                          cache)
        got = seg.segment(frame, ref)
        ious.append((got & gt).sum() / max((got | gt).sum(), 1))
    assert min(ious) >= 0.95


# ---------------------------------------------------------------- 9

def check_spread(observer):
    world = ctl.ContactWorld.flat(0.0, spread_rate=0.002)
    c = np.array([r.coverage for r in ctl.run_spread(world, observer, 700)])
    inside = np.abs(c - 0.5) <= 0.05
    settle = next(i for i in range(len(c)) if inside[i:].all())
    assert settle <= 200 and len(c) - settle >= 500


def check_dip(observer):
    world = ctl.ContactWorld.flat(0.0, medium="semiliquid")
    log = ctl.run_dip(world, observer, ctl.EndEffectorState(position=(50, 0, 50)))
    phases = [r.phase for r in log]
    first_slow = phases.index("slow")
    assert first_slow > 0 and set(phases[:first_slow]) == {"fast"}
    assert set(phases[first_slow:-1]) == {"slow"} and phases[-1] == "done"
    assert log[-1].coverage > 0.5


def check_grasp(observer):
    log = ctl.run_grasp(ctl.GraspWorld(), observer)
    counts = [r.coverage for r in log]
    first = next(i for i, n in enumerate(counts) if n > 100)
    assert first == len(log) - 1 and log[-1].phase == "done"
    assert all(n <= 100 for n in counts[:-1])


@criterion(9, "spread, dip, grasp (fast and rendered) and film truth table, < 5 min")
def test_control_behaviours():
    t = time.perf_counter()
    rendered = ctl.RenderObserver()
    for observer in (ctl.FastObserver(), rendered):
        check_spread(observer)
        check_dip(observer)
        check_grasp(observer)
    s = ctl.EndEffectorState(position=(42.0, 0, 0))
    for left, right in itertools.product((False, True), repeat=2):
        new = ctl.step_film(left, right, s)
        if left and not right:
            assert new.x < s.x
        elif right and not left:
            assert new.x > s.x
        elif left and right:
            assert new.x == s.x and new.velocity[0] == 0.0
        else:
            assert new.x > s.x          # back toward the strip centre at 50
    assert time.perf_counter() - t < 300


# ---------------------------------------------------------------- 10

@criterion(10, "labelling matches flood fill on 1000 masks; split-seed merge bit-exact on 20 scenes")
def test_oracle_equivalence():
    rng = np.random.default_rng(10)
    for k in range(1000):
        mask = rng.random((64, 64)) < rng.uniform(0.05, 0.65)
        conn = 4 if k % 2 else 8
        ref = flood_fill_components(mask, conn)
        got = connected_components(mask, conn)
        assert len(got) == len(ref)
        lab, _ = label(mask, conn)
        for comp in got:
            ys, xs = np.nonzero(lab == comp.label)
            assert frozenset(zip(ys.tolist(), xs.tolist())) in ref

    for k in range(20):
        cfg = OpticalConfig(theta_s=math.radians(rng.uniform(30, 90)))
        absorb = None if k % 4 == 0 else float(rng.uniform(0.8, 1.0))
        scene = pt.Scene2D(cfg, float(rng.uniform(0.2, 2)), float(rng.uniform(0, 3)),
                           absorptivity=absorb, fresnel=bool(k % 5 == 3))
        a = float(rng.uniform(0, 10))
        spec = pt.NO_CONTACT if k % 3 == 0 else pt.ContactSpec.band(a, a + float(rng.uniform(0.5, 2)))
        seed = int(rng.integers(0, 2**31))
        n = int(rng.integers(2_000, 40_000))
        cut = int(rng.integers(1, n))
        full = pt.trace(scene, spec, seed, n)
        left = pt.trace(scene, spec, seed, cut)
        right = pt.trace(scene, spec, seed, n - cut, first_ray=cut)
        assert full.same_as(left.merge(right)) and full.same_as(right.merge(left))
        assert np.array_equal(full.radiance, left.merge(right).radiance)
