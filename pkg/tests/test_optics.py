import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tactoptics.optics import (MediumPair, OpticalConfig, camera_exclusion_angle,
                               check_contact_transmission, check_external_rejection,
                               check_internal_rejection, critical_angle, full_report,
                               incidence_on_touching, max_led_incidence, refract)

DEG = math.pi / 180
PDMS = MediumPair(1.45, 1.0)
THETA_C = critical_angle(PDMS)

mpmath.mp.dps = 50


def mp_theta_cam(theta_tv: float, n: float = 1.45) -> float:
    t = mpmath.mpf(theta_tv)
    tc = mpmath.asin(1 / mpmath.mpf(n))
    return float(mpmath.pi / 2 + t - mpmath.asin(mpmath.mpf(n) * mpmath.sin(t - tc)))


# ---------------------------------------------------------------- frozen values

def test_critical_angle_examples():
    assert critical_angle(PDMS) == pytest.approx(0.761013, abs=1e-6)
    assert math.degrees(critical_angle(PDMS)) == pytest.approx(43.6028, abs=1e-4)
    assert critical_angle(MediumPair(math.sqrt(2), 1.0)) == pytest.approx(math.pi / 4, abs=1e-15)
    assert math.degrees(critical_angle(MediumPair(1.33, 1.0))) == pytest.approx(48.753, abs=1e-3)


@pytest.mark.parametrize("n", [1.0, 0.9])
def test_critical_angle_rejects_no_tir(n):
    with pytest.raises(ValueError):
        critical_angle(MediumPair(n, 1.0))


def test_refract_examples():
    assert refract(0.0, PDMS, entering=False) == 0.0
    assert refract(0.5, PDMS, entering=False) == pytest.approx(0.768652, abs=1e-6)
    assert refract(0.5, PDMS, entering=False) == pytest.approx(
        float(mpmath.asin(mpmath.mpf("1.45") * mpmath.sin(mpmath.mpf("0.5")))), abs=1e-12)
    assert refract(50 * DEG, PDMS, entering=False) is None


def test_refract_rejects_bad_angle():
    with pytest.raises(ValueError):
        refract(math.pi / 2, PDMS, entering=True)
    with pytest.raises(ValueError):
        refract(-0.1, PDMS, entering=False)


def test_external_rejection_examples():
    chk = check_external_rejection(OpticalConfig())
    assert chk.passed and math.degrees(chk.margin) == pytest.approx(2.7944, abs=1e-4)
    boundary = check_external_rejection(OpticalConfig(theta_tv=2 * THETA_C))
    assert not boundary.passed and boundary.margin == 0.0
    assert not check_external_rejection(OpticalConfig(theta_tv=80 * DEG)).passed


def test_internal_rejection_examples():
    normal = OpticalConfig(led_position=(6.0, 5.0), led_axis=-math.pi / 2, led_half_angle=0.0)
    chk = check_internal_rejection(normal)
    assert chk.passed and chk.value == pytest.approx(0.0, abs=1e-12)
    assert chk.margin == pytest.approx(math.pi / 2 - THETA_C)


def test_internal_rejection_strict_boundary():
    # a pencil beam whose incidence is exactly theta_tv - theta_c
    inc = math.pi / 2 - THETA_C
    x = 2.0
    y = 3.0
    cfg = OpticalConfig(led_position=(x, y), led_axis=-math.pi / 2 + inc, led_half_angle=0.0)
    chk = check_internal_rejection(cfg)
    assert chk.value == pytest.approx(inc, abs=1e-12)
    assert not chk.passed and chk.margin == 0.0


def test_contact_transmission_examples():
    chk = check_contact_transmission(OpticalConfig())
    assert chk.passed
    lo, hi = chk.value
    assert lo == pytest.approx(0.0, abs=1e-15) and math.degrees(hi) == pytest.approx(43.6028, abs=1e-4)
    assert not check_contact_transmission(OpticalConfig(theta_tv=math.pi / 2 + THETA_C)).passed
    chk = check_contact_transmission(OpticalConfig(theta_tv=120 * DEG))
    assert chk.passed
    assert math.degrees(chk.value[0]) == pytest.approx(30.0)
    assert math.degrees(chk.value[1]) == pytest.approx(43.6028, abs=1e-4)


def test_camera_exclusion_examples():
    assert camera_exclusion_angle(OpticalConfig(theta_tv=THETA_C)) == pytest.approx(
        math.pi / 2 + THETA_C, abs=1e-9)
    t = THETA_C + 0.1
    got = camera_exclusion_angle(OpticalConfig(theta_tv=t))
    assert got == pytest.approx(math.pi / 2 + t - math.asin(1.45 * math.sin(0.1)), abs=1e-12)
    # finite-difference: decreasing in theta_tv
    assert camera_exclusion_angle(OpticalConfig(theta_tv=t + 1e-4)) < got
    near = 2 * THETA_C - 1e-9
    assert camera_exclusion_angle(OpticalConfig(theta_tv=near)) == pytest.approx(near, abs=1e-3)


@pytest.mark.parametrize("theta_tv", [2 * THETA_C, 2 * THETA_C + 0.1, THETA_C - 1e-3])
def test_camera_exclusion_rejects_outside_regime(theta_tv):
    with pytest.raises(ValueError):
        camera_exclusion_angle(OpticalConfig(theta_tv=theta_tv))


def test_full_report_examples():
    rep = full_report(OpticalConfig())
    assert rep.all_passed
    for chk in (rep.external_rejection, rep.internal_rejection, rep.contact_transmission):
        assert chk.margin > 0
    rep = full_report(OpticalConfig(theta_tv=140 * DEG))
    assert not rep.contact_transmission.passed
    assert rep.external_rejection.passed and rep.internal_rejection.passed
    rep = full_report(OpticalConfig(theta_tv=60 * DEG))
    assert not rep.external_rejection.passed
    assert rep.internal_rejection.passed and rep.contact_transmission.passed


def test_default_led_cone_spans_touching_surface():
    cfg = OpticalConfig()
    assert math.degrees(max_led_incidence(cfg)) == pytest.approx(6.3, abs=1e-6)


def test_incidence_sign_convention():
    cfg = OpticalConfig()
    assert incidence_on_touching(cfg, (0.0, -1.0)) == pytest.approx(0.0)
    assert incidence_on_touching(cfg, (1.0, -1.0)) == pytest.approx(math.pi / 4)
    assert incidence_on_touching(cfg, (-1.0, -1.0)) == pytest.approx(-math.pi / 4)


def test_led_missing_touching_surface_is_an_error():
    cfg = OpticalConfig(led_position=(6.0, 5.0), led_axis=math.pi / 2, led_half_angle=0.1)
    with pytest.raises(ValueError):
        check_internal_rejection(cfg)


@pytest.mark.parametrize("kw", [dict(theta_tv=0.0), dict(theta_tv=math.pi), dict(theta_s=2.0),
                                dict(led_half_angle=math.pi / 2), dict(chamfer=-1.0),
                                dict(absorptivity={"top": 1.5}), dict(absorptivity={"nope": 1})])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        OpticalConfig(**kw)


# ---------------------------------------------------------------- oracles

def test_camera_exclusion_matches_high_precision_oracle():
    rng = np.random.default_rng(7)
    for t in rng.uniform(THETA_C, 2 * THETA_C, 100):
        assert abs(camera_exclusion_angle(OpticalConfig(theta_tv=float(t))) - mp_theta_cam(t)) < 1e-9


def brute_force_max_incidence(cfg: OpticalConfig, n: int = 10_001):
    """Sample the cone densely (edges included) and intersect each ray with the
    touching surface; return the largest incidence among hitting rays."""
    p = np.asarray(cfg.led_position, float)
    ang = cfg.led_axis + np.linspace(-cfg.led_half_angle, cfg.led_half_angle, n)
    d = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    down = d[:, 1] < 0
    s = np.where(down, -p[1] / np.where(down, d[:, 1], -1.0), -1.0)
    x = p[0] + s * d[:, 0]
    hit = down & (x >= 0) & (x <= cfg.touching_length)
    inc = np.arctan2(d[:, 0], -d[:, 1])
    return inc[hit].max(), inc[hit].max() - inc[hit].min()


def random_led_config(rng) -> OpticalConfig:
    theta_tv = rng.uniform(60, 130) * DEG
    p = (rng.uniform(1.0, 11.0), rng.uniform(0.5, 6.5))
    target = rng.uniform(0.5, 11.5)
    axis = math.atan2(-p[1], target - p[0])
    return OpticalConfig(theta_tv=theta_tv, led_position=p, led_axis=axis,
                         led_half_angle=rng.uniform(0.0, 60.0) * DEG)


def test_internal_rejection_agrees_with_brute_force_sampling():
    rng = np.random.default_rng(2024)
    flips = 0
    for _ in range(100):
        cfg = random_led_config(rng)
        oracle, span = brute_force_max_incidence(cfg)
        chk = check_internal_rejection(cfg)
        # the sampled maximum can undershoot by at most one angular step
        step = 2 * cfg.led_half_angle / 10_000
        assert oracle - 1e-12 <= chk.value <= oracle + step + 1e-12
        verdict = oracle < cfg.theta_tv - THETA_C
        assert chk.passed == verdict
        flips += not verdict
    assert 10 < flips < 90     # both verdicts actually exercised


def test_led_45deg_tilt_30deg_half_angle():
    cfg = OpticalConfig(led_position=(3.0, 6.0), led_axis=-45 * DEG, led_half_angle=30 * DEG)
    oracle, _ = brute_force_max_incidence(cfg)
    chk = check_internal_rejection(cfg)
    step = 2 * cfg.led_half_angle / 10_000
    assert oracle - 1e-12 <= chk.value <= oracle + step
    assert chk.passed == (oracle < math.pi / 2 - THETA_C)


# ---------------------------------------------------------------- properties

media = st.builds(MediumPair, st.floats(1.01, 3.0), st.just(1.0))


@given(media, st.floats(0.0, math.pi / 2 - 1e-6))
def test_refract_exit_succeeds_iff_below_critical(m, theta):
    out = refract(theta, m, entering=False)
    assert (out is not None) == (theta < critical_angle(m))


@given(media, st.floats(0.0, math.pi / 2 - 1e-3))
def test_refract_round_trip(m, theta_out):
    inside = refract(theta_out, m, entering=True)
    back = refract(inside, m, entering=False)
    assert back is not None and abs(back - theta_out) < 1e-9


@given(media, st.floats(0.05, math.pi - 0.05), st.floats(0.0, 0.5))
def test_external_rejection_monotone_in_theta_tv(m, t, dt):
    t2 = min(t + dt, math.pi - 1e-3)
    if check_external_rejection(OpticalConfig(media=m, theta_tv=t)).passed:
        assert check_external_rejection(OpticalConfig(media=m, theta_tv=t2)).passed


@given(st.floats(0.05, math.pi - 0.05))
def test_margin_sign_matches_verdict(t):
    rep = full_report(OpticalConfig(theta_tv=t))
    for chk in (rep.external_rejection, rep.internal_rejection, rep.contact_transmission):
        assert chk.passed == (chk.margin > 0)


@settings(max_examples=200)
@given(st.floats(0.0, 1.0 - 1e-6), st.floats(0.0, 1e-7))
def test_camera_exclusion_continuous(u, h):
    t = THETA_C + u * THETA_C
    t2 = min(t + h, 2 * THETA_C - 1e-12)
    a = camera_exclusion_angle(OpticalConfig(theta_tv=t))
    b = camera_exclusion_angle(OpticalConfig(theta_tv=t2))
    assert abs(a - b) < 1e-3
