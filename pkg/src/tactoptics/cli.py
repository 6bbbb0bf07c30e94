"""Command-line entry point.

Exit codes: 0 success / all checks pass, 1 a check failed, 2 usage or
config error.
"""

from __future__ import annotations

import argparse
import json
import math
import re
import sys
from dataclasses import dataclass, asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import calibration as cal
from . import control as ctl
from . import imaging as im
from . import optics
from . import phototrace as pt
from . import segmentation as seg
from .config import ConfigError, load_config

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    subcommand: str
    argv: list
    config_paths: list
    seed: int
    output: str
    tool_version: str
    timestamp: str

    def write(self, out_dir: Path) -> None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "manifest.json").write_text(json.dumps(asdict(self), indent=2) + "\n")


def _manifest(args, argv, out_dir: Path) -> None:
    paths = [str(p) for p in (getattr(args, "config", None), getattr(args, "world", None),
                              getattr(args, "map", None)) if p]
    RunManifest(args.command_name, list(argv), paths, int(getattr(args, "seed", 0)),
                str(out_dir), __version__,
                datetime.now(timezone.utc).isoformat(timespec="seconds")).write(out_dir)


def _config(args) -> optics.OpticalConfig:
    return load_config(args.config) if args.config else optics.OpticalConfig()


def _floats(text: str, n: int | None = None) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"not a comma-separated list of numbers: {text!r}") from None
    if n is not None and len(vals) != n:
        raise UsageError(f"expected {n} values, got {text!r}")
    return vals


def _range(text: str) -> list[float]:
    """``a,b,c`` or ``start:stop:count`` (inclusive linspace)."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"range must be start:stop:count, got {text!r}")
        a, b = float(parts[0]), float(parts[1])
        return list(np.linspace(a, b, int(parts[2])))
    return _floats(text)


# ---------------------------------------------------------------- design

def cmd_design_check(args, argv) -> int:
    cfg = _config(args)
    rep = optics.full_report(cfg)
    names = ("external_rejection", "internal_rejection", "contact_transmission")
    for name in names:
        chk = getattr(rep, name)
        extra = ""
        if name == "internal_rejection":
            extra = f"  max_theta_it={math.degrees(chk.value):.4f} deg"
        if name == "contact_transmission":
            lo, hi = chk.value
            extra = f"  window=({math.degrees(lo):.4f}, {math.degrees(hi):.4f}) deg"
        print(f"{name:22s} {'PASS' if chk.passed else 'FAIL'}  "
              f"margin={math.degrees(chk.margin):+.4f} deg{extra}")
    return EXIT_OK if rep.all_passed else EXIT_FAIL


SWEEPABLE = ("theta_tv", "theta_s", "external_intensity", "led_intensity", "absorptivity")
ANGLE_VARS = ("theta_tv", "theta_s")


def cmd_design_sweep(args, argv) -> int:
    if args.variable not in SWEEPABLE:
        raise UsageError(f"unknown sweep variable {args.variable!r}; choose from {', '.join(SWEEPABLE)}")
    values = _range(args.values)
    if not values:
        raise UsageError("empty value range")
    cfg = _config(args)
    base = pt.Scene2D(cfg, led_intensity=args.led_intensity,
                      ambient_intensity=args.external_intensity,
                      absorptivity=args.absorptivity)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for v in values:
        if args.variable in ANGLE_VARS:
            c = cfg.with_(**{args.variable: math.radians(v)})
            scene = base.replace(config=c)
        else:
            scene = pt.scene_for(base, args.variable, v)
            c = scene.config
        rep = optics.full_report(c)
        mean = std = float("nan")
        if args.rays > 0:
            prof = pt.trace(scene, pt.NO_CONTACT, args.seed, args.rays, args.pixels)
            mean, std = pt.leakage(prof)
        rows.append((v, rep, mean, std))
    csv = out / "sweep.csv"
    with open(csv, "w") as fh:
        fh.write(f"{args.variable},external_margin_deg,internal_margin_deg,"
                 "contact_margin_deg,all_pass,leakage_mean,leakage_std\n")
        for v, rep, mean, std in rows:
            fh.write(f"{v},{math.degrees(rep.external_rejection.margin)},"
                     f"{math.degrees(rep.internal_rejection.margin)},"
                     f"{math.degrees(rep.contact_transmission.margin)},"
                     f"{int(rep.all_passed)},{mean},{std}\n")
    if len(rows) >= 2 and args.rays > 0:
        _plot_sweep(out / "sweep.png", args.variable, rows)
    _manifest(args, argv, out)
    print(f"wrote {csv} ({len(rows)} rows)")
    return EXIT_OK


def _plot_sweep(path: Path, variable: str, rows) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    x = [r[0] for r in rows]
    m = np.array([r[2] for r in rows])
    s = np.array([r[3] for r in rows])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(x, m, yerr=s, marker="o", capsize=3)
    ax.set_xlabel(variable + (" (deg)" if variable in ANGLE_VARS else ""))
    ax.set_ylabel("non-contact radiance (mean over pixels)")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


# ---------------------------------------------------------------- render

def _contact(args) -> pt.ContactSpec:
    if not args.contact:
        return pt.NO_CONTACT
    iv = []
    for part in args.contact.split(","):
        a, _, b = part.partition(":")
        try:
            iv.append((float(a), float(b)))
        except ValueError:
            raise UsageError(f"contact intervals look like 3:7,8:10 (mm), got {args.contact!r}") from None
    alb = tuple(_floats(args.albedo, 3))
    return pt.ContactSpec(tuple(iv), (alb,) * len(iv))


def cmd_render(args, argv) -> int:
    cfg = _config(args)
    scene = pt.Scene2D(cfg, 1.0, args.external_intensity,
                       absorptivity=None if args.ideal else pt.REALISTIC_ABSORPTIVITY)
    exposure = args.exposure or pt.calibrate_exposure(scene, args.seed)
    noise = pt.NoiseModel(args.noise, args.noise_seed)
    img = pt.render(scene, _contact(args), args.seed, args.rays, args.height, args.width,
                    exposure, noise)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    im.write_png(out, img)
    mean, std = im.mean_std(img)
    print(f"wrote {out}  exposure={exposure:.6g}  gray mean={mean:.3f} std={std:.3f}")
    return EXIT_OK


# ---------------------------------------------------------------- calibration

def _grid(text: str) -> tuple[int, int]:
    m = re.fullmatch(r"(\d+)x(\d+)", text)
    if not m:
        raise UsageError(f"grid must look like 5x5, got {text!r}")
    return int(m.group(1)), int(m.group(2))


def cmd_calibrate(args, argv) -> int:
    rows, cols = _grid(args.grid)
    spec = cal.GridSpec(rows, cols, args.pitch_mm)
    img = im.read_png(args.image)
    try:
        det = cal.detect_grid(img, spec, args.threshold)
        m = cal.build_rectify_map(det, spec, args.resolution)
    except cal.CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cal.save_rectify_map(out, m)
    res = cal.map_residuals(m, det, spec, args.resolution)
    print(f"pitch={det.mean_pixel_pitch:.4f} px/pitch ({det.px_per_mm:.4f} px/mm)  "
          f"max residual={res.max():.2e} px  map={m.shape[1]}x{m.shape[0]} -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------- segmentation

def _numbered_frames(folder: Path) -> list[Path]:
    files = [p for p in folder.glob("*.png")]
    key = lambda p: (int(re.findall(r"\d+", p.stem)[-1]) if re.findall(r"\d+", p.stem) else -1, p.name)
    return sorted(files, key=key)


def cmd_pipeline(args, argv) -> int:
    folder = Path(args.frames)
    if not folder.is_dir():
        raise UsageError(f"frames directory not found: {folder}")
    frames = _numbered_frames(folder)
    if len(frames) < args.ref_frames:
        print(f"need {args.ref_frames} reference frames, found {len(frames)}", file=sys.stderr)
        return EXIT_USAGE
    th = seg.Thresholds(args.t0, args.t1, args.t2, args.t3)
    ref = seg.build_reference([im.read_png(p) for p in frames[:args.ref_frames]], args.ref_frames)
    rmap = cal.load_rectify_map(args.map) if getattr(args, "map", None) else None
    if rmap is not None and tuple(rmap.raw_shape) != ref.shape:
        print(f"rectify map expects {rmap.raw_shape} frames, got {ref.shape}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    lines = ["frame,pixel_count,coverage,centroid_x,centroid_y,components"]
    for p in frames[args.ref_frames:]:
        mask = seg.segment(im.read_png(p), ref, th)
        if args.min_component:
            mask = seg.denoise(mask, args.min_component)
        if rmap is not None:
            mask = im.remap_mask(mask, rmap)
        st = seg.stats(mask)
        cx, cy = st.centroid if st.centroid else (float("nan"), float("nan"))
        lines.append(f"{p.name},{st.pixel_count},{st.coverage},{cx},{cy},{len(st.components)}")
        im.write_mask_png(out / "masks" / f"{p.stem}_mask.png", mask)
    (out / "stats.csv").write_text("\n".join(lines) + "\n")
    _manifest(args, argv, out)
    print(f"segmented {len(frames) - args.ref_frames} frames -> {out / 'stats.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------- simulation

def _world_config(path) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text() or "{}")
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, line=exc.lineno, path=path) from None


def cmd_simulate(args, argv) -> int:
    wc = _world_config(args.world)
    obs = (ctl.FastObserver() if args.mode == "fast"
           else ctl.RenderObserver(seed=args.seed, rays=args.rays))
    kind = args.behaviour
    if kind == "spread":
        world = ctl.ContactWorld.flat(wc.get("level_mm", 0.0), "liquid",
                                      wet_depth=wc.get("wet_depth_mm", 2.0),
                                      spread_rate=wc.get("spread_rate_mm", 0.002))
        gains = ctl.PDGains(**wc.get("gains", {}))
        start = ctl.EndEffectorState(position=(50.0, 0.0, wc.get("start_z_mm", 10.0)))
        log = ctl.run_spread(world, obs, args.steps, gains, start)
    elif kind == "dip":
        world = (ctl.ContactWorld.empty() if wc.get("empty")
                 else ctl.ContactWorld.flat(wc.get("level_mm", 0.0), "semiliquid",
                                            wet_depth=wc.get("wet_depth_mm", 2.0)))
        start = ctl.EndEffectorState(position=(50.0, 0.0, wc.get("start_z_mm", 50.0)))
        try:
            log = ctl.run_dip(world, obs, start, max_steps=args.steps)
        except ctl.TravelLimitError as exc:
            print(str(exc), file=sys.stderr)
            return EXIT_FAIL
    elif kind == "film":
        world = ctl.FilmWorld(wc.get("left_mm", 40.0), wc.get("right_mm", 60.0),
                              wc.get("offset_mm", 15.0))
        start = ctl.EndEffectorState(position=(wc.get("start_x_mm", 30.0), 0.0, 0.0))
        log = ctl.run_film(world, obs, args.steps, start)
    else:
        world = ctl.GraspWorld(wc.get("object_width_mm", 20.0))
        try:
            log = ctl.run_grasp(world, obs, wc.get("aperture_mm", 30.0),
                                stop_pixels=wc.get("stop_pixels", 100), max_steps=args.steps)
        except ctl.GraspFailed as exc:
            print(str(exc), file=sys.stderr)
            return EXIT_FAIL
    path = Path(args.log)
    path.parent.mkdir(parents=True, exist_ok=True)
    ctl.write_log(path, log)
    _manifest(args, argv, path.parent)
    print(f"{kind}: {len(log)} steps -> {path}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tactoptics", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True, config=True):
        if config:
            sp.add_argument("--config", help="sensor config (JSON, degrees and mm)")
        if seed:
            sp.add_argument("--seed", type=int, default=0, help="single source of randomness")

    design = sub.add_parser("design", help="optical design checks and sweeps")
    dsub = design.add_subparsers(dest="design_command", required=True)
    chk = dsub.add_parser("check", help="evaluate the three design conditions")
    common(chk, seed=False)
    chk.set_defaults(func=cmd_design_check, command_name="design check")

    sw = dsub.add_parser("sweep", help="sweep one variable; CSV plus PNG plot")
    common(sw)
    sw.add_argument("--variable", required=True, help=f"one of {', '.join(SWEEPABLE)}")
    sw.add_argument("--values", required=True,
                    help="comma list or start:stop:count (angles in degrees)")
    sw.add_argument("--rays", type=int, default=1_000_000, help="0 skips Monte Carlo leakage")
    sw.add_argument("--pixels", type=int, default=64)
    sw.add_argument("--external-intensity", type=float, default=1.0)
    sw.add_argument("--led-intensity", type=float, default=1.0)
    sw.add_argument("--absorptivity", type=float, default=pt.REALISTIC_ABSORPTIVITY)
    sw.add_argument("--out", default="sweep_out")
    sw.set_defaults(func=cmd_design_sweep, command_name="design sweep")

    r = sub.add_parser("render", help="synthesise a raw sensor frame (PNG)")
    common(r)
    r.add_argument("--contact", default="", help="intervals in mm, e.g. 3:7,8:10")
    r.add_argument("--albedo", default="1,1,1")
    r.add_argument("--rays", type=int, default=200_000)
    r.add_argument("--height", type=int, default=48)
    r.add_argument("--width", type=int, default=64)
    r.add_argument("--exposure", type=float, default=None, help="default: calibrated")
    r.add_argument("--noise", type=float, default=pt.DEFAULT_NOISE.sigma)
    r.add_argument("--noise-seed", type=int, default=0)
    r.add_argument("--external-intensity", type=float, default=1.0)
    r.add_argument("--ideal", action="store_true", help="perfect absorbers")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render, command_name="render")

    c = sub.add_parser("calibrate", help="detect the imprint grid and write a rectify map")
    common(c, seed=False, config=False)
    c.add_argument("--image", required=True)
    c.add_argument("--grid", default="5x5")
    c.add_argument("--pitch-mm", type=float, default=3.0)
    c.add_argument("--threshold", type=float, default=cal.DEFAULT_THRESHOLD)
    c.add_argument("--resolution", type=float, default=10.0, help="output px/mm")
    c.add_argument("--out", default="rectify_map.npz")
    c.set_defaults(func=cmd_calibrate, command_name="calibrate")

    for name, helptext in (("segment", "segment numbered PNG frames"),
                           ("pipeline", "reference, segment and optionally rectify frames")):
        s = sub.add_parser(name, help=helptext)
        common(s, config=False)
        s.add_argument("--frames", required=True, help="directory of numbered PNG frames")
        s.add_argument("--ref-frames", type=int, default=seg.REFERENCE_FRAMES)
        s.add_argument("--t0", type=float, default=25)
        s.add_argument("--t1", type=float, default=20)
        s.add_argument("--t2", type=float, default=30)
        s.add_argument("--t3", type=float, default=40)
        s.add_argument("--min-component", type=int, default=0)
        if name == "pipeline":
            s.add_argument("--map", help="rectify map from `calibrate`")
        s.add_argument("--out", required=True)
        s.set_defaults(func=cmd_pipeline, command_name=name)

    sim = sub.add_parser("simulate", help="closed-loop contact behaviours")
    sim.add_argument("behaviour", choices=("spread", "dip", "film", "grasp"))
    sim.add_argument("--world", help="world parameters (JSON)")
    sim.add_argument("--steps", type=int, default=700)
    sim.add_argument("--mode", choices=("fast", "render"), default="fast")
    sim.add_argument("--rays", type=int, default=30_000)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--log", required=True, help="trajectory CSV")
    sim.set_defaults(func=cmd_simulate, command_name="simulate")
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args, argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
