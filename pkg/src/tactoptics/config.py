"""JSON config files for :class:`OpticalConfig` (degrees and millimetres).

Schema (every key optional; missing keys take the default sensor values)::

    {
      "n_medium": 1.45, "n_air": 1.0,
      "theta_tv_deg": 90, "theta_s_deg": 90,
      "touching_length_mm": 12, "viewing_length_mm": 7,
      "shell_height_mm": 10, "surface_a_height_mm": 3, "chamfer_mm": 3,
      "led": {"position_mm": [11.2, 7], "axis_deg": -115.8, "half_angle_deg": 32.1},
      "camera": {"position_mm": [17, 10], "axis_deg": -145,
                 "fov_deg": 120, "aperture_mm": 3},
      "absorptivity": 0.95            # or {"top": 0.95, "chamfer": 0.9, ...}
    }
"""

from __future__ import annotations

import json
import math
from pathlib import Path

from .optics import MediumPair, OpticalConfig

ABSORBERS = ("chamfer", "top", "left_wall", "surface_a")
_KEYS = {"n_medium", "n_air", "theta_tv_deg", "theta_s_deg", "touching_length_mm",
         "viewing_length_mm", "shell_height_mm", "surface_a_height_mm", "chamfer_mm",
         "led", "camera", "absorptivity"}
_NESTED = {"led": {"position_mm", "axis_deg", "half_angle_deg"},
           "camera": {"position_mm", "axis_deg", "fov_deg", "aperture_mm"}}


class ConfigError(ValueError):
    """Unparseable or invalid config; ``line`` points into the source text."""

    def __init__(self, message: str, line: int | None = None, path=None):
        where = f"{path or '<config>'}:{line}: " if line is not None else ""
        super().__init__(f"{where}{message}")
        self.line = line


def _key_line(text: str, key: str) -> int | None:
    for i, row in enumerate(text.splitlines(), 1):
        if f'"{key}"' in row:
            return i
    return None


def config_from_dict(data: dict) -> OpticalConfig:
    base = OpticalConfig()
    led = data.get("led", {})
    cam = data.get("camera", {})
    absorb = data.get("absorptivity", base.absorptivity)
    if isinstance(absorb, (int, float)):
        absorb = {name: float(absorb) for name in ABSORBERS}
    else:
        absorb = {**base.absorptivity, **{k: float(v) for k, v in absorb.items()}}

    def deg(d, key, default):
        return math.radians(float(d[key])) if key in d else default

    return OpticalConfig(
        media=MediumPair(float(data.get("n_medium", base.media.n_medium)),
                         float(data.get("n_air", base.media.n_air))),
        theta_tv=deg(data, "theta_tv_deg", base.theta_tv),
        theta_s=deg(data, "theta_s_deg", base.theta_s),
        touching_length=float(data.get("touching_length_mm", base.touching_length)),
        viewing_length=float(data.get("viewing_length_mm", base.viewing_length)),
        shell_height=float(data.get("shell_height_mm", base.shell_height)),
        surface_a_height=float(data.get("surface_a_height_mm", base.surface_a_height)),
        chamfer=float(data.get("chamfer_mm", base.chamfer)),
        led_position=tuple(map(float, led.get("position_mm", base.led_position))),
        led_axis=deg(led, "axis_deg", base.led_axis),
        led_half_angle=deg(led, "half_angle_deg", base.led_half_angle),
        camera_position=tuple(map(float, cam.get("position_mm", base.camera_position))),
        camera_axis=deg(cam, "axis_deg", base.camera_axis),
        camera_fov=deg(cam, "fov_deg", base.camera_fov),
        camera_aperture=float(cam.get("aperture_mm", base.camera_aperture)),
        absorptivity=absorb,
    )


def config_to_dict(cfg: OpticalConfig) -> dict:
    return {
        "n_medium": cfg.media.n_medium,
        "n_air": cfg.media.n_air,
        "theta_tv_deg": math.degrees(cfg.theta_tv),
        "theta_s_deg": math.degrees(cfg.theta_s),
        "touching_length_mm": cfg.touching_length,
        "viewing_length_mm": cfg.viewing_length,
        "shell_height_mm": cfg.shell_height,
        "surface_a_height_mm": cfg.surface_a_height,
        "chamfer_mm": cfg.chamfer,
        "led": {"position_mm": list(cfg.led_position),
                "axis_deg": math.degrees(cfg.led_axis),
                "half_angle_deg": math.degrees(cfg.led_half_angle)},
        "camera": {"position_mm": list(cfg.camera_position),
                   "axis_deg": math.degrees(cfg.camera_axis),
                   "fov_deg": math.degrees(cfg.camera_fov),
                   "aperture_mm": cfg.camera_aperture},
        "absorptivity": dict(cfg.absorptivity),
    }


def parse_config(text: str, path=None) -> OpticalConfig:
    if not text.strip():
        raise ConfigError("empty config", line=1, path=path)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, line=exc.lineno, path=path) from None
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object", line=1, path=path)
    for key, allowed in [(None, _KEYS)] + list(_NESTED.items()):
        d = data if key is None else data.get(key, {})
        if not isinstance(d, dict):
            raise ConfigError(f"{key!r} must be an object", line=_key_line(text, key), path=path)
        extra = sorted(set(d) - allowed)
        if extra:
            raise ConfigError(f"unknown key {extra[0]!r}", line=_key_line(text, extra[0]),
                              path=path)
    try:
        return config_from_dict(data)
    except (TypeError, ValueError, KeyError) as exc:
        # validation messages name dataclass fields; keys carry unit suffixes
        bad = next((k for k in _flatten_keys(data)
                    if k.removesuffix("_deg").removesuffix("_mm") in str(exc)), None)
        raise ConfigError(str(exc), line=_key_line(text, bad) if bad else 1,
                          path=path) from None


def _flatten_keys(d: dict):
    for k, v in d.items():
        yield k
        if isinstance(v, dict):
            yield from _flatten_keys(v)


def load_config(path) -> OpticalConfig:
    path = Path(path)
    return parse_config(path.read_text(), path=path)


def save_config(cfg: OpticalConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2) + "\n")
