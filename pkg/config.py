#!/usr/bin/env python3
"""
Configuration for fitting and rendering.

Two layers:
- Environment (.env or shell): VEGAS_THREADS, VEGAS_BACKGROUND, VEGAS_LOG_LEVEL
- Config file: flat `key = value` text with [train], [lr], [densify], [render]
  and [metrics] sections. CLI flags override the file.

Usage:
  python3 config.py                 # Print the default config file
  python3 config.py <path>          # Print a config file merged over defaults
"""
import os
import configparser
from dataclasses import dataclass, field, fields, replace

from dotenv import load_dotenv

from errors import ConfigError

load_dotenv()

# Environment defaults
DEFAULT_THREADS = int(os.environ.get('VEGAS_THREADS', '1'))
DEFAULT_BACKGROUND = os.environ.get('VEGAS_BACKGROUND', '0,0,0')
LOG_LEVEL = os.environ.get('VEGAS_LOG_LEVEL', 'INFO')

SECTIONS = ['train', 'lr', 'densify', 'render', 'metrics']


def parse_background(text):
    """Parse 'r,g,b' (each in [0,1]) into a float triple."""
    try:
        parts = tuple(float(p) for p in str(text).split(','))
    except ValueError:
        raise ConfigError(f"background must be 'r,g,b', got {text!r}")
    if len(parts) != 3 or any(p < 0.0 or p > 1.0 for p in parts):
        raise ConfigError(f"background must be three values in [0,1], got {text!r}")
    return parts


def _opt(default, section, doc):
    return field(default=default, metadata={'section': section, 'doc': doc})


@dataclass(frozen=True)
class TrainConfig:
    # [train]
    steps: int = _opt(30000, 'train', 'optimizer steps')
    batch_size: int = _opt(3, 'train', 'frames per step')
    poly_degree: int = _opt(7, 'train', 'degree of the temporal shift polynomial')
    n_init: int = _opt(500000, 'train', 'initial number of components')
    seed: int = _opt(0, 'train', 'rng seed')
    two_camera: bool = _opt(True, 'train', 'also supervise the mirrored camera')
    mirror_weight: float = _opt(0.5, 'train', 'weight of the mirrored loss (direct gets 1 - w)')
    ssim_weight: float = _opt(0.0, 'train', 'weight of the D-SSIM term (0 = pure MSE)')
    log_every: int = _opt(100, 'train', 'steps between metric log rows')
    threads: int = _opt(DEFAULT_THREADS, 'train', 'rasterizer worker threads')
    seed_colors: bool = _opt(True, 'train', 'initialize colours from the nearest frame')

    # [lr]
    means_lr_init: float = _opt(1.6e-4, 'lr', 'spatial/temporal means, start of decay')
    means_lr_final: float = _opt(1.6e-6, 'lr', 'spatial/temporal means, end of decay')
    opacity_lr: float = _opt(0.05, 'lr', 'opacity')
    scales_lr: float = _opt(5e-3, 'lr', 'log spatial scales')
    rotation_lr: float = _opt(1e-3, 'lr', 'rotation angle')
    color_lr: float = _opt(2.5e-3, 'lr', 'colour')
    poly_lr: float = _opt(1.6e-3, 'lr', 'polynomial shift coefficients')
    sigma_t_lr: float = _opt(5e-3, 'lr', 'log temporal std')
    timeline_lr: float = _opt(1e-3, 'lr', 'frame timeline weights')

    # [densify]
    densify_from: int = _opt(500, 'densify', 'first step that densifies')
    densify_until: int = _opt(15000, 'densify', 'last step that densifies or resets opacity')
    densify_interval: int = _opt(100, 'densify', 'steps between densify/prune calls')
    grad_threshold: float = _opt(2e-4, 'densify', 'mean-gradient norm that triggers clone/split')
    min_opacity: float = _opt(0.005, 'densify', 'prune below this opacity')
    opacity_reset_interval: int = _opt(3000, 'densify', 'steps between opacity resets')
    opacity_reset_value: float = _opt(0.01, 'densify', 'opacity ceiling after a reset')
    percent_dense: float = _opt(0.01, 'densify', 'split bound as a fraction of scene extent')
    split_count: int = _opt(2, 'densify', 'children per split')
    split_scale_divisor: float = _opt(1.6, 'densify', 'children scales are divided by this')
    initial_opacity: float = _opt(0.1, 'densify', 'opacity of freshly initialized components')

    # [render]
    background: tuple = _opt(parse_background(DEFAULT_BACKGROUND), 'render', 'r,g,b background')
    cull: bool = _opt(True, 'render', 'skip components that cannot reach any pixel')
    width: int = _opt(0, 'render', 'output width in pixels (0 = fitted resolution)')
    height: int = _opt(0, 'render', 'output height in pixels (0 = fitted resolution)')
    interp_rate: int = _opt(4, 'render', 'frames per key-frame gap for interp')
    image_format: str = _opt('png', 'render', "'png' or 'ppm'")

    # [metrics]
    ssim_channel: str = _opt('luma', 'metrics', "'luma' (Rec. 601) or 'rgb' (per-channel mean)")
    psnr_cap: float = _opt(100.0, 'metrics', 'PSNR reported for identical frames')

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.type in ('int', int) and value < 0:
                raise ConfigError(f"{f.name} must be >= 0, got {value}")
        for name in ('batch_size', 'poly_degree', 'n_init', 'log_every', 'threads',
                     'densify_interval', 'opacity_reset_interval', 'split_count', 'interp_rate'):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ('means_lr_init', 'means_lr_final', 'opacity_lr', 'scales_lr', 'rotation_lr',
                     'color_lr', 'poly_lr', 'sigma_t_lr', 'timeline_lr'):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.mirror_weight <= 1.0:
            raise ConfigError(f"mirror_weight must be in [0,1], got {self.mirror_weight}")
        if not 0.0 <= self.ssim_weight <= 1.0:
            raise ConfigError(f"ssim_weight must be in [0,1], got {self.ssim_weight}")
        if not 0.0 < self.initial_opacity < 1.0:
            raise ConfigError(f"initial_opacity must be in (0,1), got {self.initial_opacity}")
        if self.ssim_channel not in ('luma', 'rgb'):
            raise ConfigError(f"ssim_channel must be 'luma' or 'rgb', got {self.ssim_channel!r}")
        if self.image_format not in ('png', 'ppm'):
            raise ConfigError(f"image_format must be 'png' or 'ppm', got {self.image_format!r}")


def _field_map():
    return {f.name: f for f in fields(TrainConfig)}


def _coerce(f, raw):
    """Turn the text value of a config key into the field's type."""
    text = str(raw).strip()
    try:
        if f.type in ('bool', bool):
            if text.lower() in ('1', 'true', 'yes', 'on'):
                return True
            if text.lower() in ('0', 'false', 'no', 'off'):
                return False
            raise ValueError(text)
        if f.type in ('int', int):
            return int(text)
        if f.type in ('float', float):
            return float(text)
        if f.type in ('tuple', tuple):
            return parse_background(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {f.name}: {text!r}")


def format_value(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, tuple):
        return ','.join(f"{v:g}" for v in value)
    return str(value)


def apply_overrides(cfg, overrides):
    """Return cfg with {key: text-or-value} overrides applied (None values skipped)."""
    fmap = _field_map()
    changes = {}
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in fmap:
            raise ConfigError(f"unknown config key: {key}")
        changes[key] = _coerce(fmap[key], format_value(value))
    return replace(cfg, **changes) if changes else cfg


def load_config(path=None, overrides=None):
    """Load a config file over the defaults, then apply CLI overrides."""
    cfg = TrainConfig()
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config not found: {path}")
        parser = configparser.ConfigParser(interpolation=None)
        fmap = _field_map()
        values = {}
        try:
            parser.read(path)
            for section in parser.sections():
                if section not in SECTIONS:
                    raise ConfigError(f"unknown config section: [{section}]")
                for key, raw in parser.items(section):
                    f = fmap.get(key)
                    if f is None or f.metadata['section'] != section:
                        raise ConfigError(f"unknown config key: [{section}] {key}")
                    values[key] = _coerce(f, raw)
        except configparser.Error as e:
            raise ConfigError(f"could not parse {path}: {e}")
        cfg = replace(cfg, **values)
    return apply_overrides(cfg, overrides)


def config_text(cfg=None):
    """Render a config as a config file (all keys, with comments)."""
    cfg = cfg or TrainConfig()
    lines = []
    for section in SECTIONS:
        lines.append(f"[{section}]")
        for f in fields(TrainConfig):
            if f.metadata['section'] != section:
                continue
            lines.append(f"# {f.metadata['doc']}")
            lines.append(f"{f.name} = {format_value(getattr(cfg, f.name))}")
        lines.append("")
    return "\n".join(lines)


def config_echo(cfg):
    """Flat {key: text} view used in checkpoint metadata."""
    return {f.name: format_value(getattr(cfg, f.name)) for f in fields(TrainConfig)}


if __name__ == '__main__':
    import sys

    if len(sys.argv) > 1:
        print(config_text(load_config(sys.argv[1])))
    else:
        print(config_text())
