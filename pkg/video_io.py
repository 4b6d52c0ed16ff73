#!/usr/bin/env python3
"""
Frames in, frames out, quality metrics, and checkpoints.

Frames are (h, w, 3) float arrays in [0,1]; 8-bit values map to v / 255
with no gamma transform.

Checkpoint layout (little-endian):
  header   magic "VGSF", u32 version, u32 n_components, u32 n_frames,
           u32 poly_degree, u32 n_overlays, u32 metadata_bytes
  metadata UTF-8 JSON (steps, seed, config echo, width, height, epsilon, next_key)
  timeline f32[n_frames - 1]
  keys     u32[n_components]
  params   f32 arrays in model.PARAM_NAMES order
  overlays per overlay: u32 frame, u32 count, u32[count] keys,
           f64 means, theta, s1, s2, scale, opacity, color

Usage:
  python3 video_io.py <frames_dir>           # Summarize a frame directory
  python3 video_io.py <a.png> <b.png>        # PSNR / SSIM of two images
"""
import os
import re
import json
import struct
import logging
from dataclasses import dataclass, field

import numpy as np
import imageio.v3 as iio
from scipy.signal import convolve2d

from errors import CheckpointError, IngestionError, ShapeError
from model import PARAM_NAMES, FrameTimeline, FLAT_EPSILON, VideoModel, param_shapes
from splat2d import SplatScene

logger = logging.getLogger(__name__)

FRAME_EXTENSIONS = ('.png', '.ppm')

# One PNM header token, skipping whitespace and # comments
_PNM_TOKEN = re.compile(rb'\s*(#[^\n]*\n\s*)*(\S+)')

MAGIC = b'VGSF'
VERSION = 1
_HEADER = struct.Struct('<4sIIIIII')
_OVERLAY_HEADER = struct.Struct('<II')

# Rec. 601 luma
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

PSNR_CAP = 100.0


# === Frames ===

@dataclass
class VideoSequence:
    frames: list
    fps_hint: float = None
    names: list = field(default_factory=list)

    def __post_init__(self):
        if not self.frames:
            raise IngestionError("no frames")
        shape = self.frames[0].shape
        for i, f in enumerate(self.frames):
            if f.shape != shape:
                name = self.names[i] if i < len(self.names) else f"#{i}"
                raise IngestionError(f"frame {name} is {f.shape[1]}x{f.shape[0]}, "
                                     f"expected {shape[1]}x{shape[0]}")

    @property
    def n_frames(self):
        return len(self.frames)

    @property
    def height(self):
        return self.frames[0].shape[0]

    @property
    def width(self):
        return self.frames[0].shape[1]


def natural_key(name):
    """Sort key treating digit runs as numbers: frame2 < frame10."""
    return [int(part) if part.isdigit() else part.lower() for part in re.split(r'(\d+)', name)]


def read_ppm(path):
    """Binary PPM (P6), 8- or 16-bit, as floats in [0,1]."""
    with open(path, 'rb') as f:
        data = f.read()
    header = []
    pos = 0
    while len(header) < 4:
        match = _PNM_TOKEN.match(data, pos)
        if match is None:
            raise IngestionError(f"{path}: truncated PPM header")
        header.append(match.group(2))
        pos = match.end()
    if header[0] != b'P6':
        raise IngestionError(f"{path}: unsupported PNM type {header[0].decode(errors='replace')}")
    try:
        width, height, maxval = (int(v) for v in header[1:])
    except ValueError:
        raise IngestionError(f"{path}: bad PPM header")
    if not 0 < maxval < 65536:
        raise IngestionError(f"{path}: bad maxval {maxval}")
    pos += 1  # single whitespace byte before the raster
    dtype = np.dtype('u1') if maxval < 256 else np.dtype('>u2')
    count = width * height * 3
    if len(data) - pos < count * dtype.itemsize:
        raise IngestionError(f"{path}: truncated PPM raster")
    raster = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    return raster.reshape(height, width, 3).astype(np.float64) / maxval


def read_frame(path):
    if path.lower().endswith('.ppm'):
        return read_ppm(path)
    pixels = np.asarray(iio.imread(path))
    if pixels.ndim == 2:
        pixels = np.repeat(pixels[..., None], 3, axis=2)
    pixels = pixels[..., :3]
    scale = 65535.0 if pixels.dtype == np.uint16 else 255.0
    return pixels.astype(np.float64) / scale


def load_frames(path):
    """Every PNG/PPM in a directory, in natural name order."""
    if not os.path.isdir(path):
        raise IngestionError(f"input not found: {path}")
    names = sorted((n for n in os.listdir(path) if n.lower().endswith(FRAME_EXTENSIONS)),
                   key=natural_key)
    if not names:
        raise IngestionError(f"no .png or .ppm frames in {path}")
    frames = []
    for name in names:
        frame = read_frame(os.path.join(path, name))
        if frames and frame.shape != frames[0].shape:
            raise IngestionError(f"{name} is {frame.shape[1]}x{frame.shape[0]}, "
                                 f"expected {frames[0].shape[1]}x{frames[0].shape[0]}")
        frames.append(frame)
    logger.info("loaded %d frames (%dx%d) from %s", len(frames),
                frames[0].shape[1], frames[0].shape[0], path)
    return VideoSequence(frames, names=names)


def to_bytes(frame):
    return np.rint(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path, frame):
    iio.imwrite(path, to_bytes(frame))


def save_ppm(path, frame):
    pixels = to_bytes(frame)
    h, w = pixels.shape[:2]
    with open(path, 'wb') as f:
        f.write(f'P6\n{w} {h}\n255\n'.encode('ascii'))
        f.write(pixels.tobytes())


IMAGE_WRITERS = {'png': save_png, 'ppm': save_ppm}


def save_image(stem, frame, image_format='png'):
    """Write `frame` to `stem` plus the format's extension; returns the path."""
    path = f"{stem}.{image_format}"
    IMAGE_WRITERS[image_format](path, frame)
    return path


# === Metrics ===

def _check_pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ShapeError(f"frame shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, cap=PSNR_CAP):
    """10 log10(1 / MSE), capped (identical frames report the cap)."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * np.log10(1.0 / mse))


def ssim_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-x ** 2 / (2.0 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _channels(frame, channel):
    if channel == 'luma':
        return [frame @ LUMA_WEIGHTS]
    return [frame[..., c] for c in range(frame.shape[-1])]


def _ssim_terms(x, y, window):
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    mu_x = convolve2d(x, window, mode='valid')
    mu_y = convolve2d(y, window, mode='valid')
    e_xx = convolve2d(x * x, window, mode='valid')
    e_yy = convolve2d(y * y, window, mode='valid')
    e_xy = convolve2d(x * y, window, mode='valid')
    a1 = 2.0 * mu_x * mu_y + c1
    a2 = 2.0 * (e_xy - mu_x * mu_y) + c2
    b1 = mu_x ** 2 + mu_y ** 2 + c1
    b2 = (e_xx - mu_x ** 2) + (e_yy - mu_y ** 2) + c2
    return mu_x, mu_y, a1, a2, b1, b2


def _check_ssim_size(a):
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise ShapeError(f"SSIM needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, "
                         f"got {a.shape[1]}x{a.shape[0]}")


def ssim(a, b, channel='luma'):
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), K1 0.01, K2 0.03, L 1."""
    a, b = _check_pair(a, b)
    _check_ssim_size(a)
    window = ssim_window()
    values = []
    for x, y in zip(_channels(a, channel), _channels(b, channel)):
        _, _, a1, a2, b1, b2 = _ssim_terms(x, y, window)
        values.append(np.mean(a1 * a2 / (b1 * b2)))
    return float(np.mean(values))


def ssim_grad(a, b, channel='luma'):
    """Gradient of ssim(a, b) with respect to a."""
    a, b = _check_pair(a, b)
    _check_ssim_size(a)
    window = ssim_window()
    xs, ys = _channels(a, channel), _channels(b, channel)
    grads = []
    for x, y in zip(xs, ys):
        mu_x, mu_y, a1, a2, b1, b2 = _ssim_terms(x, y, window)
        den = b1 * b2
        s = a1 * a2 / den
        m = s.size * len(xs)
        d_mu = (2.0 * mu_y * a2 - 2.0 * mu_y * a1) / den - s * (2.0 * mu_x / b1 - 2.0 * mu_x / b2)
        d_exx = -s / b2
        d_exy = 2.0 * a1 / den
        # adjoint of a valid convolution with a symmetric window is the full one
        g = (convolve2d(d_mu / m, window, mode='full')
             + 2.0 * x * convolve2d(d_exx / m, window, mode='full')
             + y * convolve2d(d_exy / m, window, mode='full'))
        grads.append(g)
    if channel == 'luma':
        return grads[0][..., None] * LUMA_WEIGHTS
    return np.stack(grads, axis=-1)


# === Checkpoints ===

class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint while reading {what}", self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def array(self, dtype, shape, what):
        dtype = np.dtype(dtype)
        count = int(np.prod(shape))
        raw = self.take(count * dtype.itemsize, what)
        return np.frombuffer(raw, dtype=dtype, count=count).reshape(shape)


_SCENE_FIELDS = [('means', 2), ('theta', 0), ('s1', 0), ('s2', 0), ('scale', 0),
                 ('opacity', 0), ('color', 3)]


def checkpoint_bytes(model):
    meta = dict(model.meta)
    meta.update({
        'width': model.width,
        'height': model.height,
        'epsilon': FLAT_EPSILON,
        'next_key': model.next_key,
    })
    meta_bytes = json.dumps(meta, sort_keys=True).encode('utf-8')
    parts = [
        _HEADER.pack(MAGIC, VERSION, len(model), model.n_frames, model.poly_degree,
                     len(model.overlays), len(meta_bytes)),
        meta_bytes,
        np.asarray(model.timeline.w, dtype='<f4').tobytes(),
        np.asarray(model.order_key, dtype='<u4').tobytes(),
    ]
    for name in PARAM_NAMES:
        parts.append(np.asarray(model.params[name], dtype='<f4').tobytes())
    for k in sorted(model.overlays):
        scene = model.overlays[k]
        parts.append(_OVERLAY_HEADER.pack(k, len(scene)))
        parts.append(np.asarray(scene.order_key, dtype='<u4').tobytes())
        for name, _ in _SCENE_FIELDS:
            parts.append(np.asarray(getattr(scene, name), dtype='<f8').tobytes())
    return b''.join(parts)


def save_checkpoint(model, path):
    """Write atomically: the file at `path` is either the old one or the complete new one."""
    data = checkpoint_bytes(model)
    tmp = f"{path}.tmp"
    with open(tmp, 'wb') as f:
        f.write(data)
    os.replace(tmp, path)
    logger.info("saved %d components to %s (%d bytes)", len(model), path, len(data))


def parse_checkpoint(data):
    r = _Reader(data)
    magic, version, n, n_frames, degree, n_overlays, meta_len = _HEADER.unpack(
        r.take(_HEADER.size, "header"))
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}", 4)
    meta_at = r.pos
    try:
        meta = json.loads(r.take(meta_len, "metadata").decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt metadata: {e}", meta_at)
    if n_frames < 2:
        raise CheckpointError(f"bad frame count {n_frames}", 12)

    w = r.array('<f4', (n_frames - 1,), "timeline").astype(np.float64)
    keys_at = r.pos
    keys = r.array('<u4', (n,), "order keys").astype(np.int64)
    if np.any(np.diff(keys) <= 0):
        raise CheckpointError("order keys are not strictly increasing", keys_at)
    params = {}
    for name, shape in param_shapes(n, degree).items():
        params[name] = r.array('<f4', shape, name).astype(np.float64)

    overlays = {}
    for _ in range(n_overlays):
        at = r.pos
        k, count = _OVERLAY_HEADER.unpack(r.take(_OVERLAY_HEADER.size, "overlay header"))
        if k >= n_frames:
            raise CheckpointError(f"overlay for frame {k} of {n_frames}", at)
        okeys = r.array('<u4', (count,), "overlay keys").astype(np.int64)
        values = {}
        for name, width in _SCENE_FIELDS:
            shape = (count, width) if width else (count,)
            values[name] = r.array('<f8', shape, f"overlay {name}").copy()
        try:
            overlays[k] = SplatScene(order_key=okeys, **values)
        except ValueError as e:
            raise CheckpointError(f"bad overlay: {e}", at)
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes", r.pos)

    try:
        width = int(meta.pop('width'))
        height = int(meta.pop('height'))
        next_key = int(meta.pop('next_key'))
        meta.pop('epsilon', None)
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"metadata missing {e}", meta_at)
    return VideoModel(params, keys, FrameTimeline(n_frames, w), width, height,
                      next_key=next_key, overlays=overlays, meta=meta)


def load_checkpoint(path):
    with open(path, 'rb') as f:
        data = f.read()
    return parse_checkpoint(data)


if __name__ == '__main__':
    import sys

    if len(sys.argv) == 3:
        a, b = read_frame(sys.argv[1]), read_frame(sys.argv[2])
        print(f"PSNR: {psnr(a, b):.3f} dB")
        print(f"SSIM: {ssim(a, b):.4f}")
    elif len(sys.argv) == 2:
        video = load_frames(sys.argv[1])
        print("=" * 50)
        print("FRAMES")
        print("=" * 50)
        print(f"  → {video.n_frames} frames, {video.width}x{video.height}")
        for name in video.names[:5]:
            print(f"  → {name}")
    else:
        print(__doc__)
