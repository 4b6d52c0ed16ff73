import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), '..'))

import numpy as np
import pytest

from model import FrameTimeline, VideoModel, param_shapes, quantize
from video_io import VideoSequence, save_png


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_model(params, n_frames, width, height):
    n = len(params['m_t_raw'])
    return VideoModel({k: np.asarray(v, dtype=float) for k, v in params.items()},
                      np.arange(n), FrameTimeline(n_frames), width, height)


def smooth_model(rng, n=3, n_frames=3, width=8, height=8, degree=2):
    """A small model whose every slice covers the whole frame well above the alpha cutoff
    and well below the alpha clamp, so finite differences see no kinks."""
    shapes = param_shapes(n, degree)
    m_t = rng.uniform(0.3, 0.7, n)
    opacity = rng.uniform(0.3, 0.7, n)
    theta = rng.uniform(0.1, 0.9, n)
    params = {
        'm_s': rng.uniform(-0.3, 0.3, shapes['m_s']),
        'm_t_raw': np.log(m_t / (1 - m_t)),
        'log_s': np.log(rng.uniform(1.0, 1.3, shapes['log_s'])),
        'theta_raw': np.log(theta / (1 - theta)),
        'log_sigma_t': np.log(rng.uniform(1.2, 1.5, n)),
        'poly': rng.uniform(-0.1, 0.1, shapes['poly']),
        'opacity_raw': np.log(opacity / (1 - opacity)),
        'color': rng.uniform(0.1, 0.9, shapes['color']),
    }
    return make_model(params, n_frames, width, height)


def random_video(rng, n_frames, width, height):
    return VideoSequence([rng.uniform(0, 1, (height, width, 3)) for _ in range(n_frames)])


def moving_disk_video(n_frames=6, size=16, radius=0.35):
    """A disk moving along a quadratic path over a static gradient."""
    ys, xs = np.mgrid[0:size, 0:size]
    x = (2 * xs + 1 - size) / size
    y = (2 * ys + 1 - size) / size
    background = np.stack([0.5 + 0.25 * x, 0.3 + 0.2 * y, np.full_like(x, 0.4)], axis=-1)
    frames = []
    for k in range(n_frames):
        s = k / (n_frames - 1)
        cx, cy = -0.5 + s, -0.3 + 0.6 * s * s
        disk = (x - cx) ** 2 + (y - cy) ** 2 <= radius ** 2
        frame = background.copy()
        frame[disk] = (0.9, 0.1, 0.1)
        frames.append(quantize(frame))
    return VideoSequence(frames)


def write_frames(directory, frames, prefix='frame'):
    os.makedirs(directory, exist_ok=True)
    for k, frame in enumerate(frames):
        save_png(os.path.join(directory, f"{prefix}{k:05d}.png"), frame)
    return str(directory)
