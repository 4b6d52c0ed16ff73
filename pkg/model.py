#!/usr/bin/env python3
"""
The trainable video model.

A model is a table of raw (unconstrained) per-component parameters plus a
frame timeline. Rows are kept sorted by order_key, so row order is
compositing order. Activations:

  m_t     = sigmoid(m_t_raw)
  sigma_t = exp(log_sigma_t)
  s1, s2  = exp(log_s)
  theta   = 2 pi sigmoid(theta_raw)
  opacity = sigmoid(opacity_raw)
  color   = clip(color, 0, 1)

Parameters are kept float32-representable so checkpoints reload bit-exactly.

Usage:
  python3 model.py                  # Initialize a small model and print a summary
"""
import copy
import math
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import expit, logit, softmax

from errors import ConfigError, EditError
from foldgauss import FoldedGaussian3D, PolyShift, SpatialCov2, poly_derivative, poly_eval
from splat2d import SplatScene, reachable

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi

# Checkpoint field order
PARAM_NAMES = ['m_s', 'm_t_raw', 'log_s', 'theta_raw', 'log_sigma_t', 'poly', 'opacity_raw', 'color']

# Keeps theta_raw finite when an edit lands exactly on 0 or 2 pi
THETA_EPS = 1e-12

# Thickness of the flat Gaussian along the image normal; only recorded for 3D viewers
FLAT_EPSILON = 1e-6

_OPACITY_BOUNDS = (np.finfo(float).tiny, np.nextafter(1.0, 0.0))

# Range of sigma_t at initialization
SIGMA_T_INIT = (0.01, 1.0)


def quantize(x):
    """Round to the nearest float32 value (kept as float64)."""
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def param_shapes(n, degree):
    return {
        'm_s': (n, 2), 'm_t_raw': (n,), 'log_s': (n, 2), 'theta_raw': (n,),
        'log_sigma_t': (n,), 'poly': (n, 2, degree), 'opacity_raw': (n,), 'color': (n, 3),
    }


# === Types ===

@dataclass
class FrameTimeline:
    """n_frames key frames mapped to times t_0 = 0 < ... < t_{n-1} = 1 by n - 1 weights."""
    n_frames: int
    w: np.ndarray = None

    def __post_init__(self):
        if self.n_frames < 2:
            raise ConfigError(f"a timeline needs at least 2 frames, got {self.n_frames}")
        if self.w is None:
            self.w = np.zeros(self.n_frames - 1)
        self.w = np.asarray(self.w, dtype=float).reshape(-1)
        if len(self.w) != self.n_frames - 1:
            raise ConfigError(f"timeline needs {self.n_frames - 1} weights, got {len(self.w)}")


@dataclass(frozen=True)
class TriangleFace:
    """Three points on z = 0 spanning a flat Gaussian."""
    m: tuple
    v1: tuple
    v2: tuple


@dataclass(frozen=True)
class FlatGaussian:
    m: tuple
    theta: float
    s1: float
    s2: float


@dataclass
class VideoModel:
    params: dict
    order_key: np.ndarray
    timeline: FrameTimeline
    width: int
    height: int
    next_key: int = None
    overlays: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.order_key = np.asarray(self.order_key, dtype=np.int64)
        if self.next_key is None:
            self.next_key = int(self.order_key.max()) + 1 if len(self.order_key) else 0
        if np.any(np.diff(self.order_key) <= 0):
            raise ValueError("order_key must be strictly increasing")

    def __len__(self):
        return len(self.order_key)

    @property
    def poly_degree(self):
        return self.params['poly'].shape[2]

    @property
    def n_frames(self):
        return self.timeline.n_frames

    @property
    def aspect(self):
        return self.width / self.height

    def copy(self):
        return copy.deepcopy(self)

    def rows_for(self, ids):
        """Row indices of the given order keys, in row order."""
        return np.nonzero(np.isin(self.order_key, np.asarray(list(ids), dtype=np.int64)))[0]

    def take(self, index):
        """A new model keeping only the given rows (bool mask or sorted indices)."""
        out = self.copy()
        out.params = {k: v[index].copy() for k, v in self.params.items()}
        out.order_key = self.order_key[index].copy()
        return out

    def append(self, params):
        """A new model with rows appended under fresh order keys."""
        n_new = len(params['m_t_raw'])
        out = self.copy()
        out.params = {k: np.concatenate([self.params[k], np.asarray(params[k], dtype=float)])
                      for k in PARAM_NAMES}
        keys = np.arange(self.next_key, self.next_key + n_new, dtype=np.int64)
        out.order_key = np.concatenate([self.order_key, keys])
        out.next_key = self.next_key + n_new
        return out


def scene_extent(aspect):
    """Half-diagonal of the normalized image rectangle."""
    return math.sqrt(aspect ** 2 + 1.0)


# === Activation ===

def activated(model):
    """Vectorized activation of every row."""
    p = model.params
    return {
        'm_s': p['m_s'],
        'm_t': expit(p['m_t_raw']),
        'sigma_t': np.maximum(np.exp(p['log_sigma_t']), np.finfo(float).tiny),
        's': np.maximum(np.exp(p['log_s']), np.finfo(float).tiny),
        'theta': TWO_PI * expit(p['theta_raw']),
        'poly': p['poly'],
        'opacity': np.clip(expit(p['opacity_raw']), *_OPACITY_BOUNDS),
        'color': np.clip(p['color'], 0.0, 1.0),
    }


def activate(model, row):
    """The FoldedGaussian3D of one row."""
    a = activated(model)
    theta = float(a['theta'][row]) % TWO_PI
    return FoldedGaussian3D(
        m_s=tuple(float(v) for v in a['m_s'][row]),
        cov_s=SpatialCov2(theta, float(a['s'][row, 0]), float(a['s'][row, 1])),
        m_t=float(a['m_t'][row]),
        sigma_t=float(a['sigma_t'][row]),
        poly=PolyShift(tuple(a['poly'][row, 0]), tuple(a['poly'][row, 1])),
        opacity=float(a['opacity'][row]),
        color=tuple(float(v) for v in a['color'][row]),
    )


def raw_from_components(components, degree=None):
    """Raw parameter table for a list of FoldedGaussian3D (inverse of activate)."""
    if degree is None:
        degree = max((fg.poly.degree for fg in components), default=0)
    n = len(components)
    params = {k: np.zeros(shape) for k, shape in param_shapes(n, degree).items()}
    for i, fg in enumerate(components):
        params['m_s'][i] = fg.m_s
        params['m_t_raw'][i] = logit(fg.m_t)
        params['log_s'][i] = (math.log(fg.cov_s.s1), math.log(fg.cov_s.s2))
        params['theta_raw'][i] = theta_to_raw(fg.cov_s.theta)
        params['log_sigma_t'][i] = math.log(fg.sigma_t)
        coeffs = fg.poly.coeffs()
        params['poly'][i, :, :coeffs.shape[1]] = coeffs
        params['opacity_raw'][i] = logit(fg.opacity)
        params['color'][i] = fg.color
    return params


def theta_to_raw(theta):
    frac = np.mod(np.asarray(theta, dtype=float), TWO_PI) / TWO_PI
    return logit(np.clip(frac, THETA_EPS, 1.0 - THETA_EPS))


def model_from_components(components, n_frames, width, height, degree=None):
    params = raw_from_components(components, degree)
    return VideoModel(params, np.arange(len(components)), FrameTimeline(n_frames), width, height)


# === Initialization ===

def init_model(cfg, n_frames, width, height, rng, bbox=None, n_init=None, video=None):
    """Random initial model.

    Means uniform in bbox (default: the whole normalized frame), m_t and
    theta/2pi uniform in [0,1), sigma_t uniform in [0.01, 1], polynomial
    coefficients uniform in [-1, 1], opacity cfg.initial_opacity, scales the
    distance to the third nearest mean. With `video`, colours come from the
    frame nearest each m_t at the pixel nearest each mean.
    """
    n = cfg.n_init if n_init is None else n_init
    if n < 1:
        raise ConfigError(f"n_init must be >= 1, got {n}")
    aspect = width / height
    if bbox is None:
        bbox = (-aspect, -1.0, aspect, 1.0)
    x0, y0, x1, y1 = bbox
    P = cfg.poly_degree

    m_s = np.stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n)], axis=1)
    m_t = rng.uniform(0.0, 1.0, n)
    sigma_t = rng.uniform(*SIGMA_T_INIT, n)
    poly = rng.uniform(-1.0, 1.0, (n, 2, P))
    theta_frac = rng.uniform(0.0, 1.0, n)

    params = {
        'm_s': m_s,
        'm_t_raw': logit(np.clip(m_t, THETA_EPS, 1.0 - THETA_EPS)),
        'log_s': np.repeat(_initial_log_scales(m_s, aspect)[:, None], 2, axis=1),
        'theta_raw': logit(np.clip(theta_frac, THETA_EPS, 1.0 - THETA_EPS)),
        'log_sigma_t': np.log(sigma_t),
        'poly': poly,
        'opacity_raw': np.full(n, logit(cfg.initial_opacity)),
        'color': (_seed_colors(video, m_s, m_t, width, height)
                  if video is not None else rng.uniform(0.0, 1.0, (n, 3))),
    }
    params = {k: quantize(v) for k, v in params.items()}
    params['log_sigma_t'] = np.clip(params['log_sigma_t'], *_float32_log_bounds(*SIGMA_T_INIT))
    timeline = FrameTimeline(n_frames)
    logger.info("initialized %d components (degree %d) for %d frames at %dx%d",
                n, P, n_frames, width, height)
    return VideoModel(params, np.arange(n), timeline, width, height)


def _float32_log_bounds(lo, hi):
    """float32 values a <= b with lo <= exp(a) and exp(b) <= hi."""
    a = np.float32(math.log(lo))
    if np.exp(np.float64(a)) < lo:
        a = np.nextafter(a, np.float32(np.inf))
    b = np.float32(math.log(hi))
    if np.exp(np.float64(b)) > hi:
        b = np.nextafter(b, np.float32(-np.inf))
    return float(a), float(b)


def _initial_log_scales(m_s, aspect):
    n = len(m_s)
    if n < 2:
        return np.full(n, math.log(0.1 * scene_extent(aspect)))
    k = min(4, n)
    dist, _ = cKDTree(m_s).query(m_s, k=k)
    d2 = np.maximum(dist[:, k - 1] ** 2, 1e-7)
    return 0.5 * np.log(d2)


def _seed_colors(video, m_s, m_t, width, height):
    frames = video.frames
    k = np.clip(np.rint(m_t * (len(frames) - 1)).astype(int), 0, len(frames) - 1)
    fh, fw = frames[0].shape[:2]
    # pixel index i has center (2i + 1 - w) / h
    i = np.clip(np.rint((m_s[:, 0] * fh + fw - 1) / 2.0).astype(int), 0, fw - 1)
    j = np.clip(np.rint((m_s[:, 1] * fh + fh - 1) / 2.0).astype(int), 0, fh - 1)
    stack = np.stack(frames)
    return stack[k, j, i]


# === Timeline ===

def frame_times(tl):
    """t_0 = 0, t_k = sum of the first k softmax weights, t_{n-1} = 1."""
    p = softmax(tl.w)
    t = np.concatenate([[0.0], np.cumsum(p)])
    t[-1] = 1.0
    return t


def timeline_jacobian(tl):
    """dt_k / dw_j = p_j (1[j < k] - t_k), shape (n_frames, n_frames - 1)."""
    p = softmax(tl.w)
    t = frame_times(tl)
    k = np.arange(tl.n_frames)[:, None]
    j = np.arange(tl.n_frames - 1)[None, :]
    jac = p[None, :] * ((j < k).astype(float) - t[:, None])
    jac[0] = 0.0
    jac[-1] = 0.0
    return jac


def interp_times(tl, k, r):
    """r + 1 evenly spaced times from t_k to t_{k+1}, both included."""
    if not 0 <= k < tl.n_frames - 1:
        raise IndexError(f"frame gap {k} out of range for {tl.n_frames} frames")
    if r < 1:
        raise ConfigError(f"subdivisions must be >= 1, got {r}")
    t = frame_times(tl)
    out = [t[k] + j * (t[k + 1] - t[k]) / r for j in range(r + 1)]
    out[0], out[-1] = t[k], t[k + 1]
    return out


# === Conditioning ===

def condition_all(model, t, cull=True, size=None):
    """Slice every component at time t into a SplatScene (source = model row).

    With cull, components that cannot touch any pixel of a `size` (default
    the model's resolution) render are dropped; renders are unaffected.
    """
    a = activated(model)
    u = a['m_t'] - t
    mean = a['m_s'] + poly_eval(a['poly'], u)
    with np.errstate(under='ignore'):
        scale = np.exp(-(t - a['m_t']) ** 2 / (2.0 * a['sigma_t'] ** 2))
    scene = SplatScene(
        means=mean,
        theta=a['theta'],
        s1=a['s'][:, 0],
        s2=a['s'][:, 1],
        scale=scale,
        opacity=a['opacity'],
        color=a['color'],
        order_key=model.order_key,
        source=np.arange(len(model)),
    )
    if cull and len(scene):
        w, h = size or (model.width, model.height)
        scene = scene.subset(reachable(scene, w, h))
    return scene


def condition_backward(model, t, scene, grads):
    """Chain splat2d gradients of a condition_all(model, t) scene back to raw parameters.

    Returns (raw_grads, dt) where raw_grads matches model.params and dt is
    the derivative with respect to the slice time.
    """
    a = activated(model)
    rows = scene.source
    out = {k: np.zeros_like(v) for k, v in model.params.items()}
    if len(rows) == 0:
        return out, 0.0

    m_t = a['m_t'][rows]
    sigma_t = a['sigma_t'][rows]
    u = m_t - t
    coeffs = a['poly'][rows]
    df = poly_derivative(coeffs, u)                     # (K, 2)
    g_mean = grads.mean

    out['m_s'][rows] = g_mean
    P = model.poly_degree
    if P:
        powers = u[:, None] ** np.arange(1, P + 1)[None, :]
        out['poly'][rows] = g_mean[:, :, None] * powers[:, None, :]

    scale = scene.scale
    da_dmt = scale * (t - m_t) / sigma_t ** 2
    g_mt = np.sum(g_mean * df, axis=1) + grads.scale * da_dmt
    out['m_t_raw'][rows] = g_mt * m_t * (1.0 - m_t)
    out['log_sigma_t'][rows] = grads.scale * scale * (t - m_t) ** 2 / sigma_t ** 2

    sig = expit(model.params['theta_raw'][rows])
    out['theta_raw'][rows] = grads.theta * TWO_PI * sig * (1.0 - sig)
    out['log_s'][rows] = np.stack([grads.s1 * scene.s1, grads.s2 * scene.s2], axis=1)
    op = a['opacity'][rows]
    out['opacity_raw'][rows] = grads.opacity * op * (1.0 - op)
    raw_color = model.params['color'][rows]
    out['color'][rows] = np.where((raw_color >= 0.0) & (raw_color <= 1.0), grads.color, 0.0)

    dt = float(np.sum(-np.sum(g_mean * df, axis=1) - grads.scale * da_dmt))
    return out, dt


# === Triangle faces ===

def to_triangle(g):
    """m, m + s1 r1, m + s2 r2 on the z = 0 plane, r1 and r2 the columns of R(theta)."""
    c, s = math.cos(g.theta), math.sin(g.theta)
    mx, my = float(g.m[0]), float(g.m[1])
    return TriangleFace(
        m=(mx, my, 0.0),
        v1=(mx + g.s1 * c, my + g.s1 * s, 0.0),
        v2=(mx - g.s2 * s, my + g.s2 * c, 0.0),
    )


def from_triangle(face, component_id=None):
    """Recover (m, theta, s1, s2) from a face by one Gram-Schmidt step."""
    m = np.asarray(face.m, dtype=float)
    e1 = np.asarray(face.v1, dtype=float) - m
    e2 = np.asarray(face.v2, dtype=float) - m
    e1[2] = 0.0
    e2[2] = 0.0
    s1 = float(np.linalg.norm(e1))
    if not s1 > 0.0 or not np.isfinite(s1):
        raise EditError("degenerate triangle face: v1 coincides with m", component_id=component_id)
    r1 = e1 / s1
    ortho = e2 - np.dot(e2, r1) * r1
    norm2 = float(np.linalg.norm(ortho))
    if not norm2 > 1e-12 * max(float(np.linalg.norm(e2)), s1):
        raise EditError("degenerate triangle face: v2 - m is parallel to v1 - m",
                        component_id=component_id)
    r2 = ortho / norm2
    s2 = float(np.dot(e2, r2))
    theta = math.atan2(r1[1], r1[0]) % TWO_PI
    return FlatGaussian(m=(float(m[0]), float(m[1])), theta=theta, s1=s1, s2=s2)


def flat_gaussians(model, rows=None):
    """FlatGaussian view (mean, angle, scales) of the given rows, default all."""
    a = activated(model)
    rows = range(len(model)) if rows is None else rows
    return [FlatGaussian(tuple(a['m_s'][i]), float(a['theta'][i]),
                         float(a['s'][i, 0]), float(a['s'][i, 1])) for i in rows]


# === Densification ===

@dataclass
class DensifyStats:
    """Running sums of conditioned-mean gradient norms per row."""
    accum: np.ndarray
    denom: np.ndarray

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n))

    def add(self, rows, grad_norms):
        np.add.at(self.accum, rows, grad_norms)
        np.add.at(self.denom, rows, 1.0)

    def realign(self, sources):
        keep = sources >= 0
        accum = np.zeros(len(sources))
        denom = np.zeros(len(sources))
        accum[keep] = self.accum[sources[keep]]
        denom[keep] = self.denom[sources[keep]]
        return DensifyStats(accum, denom)

    def mean(self):
        with np.errstate(invalid='ignore', divide='ignore'):
            g = self.accum / self.denom
        return np.nan_to_num(g, nan=0.0, posinf=0.0)


def densify_and_prune(model, stats, cfg, rng):
    """Clone small high-gradient components, split large ones, prune faint ones.

    Returns (model, sources): sources[i] is the old row of new row i, or -1
    for a freshly created component.
    """
    n = len(model)
    grads = stats.mean()
    extent = scene_extent(model.aspect)
    max_scale = np.exp(model.params['log_s']).max(axis=1) if n else np.zeros(0)
    bound = cfg.percent_dense * extent
    hot = grads >= cfg.grad_threshold
    clone = hot & (max_scale <= bound)
    split = hot & (max_scale > bound)

    new_params = {k: [v[clone]] for k, v in model.params.items()}

    split_rows = np.nonzero(split)[0]
    if len(split_rows):
        children = {k: np.repeat(v[split_rows], cfg.split_count, axis=0)
                    for k, v in model.params.items()}
        a = activated(model)
        z = rng.standard_normal((len(split_rows) * cfg.split_count, 2))
        s = np.repeat(a['s'][split_rows], cfg.split_count, axis=0)
        theta = np.repeat(a['theta'][split_rows], cfg.split_count, axis=0)
        c, sn = np.cos(theta), np.sin(theta)
        local = z * s
        offset = np.stack([c * local[:, 0] - sn * local[:, 1],
                           sn * local[:, 0] + c * local[:, 1]], axis=1)
        children['m_s'] = children['m_s'] + offset
        children['log_s'] = children['log_s'] - math.log(cfg.split_scale_divisor)
        for k in PARAM_NAMES:
            new_params[k].append(children[k])

    new_params = {k: quantize(np.concatenate(v)) for k, v in new_params.items()}
    n_fresh = len(new_params['m_t_raw'])
    grown = model.append(new_params)
    sources = np.concatenate([np.arange(n), np.full(n_fresh, -1)])

    opacity = expit(grown.params['opacity_raw'])
    drop = opacity < cfg.min_opacity
    drop[:n] |= split
    keep = ~drop
    out = grown.take(keep)
    logger.debug("densify: %d cloned, %d split, %d pruned, %d -> %d",
                 int(clone.sum()), len(split_rows), int(drop.sum()) - len(split_rows), n, len(out))
    return out, sources[keep]


def reset_opacity(model, value):
    """Cap every opacity at `value`."""
    out = model.copy()
    capped = np.minimum(expit(model.params['opacity_raw']), value)
    out.params['opacity_raw'] = quantize(logit(capped))
    return out


def validate(model):
    """Raise DomainError if any row does not activate to a valid component."""
    for row in range(len(model)):
        activate(model, row)


if __name__ == '__main__':
    from config import TrainConfig

    cfg = TrainConfig(n_init=1000, poly_degree=3)
    m = init_model(cfg, n_frames=8, width=64, height=48, rng=np.random.default_rng(0))
    print("=" * 50)
    print("MODEL")
    print("=" * 50)
    print(f"  → components: {len(m)}  degree: {m.poly_degree}")
    print(f"  → frame times: {np.round(frame_times(m.timeline), 4).tolist()}")
    for t in (0.0, 0.5, 1.0):
        print(f"  → visible at t={t}: {len(condition_all(m, t))}")
