#!/usr/bin/env python3
"""
Differentiable 2D Gaussian rasterizer.

Frames are (h, w, 3) float arrays in [0,1]. Gaussians live in normalized
image coordinates: pixel (i, j) has its center at
x = (2i + 1 - w) / h in [-w/h, w/h], y = (2j + 1 - h) / h in [-1, 1],
so one pixel is 2/h wide in both directions.

Compositing is front to back in order_key order, with the usual splatting
rules: alpha = min(0.99, opacity * exp(-q/2)), alphas below 1/255 are dropped,
and a pixel stops accumulating once its transmittance would fall below 1e-4.

rasterize() bins Gaussians into 16x16 tiles and can run tiles on a thread
pool. Inside a tile only the pixels in each Gaussian's cutoff box are
evaluated. The returned Raster keeps the per-pixel compositing terms, so
Raster.backward() gives exact gradients of <render, grad_frame> without a
second forward pass. render_bruteforce() walks every Gaussian over every
pixel and is the test oracle.

Usage:
  python3 splat2d.py [out.png]     # Render a random scene and compare with the oracle
"""
import math
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

TILE_SIZE = 16
ALPHA_MAX = 0.99
ALPHA_MIN = 1.0 / 255.0
T_MIN = 1e-4

# Widen tile bounds by this many pixels so rounding never drops a center
_BIN_SLACK = 1e-6


# === Types ===

@dataclass
class SplatScene:
    """Render-time view of a set of flat Gaussians (one row per Gaussian).

    cov = scale * R(theta) diag(s1^2, s2^2) R(theta)^T. `source` is the model
    row each Gaussian came from (-1 if none).
    """
    means: np.ndarray
    theta: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    scale: np.ndarray
    opacity: np.ndarray
    color: np.ndarray
    order_key: np.ndarray
    source: np.ndarray = None

    def __post_init__(self):
        n = len(self.theta)
        self.means = np.asarray(self.means, dtype=float).reshape(n, 2)
        self.color = np.asarray(self.color, dtype=float).reshape(n, 3)
        for name in ('theta', 's1', 's2', 'scale', 'opacity'):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(n))
        self.order_key = np.asarray(self.order_key, dtype=np.int64).reshape(n)
        if self.source is None:
            self.source = np.full(n, -1, dtype=np.int64)
        self.source = np.asarray(self.source, dtype=np.int64).reshape(n)
        if len(np.unique(self.order_key)) != n:
            raise ValueError("order_key values must be unique")

    def __len__(self):
        return len(self.theta)

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 2)), [], [], [], [], [], np.zeros((0, 3)), [])

    @classmethod
    def from_gaussians(cls, gaussians, order_keys=None):
        gaussians = list(gaussians)
        if order_keys is None:
            order_keys = np.arange(len(gaussians))
        if not gaussians:
            return cls.empty()
        return cls(
            means=[g.mean for g in gaussians],
            theta=[g.cov.theta for g in gaussians],
            s1=[g.cov.s1 for g in gaussians],
            s2=[g.cov.s2 for g in gaussians],
            scale=[g.scale for g in gaussians],
            opacity=[g.opacity for g in gaussians],
            color=[g.color for g in gaussians],
            order_key=order_keys,
        )

    def subset(self, index):
        """Rows selected by a bool mask or index array, order preserved."""
        return SplatScene(
            self.means[index], self.theta[index], self.s1[index], self.s2[index],
            self.scale[index], self.opacity[index], self.color[index],
            self.order_key[index], self.source[index],
        )

    def copy(self):
        return self.subset(np.arange(len(self)))

    def concat(self, other):
        return SplatScene(
            np.concatenate([self.means, other.means]),
            np.concatenate([self.theta, other.theta]),
            np.concatenate([self.s1, other.s1]),
            np.concatenate([self.s2, other.s2]),
            np.concatenate([self.scale, other.scale]),
            np.concatenate([self.opacity, other.opacity]),
            np.concatenate([self.color, other.color]),
            np.concatenate([self.order_key, other.order_key]),
            np.concatenate([self.source, other.source]),
        )


@dataclass
class GradBuffer:
    """Per-Gaussian partials of <render, grad_frame>, rows aligned with the scene."""
    mean: np.ndarray
    theta: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    scale: np.ndarray
    opacity: np.ndarray
    color: np.ndarray
    visible: np.ndarray = field(default=None)

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros((n, 2)), np.zeros(n), np.zeros(n), np.zeros(n),
                   np.zeros(n), np.zeros(n), np.zeros((n, 3)), np.zeros(n, dtype=bool))

    def __len__(self):
        return len(self.theta)


@dataclass
class TileTerms:
    """Compositing terms of one tile, one entry per (pixel, Gaussian) pair.

    Pairs are sorted by pixel, then front to back; `depth` is the position of
    a pair in its pixel's list. alpha is zero for pairs behind the
    termination point.
    """
    box: tuple
    members: np.ndarray
    owner: np.ndarray
    pixel: np.ndarray
    depth: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    q: np.ndarray
    G: np.ndarray
    raw: np.ndarray
    alpha: np.ndarray
    T: np.ndarray
    T_final: np.ndarray

    @property
    def n_pixels(self):
        y0, y1, x0, x1 = self.box
        return (y1 - y0) * (x1 - x0)

    def dense(self, values):
        """Scatter per-pair values into an (n_pixels, max_depth) matrix, zero padded."""
        width = int(self.depth.max()) + 1 if len(self.depth) else 0
        out = np.zeros((self.n_pixels, width))
        out[self.pixel, self.depth] = values
        return out


# === Geometry ===

def pixel_centers(w, h):
    """Normalized x of each column and y of each row."""
    xs = (2.0 * np.arange(w) + 1.0 - w) / h
    ys = (2.0 * np.arange(h) + 1.0 - h) / h
    return xs, ys


def _prepared(scene):
    """Per-Gaussian constants in compositing order, restricted to renderable rows.

    Returns (rows, consts) where rows are scene row indices.
    """
    order = np.argsort(scene.order_key, kind='stable')
    with np.errstate(all='ignore'):
        ok = (
            np.isfinite(scene.scale) & (scene.scale > 0)
            & np.isfinite(scene.s1) & (scene.s1 > 0)
            & np.isfinite(scene.s2) & (scene.s2 > 0)
            & np.all(np.isfinite(scene.means), axis=1)
            & (scene.opacity * 255.0 >= 1.0)
        )
    rows = order[ok[order]]
    c = np.cos(scene.theta[rows])
    s = np.sin(scene.theta[rows])
    consts = {
        'mx': scene.means[rows, 0],
        'my': scene.means[rows, 1],
        'c': c,
        's': s,
        's1': scene.s1[rows],
        's2': scene.s2[rows],
        'scale': scene.scale[rows],
        'opacity': scene.opacity[rows],
        'color': scene.color[rows],
    }
    return rows, consts


def _footprint(consts):
    """Half-extents (normalized units) of the ellipse where alpha >= 1/255."""
    q_max = 2.0 * np.log(np.maximum(255.0 * consts['opacity'], 1.0))
    var1 = consts['scale'] * consts['s1'] ** 2
    var2 = consts['scale'] * consts['s2'] ** 2
    sxx = consts['c'] ** 2 * var1 + consts['s'] ** 2 * var2
    syy = consts['s'] ** 2 * var1 + consts['c'] ** 2 * var2
    return np.sqrt(q_max * sxx), np.sqrt(q_max * syy)


def _pixel_ranges(consts, w, h):
    """Inclusive pixel index ranges covered by each footprint, and whether any pixel is."""
    hx, hy = _footprint(consts)
    # pixel index i has center x_i = (2i + 1 - w) / h  =>  i = (x h + w - 1) / 2
    with np.errstate(all='ignore'):
        i0 = np.ceil((consts['mx'] - hx) * h / 2.0 + (w - 1) / 2.0 - _BIN_SLACK)
        i1 = np.floor((consts['mx'] + hx) * h / 2.0 + (w - 1) / 2.0 + _BIN_SLACK)
        j0 = np.ceil((consts['my'] - hy) * h / 2.0 + (h - 1) / 2.0 - _BIN_SLACK)
        j1 = np.floor((consts['my'] + hy) * h / 2.0 + (h - 1) / 2.0 + _BIN_SLACK)
    i0 = np.clip(np.nan_to_num(i0, nan=w), 0, w).astype(np.int64)
    i1 = np.clip(np.nan_to_num(i1, nan=-1), -1, w - 1).astype(np.int64)
    j0 = np.clip(np.nan_to_num(j0, nan=h), 0, h).astype(np.int64)
    j1 = np.clip(np.nan_to_num(j1, nan=-1), -1, h - 1).astype(np.int64)
    return i0, i1, j0, j1, (i0 <= i1) & (j0 <= j1)


def _bin_tiles(ranges, w, h):
    """Per-tile arrays of positions (into consts) in compositing order."""
    tiles_x = (w + TILE_SIZE - 1) // TILE_SIZE
    tiles_y = (h + TILE_SIZE - 1) // TILE_SIZE
    bins = [[None] * tiles_x for _ in range(tiles_y)]
    i0, i1, j0, j1, hit = ranges
    idx = np.nonzero(hit)[0]
    if len(idx) == 0:
        return bins

    tx0 = i0[idx] // TILE_SIZE
    tx1 = i1[idx] // TILE_SIZE
    ty0 = j0[idx] // TILE_SIZE
    ty1 = j1[idx] // TILE_SIZE

    buckets = {}
    for k, a0, a1, b0, b1 in zip(idx, tx0, tx1, ty0, ty1):
        for ty in range(b0, b1 + 1):
            for tx in range(a0, a1 + 1):
                buckets.setdefault((ty, tx), []).append(k)
    for (ty, tx), members in buckets.items():
        bins[ty][tx] = np.asarray(members, dtype=np.int64)
    return bins


def _tile_box(tx, ty, w, h):
    return ty * TILE_SIZE, min((ty + 1) * TILE_SIZE, h), tx * TILE_SIZE, min((tx + 1) * TILE_SIZE, w)


def _alpha_terms(dx, dy, consts, members):
    """Quadratic form, falloff and alpha of members[k] at offset (dx[k], dy[k])."""
    c = consts['c'][members]
    s = consts['s'][members]
    inv1 = 1.0 / consts['s1'][members] ** 2
    inv2 = 1.0 / consts['s2'][members] ** 2
    inv_scale = 1.0 / consts['scale'][members]
    u1 = dx * c + dy * s
    u2 = -dx * s + dy * c
    with np.errstate(over='ignore', invalid='ignore'):
        q = (u1 * u1 * inv1 + u2 * u2 * inv2) * inv_scale
    q = np.where(np.isfinite(q), q, np.inf)
    G = np.exp(-0.5 * q)
    raw = consts['opacity'][members] * G
    alpha = np.minimum(ALPHA_MAX, raw)
    alpha = np.where(alpha < ALPHA_MIN, 0.0, alpha)
    return u1, u2, q, G, raw, alpha


def _tile_pairs(box, members, ranges):
    """(owner, i, j) for every pixel of the tile inside each member's cutoff box.

    Member-major, so pairs of one pixel come out front to back.
    """
    y0, y1, x0, x1 = box
    i0 = np.maximum(ranges[0][members], x0)
    i1 = np.minimum(ranges[1][members], x1 - 1)
    j0 = np.maximum(ranges[2][members], y0)
    j1 = np.minimum(ranges[3][members], y1 - 1)
    bw = i1 - i0 + 1
    counts = bw * (j1 - j0 + 1)
    owner = np.repeat(np.arange(len(members)), counts)
    local = np.arange(len(owner)) - np.repeat(np.cumsum(counts) - counts, counts)
    width = bw[owner]
    return owner, i0[owner] + local % width, j0[owner] + local // width


def _tile_terms(box, members, ranges, consts, xs, ys):
    y0, y1, x0, x1 = box
    n_pixels = (y1 - y0) * (x1 - x0)
    owner, i, j = _tile_pairs(box, members, ranges)
    member = members[owner]
    u1, u2, q, G, raw, alpha = _alpha_terms(xs[i] - consts['mx'][member],
                                            ys[j] - consts['my'][member], consts, member)

    pixel = (j - y0) * (x1 - x0) + (i - x0)
    order = np.nonzero(alpha > 0.0)[0]
    order = order[np.argsort(pixel[order], kind='stable')]
    pixel = pixel[order]
    counts = np.bincount(pixel, minlength=n_pixels)
    depth = np.arange(len(pixel)) - (np.cumsum(counts) - counts)[pixel]
    terms = TileTerms(box, members, owner[order], pixel, depth, u1[order], u2[order], q[order],
                      G[order], raw[order], alpha[order], None, None)

    A = terms.dense(terms.alpha)
    T_after = np.cumprod(1.0 - A, axis=1)
    stopped = np.cumsum(T_after < T_MIN, axis=1) > 0
    A = np.where(stopped, 0.0, A)
    T_incl = np.cumprod(1.0 - A, axis=1)
    T = np.ones_like(A)
    T[:, 1:] = T_incl[:, :-1]
    terms.alpha = A[pixel, terms.depth]
    terms.T = T[pixel, terms.depth]
    terms.T_final = T_incl[:, -1] if A.shape[1] else np.ones(n_pixels)
    return terms


def _tile_color(terms, consts, background):
    weights = terms.alpha * terms.T
    color = consts['color'][terms.members[terms.owner]]
    rgb = np.stack([np.bincount(terms.pixel, weights=weights * color[:, ch], minlength=terms.n_pixels)
                    for ch in range(3)], axis=1)
    return rgb + terms.T_final[:, None] * background[None, :]


def _tile_backward(terms, consts, bg, g):
    """Per-member partials for one tile; g is the (n_pixels, 3) upstream gradient."""
    K = len(terms.members)
    member = terms.members[terms.owner]
    alpha, T, pixel = terms.alpha, terms.T, terms.pixel
    colors = consts['color'][member]
    gp = g[pixel]
    weights = alpha * T

    def per_member(values):
        return np.bincount(terms.owner, weights=values, minlength=K)

    d_color = np.stack([per_member(weights * gp[:, ch]) for ch in range(3)], axis=1)

    gc = np.sum(gp * colors, axis=1)        # g . c_k
    contrib = weights * gc
    # suffix_k = sum of later contributions at the same pixel + (g . bg) T_final
    C = terms.dense(contrib)
    later = np.cumsum(C[:, ::-1], axis=1)[:, ::-1] - C
    suffix = later[pixel, terms.depth] + ((g @ bg) * terms.T_final)[pixel]
    d_alpha = gc * T - suffix / (1.0 - alpha)

    active = (alpha > 0.0) & (terms.raw < ALPHA_MAX)
    d_raw = np.where(active, d_alpha, 0.0)
    d_q = -0.5 * d_raw * terms.raw

    c = consts['c'][member]
    s = consts['s'][member]
    s1 = consts['s1'][member]
    s2 = consts['s2'][member]
    inv1 = 1.0 / s1 ** 2
    inv2 = 1.0 / s2 ** 2
    inv_scale = 1.0 / consts['scale'][member]
    u1, u2 = terms.u1, terms.u2
    a1 = u1 * inv1
    a2 = u2 * inv2
    # q = (u1^2 / s1^2 + u2^2 / s2^2) / scale with d = p - mean
    dq_ddx = 2.0 * (a1 * c - a2 * s) * inv_scale
    dq_ddy = 2.0 * (a1 * s + a2 * c) * inv_scale

    return {
        'mean': np.stack([-per_member(d_q * dq_ddx), -per_member(d_q * dq_ddy)], axis=1),
        'theta': per_member(d_q * 2.0 * u1 * u2 * (inv1 - inv2) * inv_scale),
        's1': per_member(d_q * (-2.0 * u1 * u1 / s1 ** 3) * inv_scale),
        's2': per_member(d_q * (-2.0 * u2 * u2 / s2 ** 3) * inv_scale),
        'scale': per_member(d_q * (-terms.q * inv_scale)),
        'opacity': per_member(d_raw * terms.G),
        'color': d_color,
    }


def _run_tiles(fn, jobs, threads):
    if threads and threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, jobs))
    return [fn(job) for job in jobs]


@dataclass
class Raster:
    """One forward pass over a scene: the frame plus the per-tile terms behind it."""
    scene: SplatScene
    width: int
    height: int
    background: np.ndarray
    threads: int
    rows: np.ndarray
    consts: dict
    visible: np.ndarray
    tiles: list
    frame: np.ndarray

    def backward(self, grad_frame):
        """Gradients of sum(frame * grad_frame) w.r.t. every scene parameter.

        Clamped (alpha >= 0.99), cut-off (alpha < 1/255) and post-termination
        contributions have zero gradient.
        """
        w, h = self.width, self.height
        grad_frame = np.asarray(grad_frame, dtype=float)
        if grad_frame.shape != (h, w, 3):
            raise ValueError(f"grad_frame must be {(h, w, 3)}, got {grad_frame.shape}")
        grads = GradBuffer.zeros(len(self.scene))
        grads.visible[self.rows[self.visible]] = True
        if not np.any(grad_frame):
            return grads

        def work(terms):
            y0, y1, x0, x1 = terms.box
            g = grad_frame[y0:y1, x0:x1].reshape(-1, 3)
            return terms.members, _tile_backward(terms, self.consts, self.background, g)

        for members, part in _run_tiles(work, self.tiles, self.threads):
            target = self.rows[members]
            grads.mean[target] += part['mean']
            grads.color[target] += part['color']
            for key in ('theta', 's1', 's2', 'scale', 'opacity'):
                getattr(grads, key)[target] += part[key]
        return grads


# === Operations ===

def alpha_at(g, pixel_center):
    """Alpha of one conditioned Gaussian at a point (clamped, cut off below 1/255)."""
    scene = SplatScene.from_gaussians([g])
    rows, consts = _prepared(scene)
    if len(rows) == 0:
        return 0.0
    p = np.asarray(pixel_center, dtype=float)
    alpha = _alpha_terms(np.array([p[0] - consts['mx'][0]]), np.array([p[1] - consts['my'][0]]),
                         consts, np.array([0]))[-1]
    return float(alpha[0])


def rasterize(scene, w, h, background=(0.0, 0.0, 0.0), threads=1):
    """Tiled front-to-back forward pass; Raster.frame is the (h, w, 3) render."""
    if w < 1 or h < 1:
        raise ValueError(f"frame size must be positive, got {w}x{h}")
    bg = np.asarray(background, dtype=float)
    rows, consts = _prepared(scene)
    ranges = _pixel_ranges(consts, w, h)
    bins = _bin_tiles(ranges, w, h)
    xs, ys = pixel_centers(w, h)

    frame = np.empty((h, w, 3))
    frame[...] = bg
    jobs = [(_tile_box(tx, ty, w, h), bins[ty][tx])
            for ty in range(len(bins)) for tx in range(len(bins[0])) if bins[ty][tx] is not None]

    def work(job):
        box, members = job
        terms = _tile_terms(box, members, ranges, consts, xs, ys)
        return terms, _tile_color(terms, consts, bg)

    tiles = []
    for terms, rgb in _run_tiles(work, jobs, threads):
        y0, y1, x0, x1 = terms.box
        frame[y0:y1, x0:x1] = rgb.reshape(y1 - y0, x1 - x0, 3)
        tiles.append(terms)
    return Raster(scene, w, h, bg, threads, rows, consts, ranges[4], tiles, np.clip(frame, 0.0, 1.0))


def render(scene, w, h, background=(0.0, 0.0, 0.0), threads=1):
    """Tiled front-to-back render. Returns an (h, w, 3) frame."""
    return rasterize(scene, w, h, background, threads).frame


def render_bruteforce(scene, w, h, background=(0.0, 0.0, 0.0)):
    """Oracle: every Gaussian against every pixel, one Gaussian at a time."""
    if w < 1 or h < 1:
        raise ValueError(f"frame size must be positive, got {w}x{h}")
    bg = np.asarray(background, dtype=float)
    xs, ys = pixel_centers(w, h)
    px, py = np.meshgrid(xs, ys)
    color = np.zeros((h, w, 3))
    T = np.ones((h, w))
    done = np.zeros((h, w), dtype=bool)

    for k in np.argsort(scene.order_key, kind='stable'):
        scale, s1, s2 = scene.scale[k], scene.s1[k], scene.s2[k]
        if not (scale > 0 and s1 > 0 and s2 > 0 and np.isfinite(scale)):
            continue
        c, s = math.cos(scene.theta[k]), math.sin(scene.theta[k])
        dx = px - scene.means[k, 0]
        dy = py - scene.means[k, 1]
        u1 = dx * c + dy * s
        u2 = -dx * s + dy * c
        with np.errstate(over='ignore', invalid='ignore'):
            q = (u1 * u1 / s1 ** 2 + u2 * u2 / s2 ** 2) / scale
        q = np.where(np.isfinite(q), q, np.inf)
        alpha = np.minimum(ALPHA_MAX, scene.opacity[k] * np.exp(-0.5 * q))
        alpha = np.where((alpha < ALPHA_MIN) | done, 0.0, alpha)

        test_T = T * (1.0 - alpha)
        stop = test_T < T_MIN
        done |= stop
        alpha = np.where(stop, 0.0, alpha)

        color += (alpha * T)[..., None] * scene.color[k]
        T = T * (1.0 - alpha)

    return np.clip(color + T[..., None] * bg, 0.0, 1.0)


def render_backward(scene, w, h, background, grad_frame, threads=1):
    """Gradients of sum(render(scene) * grad_frame) w.r.t. every scene parameter."""
    grad_frame = np.asarray(grad_frame, dtype=float)
    if grad_frame.shape != (h, w, 3):
        raise ValueError(f"grad_frame must be {(h, w, 3)}, got {grad_frame.shape}")
    return rasterize(scene, w, h, background, threads).backward(grad_frame)


def reachable(scene, w, h):
    """Rows that can change at least one pixel of a w x h render.

    Dropping the other rows leaves render() output bit-identical.
    """
    keep = np.zeros(len(scene), dtype=bool)
    rows, consts = _prepared(scene)
    if len(rows):
        keep[rows[_pixel_ranges(consts, w, h)[4]]] = True
    return keep


def mirror(frame):
    """Horizontal flip: pixel (x, y) -> (w - 1 - x, y)."""
    return np.ascontiguousarray(np.asarray(frame)[:, ::-1])


def mirror_scene(scene):
    """The scene as seen by the opposite camera: x -> -x, theta -> pi - theta."""
    means = scene.means.copy()
    means[:, 0] = -means[:, 0]
    theta = np.mod(math.pi - scene.theta, 2.0 * math.pi)
    return SplatScene(means, theta, scene.s1.copy(), scene.s2.copy(), scene.scale.copy(),
                      scene.opacity.copy(), scene.color.copy(), scene.order_key.copy(),
                      scene.source.copy())


def unmirror_grads(grads):
    """Map gradients taken on mirror_scene(scene) back to scene's parameters."""
    mean = grads.mean.copy()
    mean[:, 0] = -mean[:, 0]
    return GradBuffer(mean, -grads.theta, grads.s1.copy(), grads.s2.copy(), grads.scale.copy(),
                      grads.opacity.copy(), grads.color.copy(), grads.visible.copy())


def random_scene(rng, n, spread=1.0, min_scale=0.05, max_scale=0.4):
    """A random scene in normalized coordinates (test and demo helper)."""
    return SplatScene(
        means=rng.uniform(-spread, spread, (n, 2)),
        theta=rng.uniform(0, 2 * math.pi, n),
        s1=rng.uniform(min_scale, max_scale, n),
        s2=rng.uniform(min_scale, max_scale, n),
        scale=rng.uniform(0.5, 1.0, n),
        opacity=rng.uniform(0.05, 0.95, n),
        color=rng.uniform(0, 1, (n, 3)),
        order_key=rng.permutation(n),
    )


if __name__ == '__main__':
    import sys
    import time

    rng = np.random.default_rng(0)
    scene = random_scene(rng, 64)

    print("=" * 50)
    print("RASTERIZER CHECK")
    print("=" * 50)
    start = time.time()
    tiled = render(scene, 32, 32)
    print(f"  → tiled render: {(time.time() - start) * 1000:.1f} ms")
    start = time.time()
    oracle = render_bruteforce(scene, 32, 32)
    print(f"  → brute force: {(time.time() - start) * 1000:.1f} ms")
    print(f"  → max |diff|: {np.abs(tiled - oracle).max():.2e}")

    if len(sys.argv) > 1:
        from video_io import save_png
        save_png(sys.argv[1], render(scene, 256, 256))
        print(f"  → wrote {sys.argv[1]}")
