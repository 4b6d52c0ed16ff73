#!/usr/bin/env python3
"""
Fitting a VideoModel to a frame sequence.

Each step samples a batch of key frames, slices the model at each frame's
time, renders it (and, with two_camera, the mirrored scene against the
mirrored frame), and backpropagates the loss through the rasterizer,
the conditioning, the activations and the frame timeline into one Adam step.

Usage:
  python3 trainer.py <frames_dir> [steps]     # Quick fit with default settings
"""
import csv
import time
import logging
import itertools
from dataclasses import dataclass

import numpy as np
from tqdm import tqdm

from config import apply_overrides
from errors import ConfigError, ShapeError, TrainingDivergedError
from model import (
    PARAM_NAMES, DensifyStats, condition_all, condition_backward, densify_and_prune,
    frame_times, init_model, quantize, reset_opacity, timeline_jacobian,
)
from splat2d import GradBuffer, mirror, mirror_scene, rasterize, render, unmirror_grads
from video_io import psnr, ssim, ssim_grad

logger = logging.getLogger(__name__)

# Raw parameter -> TrainConfig learning-rate field ('means' follows the decay schedule)
LR_GROUPS = {
    'm_s': 'means',
    'm_t_raw': 'means',
    'log_s': 'scales_lr',
    'theta_raw': 'rotation_lr',
    'log_sigma_t': 'sigma_t_lr',
    'poly': 'poly_lr',
    'opacity_raw': 'opacity_lr',
    'color': 'color_lr',
    'w': 'timeline_lr',
}

METRIC_COLUMNS = ['step', 'loss', 'psnr_probe', 'n_gaussians', 'wall_ms', 'width', 'height']
SWEEP_METRICS = ['psnr_mean', 'n_gaussians', 'wall_s']


def expon_lr(step, lr_init, lr_final, max_steps):
    """Log-linear decay from lr_init at step 0 to lr_final at max_steps."""
    if max_steps <= 0:
        return lr_init
    t = np.clip(step / max_steps, 0.0, 1.0)
    return float(np.exp(np.log(lr_init) * (1.0 - t) + np.log(lr_final) * t))


def learning_rates(cfg, step):
    lrs = {}
    for name, attr in LR_GROUPS.items():
        if attr == 'means':
            lrs[name] = expon_lr(step, cfg.means_lr_init, cfg.means_lr_final, cfg.steps)
        else:
            lrs[name] = getattr(cfg, attr)
    return lrs


@dataclass
class OptimizerState:
    """Adam moments for every raw parameter and the timeline weights."""
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-15

    @classmethod
    def zeros(cls, model):
        shapes = {k: v.shape for k, v in model.params.items()}
        shapes['w'] = model.timeline.w.shape
        return cls({k: np.zeros(s) for k, s in shapes.items()},
                   {k: np.zeros(s) for k, s in shapes.items()})

    def realign(self, sources):
        """Follow a densify/prune: row i takes the moments of old row sources[i], or zeros."""
        keep = sources >= 0
        m, v = {}, {}
        for name in self.m:
            if name == 'w':
                m[name], v[name] = self.m[name], self.v[name]
                continue
            shape = (len(sources),) + self.m[name].shape[1:]
            m[name] = np.zeros(shape)
            v[name] = np.zeros(shape)
            m[name][keep] = self.m[name][sources[keep]]
            v[name][keep] = self.v[name][sources[keep]]
        return OptimizerState(m, v, self.step, self.beta1, self.beta2, self.eps)

    def reset(self, name):
        self.m[name] = np.zeros_like(self.m[name])
        self.v[name] = np.zeros_like(self.v[name])

    def apply(self, model, grads, lrs):
        """One Adam update of model.params and model.timeline.w, in place."""
        self.step += 1
        bc1 = 1.0 - self.beta1 ** self.step
        bc2 = 1.0 - self.beta2 ** self.step
        for name, g in grads.items():
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            update = lrs[name] * (self.m[name] / bc1) / (np.sqrt(self.v[name] / bc2) + self.eps)
            if name == 'w':
                model.timeline.w = model.timeline.w - update
            else:
                model.params[name] = model.params[name] - update
        model.params['color'] = np.clip(model.params['color'], 0.0, 1.0)

    def check_aligned(self, model):
        for name, arr in model.params.items():
            if self.m[name].shape != arr.shape:
                raise ShapeError(f"optimizer state for {name} is {self.m[name].shape}, "
                                 f"parameters are {arr.shape}")


# === Losses ===

def loss_mse(rendered, target):
    """Mean squared error and its gradient 2 (rendered - target) / N."""
    rendered = np.asarray(rendered, dtype=float)
    target = np.asarray(target, dtype=float)
    if rendered.shape != target.shape:
        raise ShapeError(f"frame shapes differ: {rendered.shape} vs {target.shape}")
    diff = rendered - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def frame_loss(rendered, target, cfg):
    """(1 - ssim_weight) * MSE + ssim_weight * (1 - SSIM), with gradient."""
    value, grad = loss_mse(rendered, target)
    lam = cfg.ssim_weight
    if lam <= 0.0:
        return value, grad
    channel = cfg.ssim_channel
    s = ssim(rendered, target, channel=channel)
    g_ssim = ssim_grad(rendered, target, channel=channel)
    return (1.0 - lam) * value + lam * (1.0 - s), (1.0 - lam) * grad - lam * g_ssim


def _add_grads(a, b, weight):
    return GradBuffer(
        a.mean + weight * b.mean, a.theta + weight * b.theta, a.s1 + weight * b.s1,
        a.s2 + weight * b.s2, a.scale + weight * b.scale, a.opacity + weight * b.opacity,
        a.color + weight * b.color, a.visible | b.visible,
    )


def _scale_grads(a, weight):
    return _add_grads(GradBuffer.zeros(len(a)), a, weight)


def loss_and_grads(model, video, indices, cfg, stats=None):
    """Batch loss and its gradient with respect to every raw parameter and the timeline.

    Returns (loss, grads, frame_losses). grads has one entry per model
    parameter plus 'w'.
    """
    frames = video.frames
    h, w = model.height, model.width
    bg = cfg.background
    times = frame_times(model.timeline)
    jac = timeline_jacobian(model.timeline)
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    grads['w'] = np.zeros_like(model.timeline.w)
    weight_m = cfg.mirror_weight if cfg.two_camera else 0.0
    weight_d = 1.0 - weight_m
    batch = len(indices)
    losses = []

    for k in indices:
        t = times[k]
        target = frames[k]
        scene = condition_all(model, t, cull=cfg.cull)
        raster = rasterize(scene, w, h, bg, threads=cfg.threads)
        loss_d, g_d = frame_loss(raster.frame, target, cfg)
        gb = _scale_grads(raster.backward(g_d), weight_d)
        loss = weight_d * loss_d
        if weight_m > 0.0:
            raster_m = rasterize(mirror_scene(scene), w, h, bg, threads=cfg.threads)
            loss_m, g_m = frame_loss(raster_m.frame, mirror(target), cfg)
            back = unmirror_grads(raster_m.backward(g_m))
            gb = _add_grads(gb, back, weight_m)
            loss += weight_m * loss_m
        losses.append(loss)

        raw, dt = condition_backward(model, t, scene, gb)
        for name in PARAM_NAMES:
            grads[name] += raw[name] / batch
        grads['w'] += dt * jac[k] / batch

        if stats is not None and len(scene):
            seen = gb.visible
            stats.add(scene.source[seen], np.linalg.norm(gb.mean[seen], axis=1))

    return float(np.mean(losses)), grads, losses


def _param_norms(model, grads):
    norms = {k: float(np.linalg.norm(v)) for k, v in model.params.items()}
    norms.update({f"d_{k}": float(np.linalg.norm(np.nan_to_num(v, nan=np.inf)))
                  for k, v in grads.items()})
    return norms


def train_step(model, optimizer, video, cfg, rng, step=1, stats=None):
    """One optimizer step on a random batch; updates model in place and returns the loss."""
    n = video.n_frames
    indices = rng.choice(n, size=min(cfg.batch_size, n), replace=False)
    loss, grads, losses = loss_and_grads(model, video, indices, cfg, stats)

    bad = [i for i, l in zip(indices, losses) if not np.isfinite(l)]
    if bad or not all(np.all(np.isfinite(g)) for g in grads.values()):
        frame = int(bad[0]) if bad else int(indices[0])
        raise TrainingDivergedError(step, frame, _param_norms(model, grads))

    optimizer.apply(model, grads, learning_rates(cfg, step))
    return loss


def quantize_model(model):
    model.params = {k: quantize(v) for k, v in model.params.items()}
    model.timeline.w = quantize(model.timeline.w)
    return model


def probe_psnr(model, video, cfg, index=None):
    index = video.n_frames // 2 if index is None else index
    t = frame_times(model.timeline)[index]
    image = render(condition_all(model, t, cull=cfg.cull), model.width, model.height,
                   cfg.background, threads=cfg.threads)
    return psnr(image, video.frames[index], cap=cfg.psnr_cap)


def mean_psnr(model, video, cfg):
    """PSNR averaged over every key frame."""
    return float(np.mean([probe_psnr(model, video, cfg, k) for k in range(video.n_frames)]))


def check_video(model, video):
    if video.n_frames < 2:
        raise ShapeError("need >= 2 frames to fit")
    if video.n_frames != model.n_frames:
        raise ShapeError(f"model has {model.n_frames} frames, video has {video.n_frames}")
    if (video.height, video.width) != (model.height, model.width):
        raise ShapeError(f"model is {model.width}x{model.height}, "
                         f"frames are {video.width}x{video.height}")


def fit(model, video, cfg, rng=None, log_path=None, progress=True):
    """Run the full training schedule.

    Densification runs every densify_interval steps after densify_from and
    before densify_until; opacity resets every opacity_reset_interval steps
    in the same window. Returns (model, history) where history is a list of
    metric rows (also written to log_path as CSV when given).
    """
    check_video(model, video)
    if cfg.steps == 0:
        return model, []
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    model = model.copy()
    optimizer = OptimizerState.zeros(model)
    stats = DensifyStats.zeros(len(model))
    history = []
    start = time.time()

    handle = open(log_path, 'w', newline='') if log_path else None
    writer = csv.DictWriter(handle, fieldnames=METRIC_COLUMNS) if handle else None
    if writer:
        writer.writeheader()

    bar = tqdm(range(1, cfg.steps + 1), desc="Fitting", disable=not progress)
    try:
        for step in bar:
            densifying = step < cfg.densify_until
            loss = train_step(model, optimizer, video, cfg, rng, step,
                              stats if densifying else None)

            if densifying:
                if step > cfg.densify_from and step % cfg.densify_interval == 0:
                    model, sources = densify_and_prune(model, stats, cfg, rng)
                    optimizer = optimizer.realign(sources)
                    stats = DensifyStats.zeros(len(model))
                if step % cfg.opacity_reset_interval == 0:
                    model = reset_opacity(model, cfg.opacity_reset_value)
                    optimizer.reset('opacity_raw')

            if step % cfg.log_every == 0 or step == cfg.steps:
                row = {
                    'step': step,
                    'loss': loss,
                    'psnr_probe': probe_psnr(model, video, cfg),
                    'n_gaussians': len(model),
                    'wall_ms': int((time.time() - start) * 1000),
                    'width': model.width,
                    'height': model.height,
                }
                history.append(row)
                if writer:
                    writer.writerow(row)
                    handle.flush()
                bar.set_postfix({'loss': f"{loss:.6f}", 'psnr': f"{row['psnr_probe']:.2f}",
                                 'n': len(model)})
                logger.debug("step %d loss %.6f psnr %.2f n %d", step, loss,
                             row['psnr_probe'], len(model))
    finally:
        if handle:
            handle.close()

    model.meta.update({'steps': cfg.steps, 'seed': cfg.seed})
    return quantize_model(model), history


def ablation_sweep(video, cfg, axes, log_path=None, progress=False):
    """Fit once per point of the cartesian grid spanned by `axes`.

    `axes` maps config keys to the values to try. Every fit starts from a
    fresh model seeded with cfg.seed. Returns one row per setting with the
    setting, mean key-frame PSNR, final component count and wall seconds
    (also written to log_path as CSV when given).
    """
    if not axes:
        raise ConfigError("ablation sweep needs at least one axis")
    names = list(axes)
    columns = names + SWEEP_METRICS
    rows = []
    handle = open(log_path, 'w', newline='') if log_path else None
    writer = csv.DictWriter(handle, fieldnames=columns) if handle else None
    if writer:
        writer.writeheader()
    try:
        for values in itertools.product(*(axes[name] for name in names)):
            setting = dict(zip(names, values))
            run_cfg = apply_overrides(cfg, setting)
            rng = np.random.default_rng(run_cfg.seed)
            model = init_model(run_cfg, video.n_frames, video.width, video.height, rng,
                               video=video if run_cfg.seed_colors else None)
            start = time.time()
            model, _ = fit(model, video, run_cfg, rng, progress=progress)
            wall_s = round(time.time() - start, 3)
            row = {name: getattr(run_cfg, name) for name in names}
            row.update(psnr_mean=mean_psnr(model, video, run_cfg), n_gaussians=len(model),
                       wall_s=wall_s)
            rows.append(row)
            logger.info("sweep %s -> %.3f dB, %d components", setting, row['psnr_mean'],
                        row['n_gaussians'])
            if writer:
                writer.writerow(row)
                handle.flush()
    finally:
        if handle:
            handle.close()
    return rows


if __name__ == '__main__':
    import sys

    from config import TrainConfig
    from video_io import load_frames

    if len(sys.argv) < 2:
        print(__doc__)
        sys.exit(1)

    video = load_frames(sys.argv[1])
    steps = int(sys.argv[2]) if len(sys.argv) > 2 else 500
    cfg = TrainConfig(steps=steps, n_init=2000, poly_degree=3, densify_from=100,
                      densify_until=steps // 2 + 1)
    rng = np.random.default_rng(cfg.seed)
    model = init_model(cfg, video.n_frames, video.width, video.height, rng, video=video)
    model, history = fit(model, video, cfg, rng)

    print("=" * 50)
    print("FIT SUMMARY")
    print("=" * 50)
    print(f"  → final loss: {history[-1]['loss']:.6f}")
    print(f"  → probe PSNR: {history[-1]['psnr_probe']:.2f} dB")
    print(f"  → components: {len(model)}")
