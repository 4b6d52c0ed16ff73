#!/usr/bin/env python3
"""
Command-line entry point.

Usage:
  python3 cli.py fit <frames_dir> <out.vgsf> [--config cfg.ini] [--steps N] ...
  python3 cli.py render <model.vgsf> <out_dir> (--frame K ... | --time T ... | --all) [--diff <frames_dir>]
  python3 cli.py interp <model.vgsf> <out_dir> [--rate R]
  python3 cli.py edit <model.vgsf> <script.json> <out.vgsf>
  python3 cli.py eval <model.vgsf> <frames_dir>
  python3 cli.py inspect [<model.vgsf>] [--defaults]
  python3 cli.py sweep <frames_dir> <out.csv> [--batch-size 1,3] [--poly-degree 3,7] [--n-init 1000,2000]

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
"""
import os
import sys
import logging
import argparse

import numpy as np
from matplotlib import colormaps

from config import DEFAULT_THREADS, LOG_LEVEL, config_echo, config_text, load_config
from errors import TrainingDivergedError, VegasError
from editor import apply_script, load_script, scene_at
from model import activated, frame_times, init_model, interp_times
from splat2d import render
from trainer import ablation_sweep, fit
from video_io import load_checkpoint, load_frames, psnr, save_checkpoint, save_image, ssim, SSIM_WINDOW

logger = logging.getLogger('vegas')

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3

DIFF_COLORMAP = 'afmhot'

# CLI flag dest -> config key
FIT_FLAGS = {
    'steps': 'steps', 'batch_size': 'batch_size', 'poly_degree': 'poly_degree',
    'n_init': 'n_init', 'seed': 'seed', 'mirror_weight': 'mirror_weight',
    'ssim_weight': 'ssim_weight', 'log_every': 'log_every', 'two_camera': 'two_camera',
}
RENDER_FLAGS = {'width': 'width', 'height': 'height', 'image_format': 'image_format'}
# sweep axis flag dest -> config key
SWEEP_AXES = {'batch_size': 'batch_size', 'poly_degree': 'poly_degree', 'n_init': 'n_init'}


class InputError(VegasError):
    """Missing or invalid command input."""


def _banner(title):
    print("=" * 50)
    print(title)
    print("=" * 50)


def _config(args, extra=None):
    overrides = {'threads': getattr(args, 'threads', None),
                 'background': getattr(args, 'background', None)}
    overrides.update(extra or {})
    return load_config(getattr(args, 'config', None), overrides)


def _require(path, kind='input'):
    if not os.path.exists(path):
        raise InputError(f"{kind} not found: {path}")


def _render_size(cfg, model):
    return (cfg.width or model.width, cfg.height or model.height)


# === Commands ===

def cmd_fit(args):
    _require(args.frames_dir)
    cfg = _config(args, {dest: getattr(args, dest) for dest in FIT_FLAGS})
    video = load_frames(args.frames_dir)
    if video.n_frames < 2:
        raise InputError(f"need >= 2 frames to fit, found {video.n_frames}")

    rng = np.random.default_rng(cfg.seed)
    model = init_model(cfg, video.n_frames, video.width, video.height, rng,
                       video=video if cfg.seed_colors else None)
    model.meta = {'steps': 0, 'seed': cfg.seed, 'config': config_echo(cfg)}
    log_path = args.log or os.path.splitext(args.out)[0] + '.csv'

    _banner("FIT")
    print(f"  → {video.n_frames} frames at {video.width}x{video.height}")
    print(f"  → {len(model)} initial components, degree {cfg.poly_degree}, {cfg.steps} steps")
    model, history = fit(model, video, cfg, rng, log_path=log_path if cfg.steps else None,
                         progress=not args.quiet)
    save_checkpoint(model, args.out)

    if history:
        print(f"  → final loss: {history[-1]['loss']:.6f}")
        print(f"  → probe PSNR: {history[-1]['psnr_probe']:.2f} dB")
        print(f"  → metrics: {log_path}")
    print(f"  → {len(model)} components written to {args.out}")
    return EXIT_OK


def _diff_image(rendered, target):
    """|render - target| averaged over channels, as a heat image."""
    diff = np.mean(np.abs(rendered - target), axis=2)
    return colormaps[DIFF_COLORMAP](np.clip(diff, 0.0, 1.0))[..., :3]


def _render_config(args, extra=None):
    overrides = {key: getattr(args, dest) for dest, key in RENDER_FLAGS.items()}
    overrides.update(extra or {})
    return _config(args, overrides)


def cmd_render(args):
    _require(args.checkpoint)
    cfg = _render_config(args)
    model = load_checkpoint(args.checkpoint)
    times = frame_times(model.timeline)

    jobs = []
    if args.all:
        jobs += [(f"frame_{k:05d}", times[k], k) for k in range(model.n_frames)]
    for k in args.frame or []:
        if not 0 <= k < model.n_frames:
            raise InputError(f"frame {k} out of range for {model.n_frames} frames")
        jobs.append((f"frame_{k:05d}", times[k], k))
    for t in args.time or []:
        if not 0.0 <= t <= 1.0:
            raise InputError(f"time {t} outside [0,1]")
        jobs.append((f"time_{t:.6f}", t, None))
    if not jobs:
        raise InputError("nothing to render: pass --frame, --time or --all")

    targets = None
    if args.diff:
        _require(args.diff)
        targets = load_frames(args.diff)

    w, h = _render_size(cfg, model)
    os.makedirs(args.out_dir, exist_ok=True)
    _banner("RENDER")
    for name, t, k in jobs:
        image = render(scene_at(model, t, size=(w, h)), w, h, cfg.background, threads=cfg.threads)
        path = save_image(os.path.join(args.out_dir, name), image, cfg.image_format)
        line = f"  → {os.path.basename(path)}  t={t:.6f}"
        if targets is not None:
            if k is None or k >= targets.n_frames:
                logger.warning("no target frame for %s; diff skipped", name)
            elif targets.frames[k].shape != image.shape:
                raise InputError(f"target frame {k} is not {w}x{h}")
            else:
                save_image(os.path.join(args.out_dir, f"{name}_diff"),
                           _diff_image(image, targets.frames[k]), cfg.image_format)
                line += f"  psnr={psnr(image, targets.frames[k], cap=cfg.psnr_cap):.2f}"
        print(line)
    return EXIT_OK


def cmd_interp(args):
    _require(args.checkpoint)
    cfg = _render_config(args, {'interp_rate': args.rate})
    model = load_checkpoint(args.checkpoint)
    w, h = _render_size(cfg, model)

    times = []
    for k in range(model.n_frames - 1):
        gap = interp_times(model.timeline, k, cfg.interp_rate)
        times.extend(gap if k == 0 else gap[1:])

    os.makedirs(args.out_dir, exist_ok=True)
    _banner("INTERPOLATE")
    for i, t in enumerate(times):
        image = render(scene_at(model, t, size=(w, h)), w, h, cfg.background, threads=cfg.threads)
        save_image(os.path.join(args.out_dir, f"interp_{i:05d}"), image, cfg.image_format)
    print(f"  → {len(times)} frames ({model.n_frames} key frames, rate {cfg.interp_rate}) in {args.out_dir}")
    return EXIT_OK


def cmd_edit(args):
    _require(args.checkpoint)
    _require(args.script)
    model = load_checkpoint(args.checkpoint)
    edited = apply_script(model, load_script(args.script))
    save_checkpoint(edited, args.out)
    _banner("EDIT")
    print(f"  → components: {len(model)} -> {len(edited)}")
    print(f"  → overridden frames: {sorted(edited.overlays) or 'none'}")
    return EXIT_OK


def cmd_eval(args):
    _require(args.checkpoint)
    _require(args.frames_dir)
    cfg = _config(args)
    model = load_checkpoint(args.checkpoint)
    video = load_frames(args.frames_dir)
    if video.n_frames != model.n_frames:
        raise InputError(f"model has {model.n_frames} frames, {args.frames_dir} has {video.n_frames}")
    if (video.width, video.height) != (model.width, model.height):
        raise InputError(f"model is {model.width}x{model.height}, "
                         f"frames are {video.width}x{video.height}")
    times = frame_times(model.timeline)
    with_ssim = min(model.width, model.height) >= SSIM_WINDOW

    _banner("EVALUATION")
    print(f"resolution: {model.width}x{model.height}")
    print(f"{'frame':>6} {'PSNR':>9} {'SSIM':>8}")
    psnrs, ssims = [], []
    for k in range(model.n_frames):
        image = render(scene_at(model, times[k]), model.width, model.height,
                       cfg.background, threads=cfg.threads)
        p = psnr(image, video.frames[k], cap=cfg.psnr_cap)
        psnrs.append(p)
        if with_ssim:
            s = ssim(image, video.frames[k], channel=cfg.ssim_channel)
            ssims.append(s)
            print(f"{k:>6} {p:>9.3f} {s:>8.4f}")
        else:
            print(f"{k:>6} {p:>9.3f} {'n/a':>8}")
    print("-" * 25)
    avg_ssim = f"{np.mean(ssims):>8.4f}" if ssims else f"{'n/a':>8}"
    print(f"{'mean':>6} {np.mean(psnrs):>9.3f} {avg_ssim}")
    return EXIT_OK


def _comma_list(text):
    return [v.strip() for v in text.split(',') if v.strip()]


def cmd_sweep(args):
    _require(args.frames_dir)
    cfg = _config(args, {'steps': args.steps, 'seed': args.seed})
    axes = {key: getattr(args, dest) for dest, key in SWEEP_AXES.items() if getattr(args, dest)}
    if not axes:
        raise InputError("sweep needs at least one of --batch-size, --poly-degree, --n-init")
    video = load_frames(args.frames_dir)
    if video.n_frames < 2:
        raise InputError(f"need >= 2 frames to fit, found {video.n_frames}")

    _banner("SWEEP")
    rows = ablation_sweep(video, cfg, axes, log_path=args.out, progress=not args.quiet)
    for row in rows:
        setting = "  ".join(f"{key}={row[key]}" for key in axes)
        print(f"  → {setting}  psnr={row['psnr_mean']:.2f}  n={row['n_gaussians']}"
              f"  {row['wall_s']:.1f}s")
    print(f"  → {len(rows)} settings written to {args.out}")
    return EXIT_OK


def _histogram(name, values, bins=8):
    if len(values) == 0:
        print(f"  {name}: (empty)")
        return
    counts, edges = np.histogram(values, bins=bins)
    print(f"  {name}:")
    top = max(counts.max(), 1)
    for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
        bar = '#' * int(round(30 * c / top))
        print(f"    [{lo:9.4g}, {hi:9.4g}) {c:>7} {bar}")


def cmd_inspect(args):
    if args.defaults:
        print(config_text())
        return EXIT_OK
    if not args.checkpoint:
        raise InputError("inspect needs a checkpoint (or --defaults)")
    _require(args.checkpoint)
    model = load_checkpoint(args.checkpoint)
    a = activated(model)

    _banner("CHECKPOINT")
    print(f"n_gaussians: {len(model)}")
    print(f"frames: {model.n_frames}")
    print(f"poly degree: {model.poly_degree}")
    print(f"resolution: {model.width}x{model.height}")
    print(f"overridden frames: {sorted(model.overlays) or 'none'}")
    for key in ('steps', 'seed'):
        if key in model.meta:
            print(f"{key}: {model.meta[key]}")
    times = frame_times(model.timeline)
    shown = ", ".join(f"{t:.4f}" for t in times[:12])
    print(f"timeline: [{shown}{', ...' if len(times) > 12 else ''}]")

    print("\nParameters:")
    _histogram("m_t", a['m_t'])
    _histogram("sigma_t", a['sigma_t'])
    _histogram("opacity", a['opacity'])
    _histogram("max scale", a['s'].max(axis=1) if len(model) else a['s'])
    return EXIT_OK


# === Parser ===

def _render_flags(p):
    p.add_argument('--width', type=int, help="[render] width")
    p.add_argument('--height', type=int, help="[render] height")
    p.add_argument('--format', dest='image_format', help="[render] image_format (png or ppm)")


def build_parser():
    parser = argparse.ArgumentParser(prog='vegas', description="Folded-Gaussian video splatting")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help="config file (key = value with sections)")
    common.add_argument('--threads', type=int, help=f"[train] threads (default {DEFAULT_THREADS})")
    common.add_argument('--background', help="[render] background as r,g,b in [0,1]")
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('fit', parents=[common], help="fit a model to a frame directory")
    p.add_argument('frames_dir')
    p.add_argument('out')
    p.add_argument('--log', help="metrics CSV (default: next to the checkpoint)")
    p.add_argument('--steps', type=int, help="[train] steps")
    p.add_argument('--batch-size', dest='batch_size', type=int, help="[train] batch_size")
    p.add_argument('--poly-degree', dest='poly_degree', type=int, help="[train] poly_degree")
    p.add_argument('--n-init', dest='n_init', type=int, help="[train] n_init")
    p.add_argument('--seed', type=int, help="[train] seed")
    p.add_argument('--mirror-weight', dest='mirror_weight', type=float, help="[train] mirror_weight")
    p.add_argument('--ssim-weight', dest='ssim_weight', type=float, help="[train] ssim_weight")
    p.add_argument('--log-every', dest='log_every', type=int, help="[train] log_every")
    p.add_argument('--no-mirror', dest='two_camera', action='store_const', const=False,
                   help="[train] two_camera = false")
    p.add_argument('--quiet', action='store_true', help="no progress bar")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser('render', parents=[common], help="render key frames or times to images")
    p.add_argument('checkpoint')
    p.add_argument('out_dir')
    p.add_argument('--frame', type=int, action='append', help="key frame index (repeatable)")
    p.add_argument('--time', type=float, action='append', help="time in [0,1] (repeatable)")
    p.add_argument('--all', action='store_true', help="every key frame")
    p.add_argument('--diff', metavar='FRAMES_DIR', help="also write |render - target| heat images")
    _render_flags(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser('interp', parents=[common], help="render r frames per gap between key frames")
    p.add_argument('checkpoint')
    p.add_argument('out_dir')
    p.add_argument('--rate', type=int, help="[render] interp_rate")
    _render_flags(p)
    p.set_defaults(func=cmd_interp)

    p = sub.add_parser('edit', help="apply an edit script")
    p.add_argument('checkpoint')
    p.add_argument('script')
    p.add_argument('out')
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser('eval', parents=[common], help="per-frame PSNR/SSIM against frames")
    p.add_argument('checkpoint')
    p.add_argument('frames_dir')
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser('inspect', help="summarize a checkpoint")
    p.add_argument('checkpoint', nargs='?')
    p.add_argument('--defaults', action='store_true', help="print the default config file")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser('sweep', parents=[common], help="fit once per point of a settings grid")
    p.add_argument('frames_dir')
    p.add_argument('out', help="results CSV")
    p.add_argument('--batch-size', dest='batch_size', type=_comma_list, help="[train] batch_size values")
    p.add_argument('--poly-degree', dest='poly_degree', type=_comma_list,
                   help="[train] poly_degree values")
    p.add_argument('--n-init', dest='n_init', type=_comma_list, help="[train] n_init values")
    p.add_argument('--steps', type=int, help="[train] steps")
    p.add_argument('--seed', type=int, help="[train] seed")
    p.add_argument('--quiet', action='store_true', help="no progress bar")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    logging.basicConfig(level=getattr(logging, LOG_LEVEL.upper(), logging.INFO),
                        format='%(asctime)s %(name)s %(levelname)s %(message)s')
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TrainingDivergedError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (VegasError, OSError, IndexError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == '__main__':
    sys.exit(main())
