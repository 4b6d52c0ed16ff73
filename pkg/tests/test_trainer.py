import csv
import time

import numpy as np
import pytest

from config import TrainConfig
from conftest import moving_disk_video, random_video, smooth_model
from errors import ConfigError, ShapeError, TrainingDivergedError
from model import condition_all, frame_times, init_model, interp_times, quantize
from splat2d import render
from trainer import (
    METRIC_COLUMNS, SWEEP_METRICS, OptimizerState, ablation_sweep, expon_lr, fit, frame_loss,
    learning_rates, loss_and_grads, loss_mse, mean_psnr, probe_psnr, train_step,
)
from video_io import VideoSequence, psnr

BLACK = (0.0, 0.0, 0.0)


def small_cfg(**kw):
    base = dict(steps=6, batch_size=2, poly_degree=2, n_init=30, threads=1, background=BLACK,
                log_every=2, seed=5)
    base.update(kw)
    return TrainConfig(**base)


# --- losses ---

def test_mse_of_identical_frames(rng):
    a = rng.uniform(0, 1, (5, 6, 3))
    value, grad = loss_mse(a, a)
    assert value == 0.0
    assert not np.any(grad)


def test_mse_of_constant_offset():
    value, grad = loss_mse(np.full((4, 4, 3), 0.6), np.full((4, 4, 3), 0.5))
    assert value == pytest.approx(0.01, rel=1e-12)
    np.testing.assert_allclose(grad, 2 * 0.1 / 48, rtol=1e-12)


def test_mse_matches_naive_loop(rng):
    a = rng.uniform(0, 1, (6, 5, 3))
    b = rng.uniform(0, 1, (6, 5, 3))
    total = 0.0
    for j in range(6):
        for i in range(5):
            for c in range(3):
                total += (a[j, i, c] - b[j, i, c]) ** 2
    assert loss_mse(a, b)[0] == pytest.approx(total / a.size, abs=1e-12)


def test_mse_shape_mismatch():
    with pytest.raises(ShapeError):
        loss_mse(np.zeros((4, 4, 3)), np.zeros((4, 3, 3)))


def test_frame_loss_with_ssim_term(rng):
    cfg = small_cfg(ssim_weight=0.2)
    a = rng.uniform(0, 1, (12, 12, 3))
    value, grad = frame_loss(a, a, cfg)
    assert value == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(grad, 0.0, atol=1e-12)


# --- schedule ---

def test_expon_lr_endpoints():
    assert expon_lr(0, 1e-2, 1e-4, 100) == pytest.approx(1e-2)
    assert expon_lr(100, 1e-2, 1e-4, 100) == pytest.approx(1e-4)
    assert expon_lr(50, 1e-2, 1e-4, 100) == pytest.approx(1e-3)
    assert expon_lr(500, 1e-2, 1e-4, 100) == pytest.approx(1e-4)


def test_learning_rate_groups():
    cfg = small_cfg(steps=10)
    lrs = learning_rates(cfg, 0)
    assert lrs['m_s'] == lrs['m_t_raw'] == pytest.approx(cfg.means_lr_init)
    assert lrs['color'] == cfg.color_lr
    assert lrs['w'] == cfg.timeline_lr
    assert learning_rates(cfg, 10)['m_s'] == pytest.approx(cfg.means_lr_final)


# --- optimizer ---

def test_invisible_model_does_not_move():
    model = smooth_model(np.random.default_rng(0))
    model.params['opacity_raw'][:] = -1000.0
    before = model.copy()
    video = VideoSequence([np.zeros((8, 8, 3)) for _ in range(3)])
    cfg = small_cfg(batch_size=3)
    optimizer = OptimizerState.zeros(model)
    loss = train_step(model, optimizer, video, cfg, np.random.default_rng(1))
    assert loss == 0.0
    for k in model.params:
        np.testing.assert_array_equal(model.params[k], before.params[k])
    np.testing.assert_array_equal(model.timeline.w, before.timeline.w)


def test_small_step_descends():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        model = smooth_model(rng)
        video = random_video(rng, 3, 8, 8)
        cfg = small_cfg()
        indices = [0, 2] if seed % 2 else [1, 2]
        before, grads, _ = loss_and_grads(model, video, indices, cfg)
        lrs = {k: 1e-6 for k in grads}
        OptimizerState.zeros(model).apply(model, grads, lrs)
        after, _, _ = loss_and_grads(model, video, indices, cfg)
        assert after < before


def test_realign_follows_sources():
    model = smooth_model(np.random.default_rng(0), n=3)
    state = OptimizerState.zeros(model)
    state.m['m_s'] = np.arange(6.0).reshape(3, 2)
    state.m['w'] = np.array([4.0, 5.0])
    moved = state.realign(np.array([2, -1, 0, 0]))
    np.testing.assert_array_equal(moved.m['m_s'], [[4, 5], [0, 0], [0, 1], [0, 1]])
    np.testing.assert_array_equal(moved.m['w'], [4.0, 5.0])
    assert moved.v['poly'].shape == (4, 2, 2)


def test_misaligned_state_is_detected():
    model = smooth_model(np.random.default_rng(0), n=3)
    state = OptimizerState.zeros(smooth_model(np.random.default_rng(0), n=4))
    with pytest.raises(ShapeError):
        state.check_aligned(model)


# --- gradients through the whole chain ---

def full_chain_check(model, video, cfg, indices, eps=1e-5):
    _, grads, _ = loss_and_grads(model, video, indices, cfg)

    def loss_of(m):
        return loss_and_grads(m, video, indices, cfg)[0]

    for name, value in model.params.items():
        for idx in np.ndindex(value.shape):
            plus, minus = model.copy(), model.copy()
            plus.params[name][idx] += eps
            minus.params[name][idx] -= eps
            fd = (loss_of(plus) - loss_of(minus)) / (2 * eps)
            assert grads[name][idx] == pytest.approx(fd, rel=1e-3, abs=1e-6), (name, idx)
    for j in range(len(model.timeline.w)):
        plus, minus = model.copy(), model.copy()
        plus.timeline.w[j] += eps
        minus.timeline.w[j] -= eps
        fd = (loss_of(plus) - loss_of(minus)) / (2 * eps)
        assert grads['w'][j] == pytest.approx(fd, rel=1e-3, abs=1e-6), ('w', j)


def test_full_chain_gradients_match_finite_differences():
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        model = smooth_model(rng)
        model.timeline.w = rng.normal(0, 0.3, 2)
        video = random_video(rng, 3, 8, 8)
        full_chain_check(model, video, small_cfg(background=(0.2, 0.1, 0.3)), [0, 1, 2])


def test_full_chain_gradients_with_ssim_term():
    rng = np.random.default_rng(7)
    model = smooth_model(rng, width=12, height=12)
    model.timeline.w = rng.normal(0, 0.3, 2)
    video = random_video(rng, 3, 12, 12)
    full_chain_check(model, video, small_cfg(ssim_weight=0.3, ssim_channel='rgb'), [1, 2])


def test_mirrored_camera_sees_the_same_error():
    rng = np.random.default_rng(3)
    model = smooth_model(rng)
    video = random_video(rng, 3, 8, 8)
    loss_m, grads_m, _ = loss_and_grads(model, video, [1], small_cfg(mirror_weight=1.0))
    loss_d, grads_d, _ = loss_and_grads(model, video, [1], small_cfg(two_camera=False))
    assert loss_m == pytest.approx(loss_d, rel=1e-9)
    for k in grads_d:
        np.testing.assert_allclose(grads_m[k], grads_d[k], rtol=1e-6, atol=1e-12)


# --- fitting ---

def test_fit_with_zero_steps_returns_the_model():
    video = moving_disk_video(n_frames=3, size=8)
    cfg = small_cfg(steps=0)
    model = init_model(cfg, 3, 8, 8, np.random.default_rng(0))
    fitted, history = fit(model, video, cfg, progress=False)
    assert fitted is model
    assert history == []


def test_fit_rejects_mismatched_video():
    cfg = small_cfg()
    model = init_model(cfg, 4, 8, 8, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        fit(model, moving_disk_video(n_frames=3, size=8), cfg, progress=False)
    with pytest.raises(ShapeError):
        fit(init_model(cfg, 3, 8, 6, np.random.default_rng(0)),
            moving_disk_video(n_frames=3, size=8), cfg, progress=False)


def test_short_fit_logs_metrics(tmp_path):
    video = moving_disk_video(n_frames=4, size=12)
    cfg = small_cfg()
    model = init_model(cfg, 4, 12, 12, np.random.default_rng(0), video=video)
    before = model.copy()
    log = tmp_path / 'metrics.csv'
    fitted, history = fit(model, video, cfg, log_path=str(log), progress=False)

    with open(log) as f:
        rows = list(csv.DictReader(f))
    assert list(rows[0].keys()) == METRIC_COLUMNS
    assert [int(r['step']) for r in rows] == [2, 4, 6]
    assert [r['step'] for r in history] == [2, 4, 6]
    assert all(np.isfinite(float(r['loss'])) for r in rows)
    assert fitted.meta['steps'] == 6 and fitted.meta['seed'] == 5
    for k, v in fitted.params.items():
        np.testing.assert_array_equal(quantize(v), v)
    for k in model.params:
        np.testing.assert_array_equal(model.params[k], before.params[k])


def test_fit_is_deterministic_across_thread_counts():
    video = moving_disk_video(n_frames=3, size=10)
    results = []
    for threads in (1, 3, 1):
        cfg = small_cfg(threads=threads, steps=4)
        model = init_model(cfg, 3, 10, 10, np.random.default_rng(2), video=video)
        results.append(fit(model, video, cfg, progress=False)[0])
    for other in results[1:]:
        for k in results[0].params:
            np.testing.assert_array_equal(other.params[k], results[0].params[k])
        np.testing.assert_array_equal(other.timeline.w, results[0].timeline.w)


def test_densify_and_reset_inside_fit():
    video = moving_disk_video(n_frames=3, size=10)
    cfg = small_cfg(steps=4, densify_from=1, densify_interval=2, grad_threshold=0.0,
                    opacity_reset_interval=3, densify_until=100)
    model = init_model(cfg, 3, 10, 10, np.random.default_rng(4), video=video)
    fitted, _ = fit(model, video, cfg, progress=False)
    assert len(fitted) > len(model)
    assert np.all(np.diff(fitted.order_key) > 0)


def test_non_finite_frame_aborts_with_diagnostics():
    model = smooth_model(np.random.default_rng(0))
    frames = [np.zeros((8, 8, 3)), np.full((8, 8, 3), np.nan), np.zeros((8, 8, 3))]
    cfg = small_cfg(batch_size=3)
    with pytest.raises(TrainingDivergedError) as err:
        train_step(model, OptimizerState.zeros(model), VideoSequence(frames), cfg,
                   np.random.default_rng(0), step=9)
    assert err.value.step == 9
    assert err.value.frame_index == 1
    assert 'm_s' in err.value.param_norms


def test_moving_disk_fit_improves_the_middle_frame():
    video = moving_disk_video(n_frames=4, size=16)
    cfg = small_cfg(steps=60, n_init=150, batch_size=2, log_every=20, means_lr_init=1e-3,
                    means_lr_final=1e-4)
    model = init_model(cfg, 4, 16, 16, np.random.default_rng(0), video=video)
    before = probe_psnr(model, video, cfg)
    fitted, _ = fit(model, video, cfg, progress=False)
    assert probe_psnr(fitted, video, cfg) > before


def test_fit_without_the_mirrored_camera_still_improves():
    video = moving_disk_video(n_frames=4, size=16)
    cfg = small_cfg(steps=60, n_init=150, batch_size=2, log_every=20, means_lr_init=1e-3,
                    means_lr_final=1e-4, two_camera=False)
    model = init_model(cfg, 4, 16, 16, np.random.default_rng(0), video=video)
    before_probe = probe_psnr(model, video, cfg)
    before_mean = mean_psnr(model, video, cfg)
    fitted, history = fit(model, video, cfg, progress=False)
    assert probe_psnr(fitted, video, cfg) > before_probe
    assert mean_psnr(fitted, video, cfg) > before_mean
    assert all(np.isfinite(row['loss']) for row in history)


def test_mean_psnr_averages_every_key_frame():
    video = moving_disk_video(n_frames=3, size=8)
    cfg = small_cfg()
    model = init_model(cfg, 3, 8, 8, np.random.default_rng(0), video=video)
    expected = np.mean([probe_psnr(model, video, cfg, k) for k in range(3)])
    assert mean_psnr(model, video, cfg) == pytest.approx(expected, rel=1e-12)


# --- ablation sweep ---

def test_sweep_covers_the_grid_in_order(tmp_path):
    video = moving_disk_video(n_frames=3, size=8)
    cfg = small_cfg(steps=3, n_init=20)
    log = tmp_path / 'sweep.csv'
    rows = ablation_sweep(video, cfg, {'batch_size': [1, 2], 'poly_degree': ['1', '2']},
                          log_path=str(log))

    assert [(r['batch_size'], r['poly_degree']) for r in rows] == [(1, 1), (1, 2), (2, 1), (2, 2)]
    assert all(np.isfinite(r['psnr_mean']) and r['n_gaussians'] > 0 for r in rows)
    assert all(r['wall_s'] >= 0 for r in rows)
    with open(log) as f:
        written = list(csv.DictReader(f))
    assert list(written[0].keys()) == ['batch_size', 'poly_degree'] + SWEEP_METRICS
    assert [int(r['poly_degree']) for r in written] == [1, 2, 1, 2]


def test_sweep_is_reproducible():
    video = moving_disk_video(n_frames=3, size=8)
    cfg = small_cfg(steps=3, n_init=20)
    first = ablation_sweep(video, cfg, {'n_init': [10, 20]})
    second = ablation_sweep(video, cfg, {'n_init': [10, 20]})
    assert [r['psnr_mean'] for r in first] == [r['psnr_mean'] for r in second]
    assert [r['n_gaussians'] for r in first] == [10, 20]


def test_sweep_rejects_bad_axes():
    video = moving_disk_video(n_frames=3, size=8)
    with pytest.raises(ConfigError):
        ablation_sweep(video, small_cfg(), {})
    with pytest.raises(ConfigError):
        ablation_sweep(video, small_cfg(), {'no_such_key': [1]})
    with pytest.raises(ConfigError):
        ablation_sweep(video, small_cfg(), {'batch_size': [0]})


# --- desk-scale experiments ---

@pytest.mark.slow
def test_desk_scale_moving_disk_reaches_30_db():
    video = moving_disk_video(n_frames=32, size=96, radius=0.3)
    cfg = TrainConfig(steps=5000, batch_size=3, n_init=2000, poly_degree=3, threads=8,
                      background=BLACK, densify_until=2500, log_every=500)
    model = init_model(cfg, 32, 96, 96, np.random.default_rng(cfg.seed), video=video)
    start = time.perf_counter()
    fitted, _ = fit(model, video, cfg, progress=False)
    assert time.perf_counter() - start <= 15 * 60
    times = frame_times(fitted.timeline)
    scores = [psnr(render(condition_all(fitted, t), 96, 96, BLACK, threads=8), frame)
              for t, frame in zip(times, video.frames)]
    assert np.mean(scores) >= 30.0


@pytest.mark.slow
def test_static_video_interpolates_smoothly():
    frame = moving_disk_video(n_frames=2, size=32).frames[0]
    video = VideoSequence([frame] * 8)
    cfg = TrainConfig(steps=1500, batch_size=3, n_init=800, poly_degree=3, threads=8,
                      background=BLACK, densify_until=800)
    model = init_model(cfg, 8, 32, 32, np.random.default_rng(1), video=video)
    fitted, _ = fit(model, video, cfg, progress=False)
    for k in range(7):
        t0, mid, _ = interp_times(fitted.timeline, k, 2)
        key = render(condition_all(fitted, t0), 32, 32, BLACK)
        between = render(condition_all(fitted, mid), 32, 32, BLACK)
        assert np.abs(between - key).mean() <= 0.02


@pytest.mark.slow
def test_doubling_the_initial_count_costs_at_most_one_db():
    video = moving_disk_video(n_frames=16, size=48, radius=0.3)
    cfg = TrainConfig(steps=1500, batch_size=3, poly_degree=3, threads=8, background=BLACK,
                      densify_until=800, log_every=500)
    rows = ablation_sweep(video, cfg, {'n_init': [1000, 2000]})
    small, large = (r['psnr_mean'] for r in rows)
    assert large >= small - 1.0


@pytest.mark.slow
def test_sweep_over_batch_size_and_degree(tmp_path):
    video = moving_disk_video(n_frames=8, size=32, radius=0.3)
    cfg = TrainConfig(steps=600, n_init=600, threads=8, background=BLACK, densify_until=300,
                      log_every=200)
    baseline = mean_psnr(init_model(cfg, 8, 32, 32, np.random.default_rng(cfg.seed), video=video),
                         video, cfg)
    rows = ablation_sweep(video, cfg, {'batch_size': [1, 3], 'poly_degree': [1, 3]},
                          log_path=str(tmp_path / 'sweep.csv'))
    assert len(rows) == 4
    assert all(r['psnr_mean'] > baseline for r in rows)
