import csv
import json
import os

import numpy as np
import pytest

import cli
from config import TrainConfig, config_text
from conftest import moving_disk_video, write_frames
from errors import TrainingDivergedError
from model import init_model
from trainer import METRIC_COLUMNS, SWEEP_METRICS
from video_io import load_checkpoint, read_frame, save_checkpoint

FIT_ARGS = ['--steps', '4', '--n-init', '30', '--batch-size', '2', '--poly-degree', '2',
            '--log-every', '2', '--quiet', '--threads', '1']


@pytest.fixture
def frames_dir(tmp_path):
    return write_frames(tmp_path / 'frames', moving_disk_video(n_frames=3, size=12).frames)


@pytest.fixture
def black_dir(tmp_path):
    return write_frames(tmp_path / 'black', [np.zeros((12, 12, 3))] * 3)


@pytest.fixture
def empty_checkpoint(tmp_path, rng):
    """A 12x12, 3-frame model with no components: renders the background everywhere."""
    model = init_model(TrainConfig(n_init=5, poly_degree=2), 3, 12, 12, rng)
    model = model.take(np.zeros(len(model), dtype=bool))
    path = str(tmp_path / 'empty.vgsf')
    save_checkpoint(model, path)
    return path


def test_inspect_defaults(capsys):
    assert cli.main(['inspect', '--defaults']) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert out == config_text() + "\n"
    assert "[train]" in out and "steps = 30000" in out


def test_missing_input_is_exit_2(tmp_path, capsys):
    code = cli.main(['fit', str(tmp_path / 'nowhere'), str(tmp_path / 'm.vgsf'), '--quiet'])
    assert code == cli.EXIT_INPUT
    assert "input not found" in capsys.readouterr().err


def test_corrupt_checkpoint_is_exit_2(tmp_path):
    bad = tmp_path / 'bad.vgsf'
    bad.write_bytes(b'garbage')
    assert cli.main(['inspect', str(bad)]) == cli.EXIT_INPUT


def test_bad_config_is_exit_2(tmp_path, frames_dir):
    cfg = tmp_path / 'cfg.ini'
    cfg.write_text("[train]\nsteps = lots\n")
    assert cli.main(['fit', frames_dir, str(tmp_path / 'm.vgsf'), '--config', str(cfg)]) == cli.EXIT_INPUT


def test_fit_with_zero_steps(tmp_path, frames_dir):
    out = str(tmp_path / 'init.vgsf')
    assert cli.main(['fit', frames_dir, out, '--steps', '0', '--n-init', '20', '--quiet']) == 0
    model = load_checkpoint(out)
    assert len(model) == 20
    assert (model.width, model.height, model.n_frames) == (12, 12, 3)
    assert model.meta['steps'] == 0
    assert not os.path.exists(str(tmp_path / 'init.csv'))


def test_fit_writes_checkpoint_and_metrics(tmp_path, frames_dir, capsys):
    out = str(tmp_path / 'fit.vgsf')
    assert cli.main(['fit', frames_dir, out] + FIT_ARGS) == 0
    assert "probe PSNR" in capsys.readouterr().out
    model = load_checkpoint(out)
    assert model.meta['steps'] == 4
    assert model.meta['config']['poly_degree'] == '2'
    with open(tmp_path / 'fit.csv') as f:
        rows = list(csv.DictReader(f))
    assert list(rows[0]) == METRIC_COLUMNS
    assert [int(r['step']) for r in rows] == [2, 4]


def test_fit_is_reproducible(tmp_path, frames_dir):
    paths = [str(tmp_path / f'run{i}.vgsf') for i in range(3)]
    assert cli.main(['fit', frames_dir, paths[0]] + FIT_ARGS) == 0
    assert cli.main(['fit', frames_dir, paths[1]] + FIT_ARGS) == 0
    with open(paths[0], 'rb') as a, open(paths[1], 'rb') as b:
        assert a.read() == b.read()
    # thread count only shows up in the config echo
    assert cli.main(['fit', frames_dir, paths[2]] + FIT_ARGS[:-1] + ['3']) == 0
    one, three = load_checkpoint(paths[0]), load_checkpoint(paths[2])
    for k in one.params:
        np.testing.assert_array_equal(one.params[k], three.params[k])


def test_training_divergence_is_exit_3(tmp_path, frames_dir, monkeypatch):
    def diverge(*args, **kwargs):
        raise TrainingDivergedError(7, 1, {'m_s': float('nan')})
    monkeypatch.setattr(cli, 'fit', diverge)
    assert cli.main(['fit', frames_dir, str(tmp_path / 'm.vgsf')] + FIT_ARGS) == cli.EXIT_NUMERICAL


def test_render_time_zero_matches_frame_zero(tmp_path, frames_dir):
    ckpt = str(tmp_path / 'fit.vgsf')
    cli.main(['fit', frames_dir, ckpt] + FIT_ARGS)
    out = tmp_path / 'renders'
    assert cli.main(['render', ckpt, str(out), '--frame', '0', '--time', '0.0']) == 0
    np.testing.assert_array_equal(read_frame(str(out / 'frame_00000.png')),
                                  read_frame(str(out / 'time_0.000000.png')))


def test_render_size_override(tmp_path, empty_checkpoint):
    out = tmp_path / 'big'
    assert cli.main(['render', empty_checkpoint, str(out), '--all', '--width', '20',
                     '--height', '10', '--background', '1,1,1']) == 0
    frames = sorted(os.listdir(out))
    assert frames == ['frame_00000.png', 'frame_00001.png', 'frame_00002.png']
    image = read_frame(str(out / frames[1]))
    assert image.shape == (10, 20, 3)
    assert np.all(image == 1.0)


@pytest.mark.parametrize("flags", [['--time', '1.5'], ['--frame', '3'], []])
def test_render_rejects_bad_requests(tmp_path, empty_checkpoint, flags):
    assert cli.main(['render', empty_checkpoint, str(tmp_path / 'r')] + flags) == cli.EXIT_INPUT


def test_diff_of_exact_render_is_black(tmp_path, empty_checkpoint, black_dir):
    out = tmp_path / 'diff'
    assert cli.main(['render', empty_checkpoint, str(out), '--frame', '1', '--diff', black_dir]) == 0
    assert np.all(read_frame(str(out / 'frame_00001_diff.png')) == 0.0)


def test_interp_frame_count(tmp_path, empty_checkpoint):
    out = tmp_path / 'interp'
    assert cli.main(['interp', empty_checkpoint, str(out), '--rate', '4']) == 0
    # 3 key frames, 2 gaps of 4, shared ends counted once
    assert len(os.listdir(out)) == 2 * 4 + 1


def test_interp_rate_zero_is_exit_2(tmp_path, empty_checkpoint):
    assert cli.main(['interp', empty_checkpoint, str(tmp_path / 'i'), '--rate', '0']) == cli.EXIT_INPUT


def test_eval_of_exact_model(empty_checkpoint, black_dir, capsys):
    assert cli.main(['eval', empty_checkpoint, black_dir]) == 0
    lines = capsys.readouterr().out.splitlines()
    mean = [line for line in lines if line.strip().startswith('mean')][0]
    assert mean.split()[1:] == ['100.000', '1.0000']


def test_eval_frame_count_mismatch(tmp_path, empty_checkpoint):
    two = write_frames(tmp_path / 'two', [np.zeros((12, 12, 3))] * 2)
    assert cli.main(['eval', empty_checkpoint, two]) == cli.EXIT_INPUT


def test_empty_edit_script_keeps_bytes(tmp_path, frames_dir):
    ckpt = str(tmp_path / 'fit.vgsf')
    cli.main(['fit', frames_dir, ckpt] + FIT_ARGS)
    script = tmp_path / 'noop.json'
    script.write_text(json.dumps({'ops': []}))
    out = str(tmp_path / 'edited.vgsf')
    assert cli.main(['edit', ckpt, str(script), out]) == 0
    with open(ckpt, 'rb') as a, open(out, 'rb') as b:
        assert a.read() == b.read()


def test_bad_edit_script_is_exit_2(tmp_path, empty_checkpoint, capsys):
    script = tmp_path / 'bad.json'
    script.write_text(json.dumps([{'op': 'transform', 'matrix': [[1, 0, 0], [0, 1, 0]]}]))
    assert cli.main(['edit', empty_checkpoint, str(script), str(tmp_path / 'o.vgsf')]) == cli.EXIT_INPUT
    assert "op 0" in capsys.readouterr().err


def test_inspect_checkpoint(tmp_path, frames_dir, capsys):
    ckpt = str(tmp_path / 'init.vgsf')
    cli.main(['fit', frames_dir, ckpt, '--steps', '0', '--n-init', '25', '--quiet'])
    capsys.readouterr()
    assert cli.main(['inspect', ckpt]) == 0
    out = capsys.readouterr().out
    assert "n_gaussians: 25" in out
    assert "frames: 3" in out
    assert "timeline: [0.0000, 0.5000, 1.0000]" in out


def test_negative_width_is_exit_2(tmp_path, empty_checkpoint, capsys):
    code = cli.main(['render', empty_checkpoint, str(tmp_path / 'r'), '--all', '--width', '-4'])
    assert code == cli.EXIT_INPUT
    assert "width must be >= 0" in capsys.readouterr().err


def test_percent_sign_in_config_is_exit_2(tmp_path, frames_dir, empty_checkpoint, capsys):
    cfg = tmp_path / 'cfg.ini'
    cfg.write_text("[train]\nsteps = 5%\n")
    assert cli.main(['fit', frames_dir, str(tmp_path / 'm.vgsf'), '--config', str(cfg)]) == cli.EXIT_INPUT
    assert "bad value for steps" in capsys.readouterr().err
    cfg.write_text("[render]\nbackground = 100%,0,0\n")
    assert cli.main(['render', empty_checkpoint, str(tmp_path / 'r'), '--all',
                     '--config', str(cfg)]) == cli.EXIT_INPUT


def test_render_settings_from_config_file(tmp_path, empty_checkpoint):
    cfg = tmp_path / 'cfg.ini'
    cfg.write_text("[render]\nwidth = 6\nheight = 4\nimage_format = ppm\nbackground = 0,1,0\n")
    out = tmp_path / 'small'
    assert cli.main(['render', empty_checkpoint, str(out), '--frame', '2', '--config', str(cfg)]) == 0
    assert os.listdir(out) == ['frame_00002.ppm']
    image = read_frame(str(out / 'frame_00002.ppm'))
    assert image.shape == (4, 6, 3)
    np.testing.assert_array_equal(image[..., 1], 1.0)
    # flags still win over the file
    assert cli.main(['render', empty_checkpoint, str(out), '--frame', '2', '--config', str(cfg),
                     '--width', '9', '--format', 'png']) == 0
    assert read_frame(str(out / 'frame_00002.png')).shape == (4, 9, 3)


def test_interp_rate_from_config_file(tmp_path, empty_checkpoint):
    cfg = tmp_path / 'cfg.ini'
    cfg.write_text("[render]\ninterp_rate = 2\n")
    out = tmp_path / 'interp'
    assert cli.main(['interp', empty_checkpoint, str(out), '--config', str(cfg)]) == 0
    assert len(os.listdir(out)) == 2 * 2 + 1


def test_unknown_image_format_is_exit_2(tmp_path, empty_checkpoint):
    assert cli.main(['render', empty_checkpoint, str(tmp_path / 'r'), '--all',
                     '--format', 'gif']) == cli.EXIT_INPUT


def test_sweep_writes_one_row_per_setting(tmp_path, frames_dir, capsys):
    out = tmp_path / 'sweep.csv'
    assert cli.main(['sweep', frames_dir, str(out), '--batch-size', '1,2', '--n-init', '20',
                     '--steps', '3', '--threads', '1', '--quiet']) == 0
    assert "2 settings" in capsys.readouterr().out
    with open(out) as f:
        rows = list(csv.DictReader(f))
    assert list(rows[0]) == ['batch_size', 'n_init'] + SWEEP_METRICS
    assert [(r['batch_size'], r['n_init']) for r in rows] == [('1', '20'), ('2', '20')]


def test_sweep_without_axes_is_exit_2(tmp_path, frames_dir):
    assert cli.main(['sweep', frames_dir, str(tmp_path / 's.csv'), '--quiet']) == cli.EXIT_INPUT
