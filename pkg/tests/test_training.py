import json

import numpy as np
import pytest

from nzcodec.errors import DatasetError, InputError
from nzcodec.imageio import write_image
from nzcodec.models import build_model
from nzcodec.synthetic import synthetic_images
from nzcodec.training import (
    PlateauState,
    TrainingConfig,
    TrainingDivergedError,
    extract_random_patches,
    load_training_config,
    lr_plateau_step,
    resume_from,
    train,
)


def _cfg(**kw):
    base = dict(lmbda=0.01, batch_size=2, patch_size=64, max_steps=4, eval_interval=2, seed=3)
    base.update(kw)
    return TrainingConfig(**base)


@pytest.fixture(scope="module")
def data():
    return synthetic_images(6, 64, 64, seed=1), synthetic_images(2, 64, 64, seed=2)


def _model():
    return build_model("factorized", 1, "mse", N=8, M=12, seed=0)


def test_config_validation():
    with pytest.raises(InputError):
        _cfg(lmbda=0)
    with pytest.raises(InputError):
        _cfg(patch_size=72)
    with pytest.raises(InputError):
        _cfg(lr_factor=0.1)
    assert TrainingConfig.for_quality("ms-ssim", 2, patch_size=64).lmbda == 4.58


def test_config_file(tmp_path):
    path = tmp_path / "train.cfg"
    path.write_text("# desk run\nlmbda = 0.02\nmax_steps = 10\nmetric = mse\n")
    cfg = load_training_config(path, defaults={"patch_size": 64}, max_steps=5, seed=None)
    assert (cfg.lmbda, cfg.max_steps, cfg.patch_size, cfg.seed) == (0.02, 5, 64, 0)
    path.write_text("bogus = 1\n")
    with pytest.raises(InputError):
        load_training_config(path)
    path.write_text("max_steps = many\n")
    with pytest.raises(InputError):
        load_training_config(path)


def test_plateau_halves_on_twentieth_bad_evaluation():
    state = PlateauState(lr=1e-4)
    history = [10.0]
    lr_plateau_step(history, state)
    lrs = []
    for _ in range(40):
        history.append(10.0)
        lrs.append(lr_plateau_step(history, state))
    assert lrs[18] == 1e-4 and lrs[19] == 5e-5
    assert lrs[38] == 5e-5 and lrs[39] == 2.5e-5
    history.append(1.0)
    lr_plateau_step(history, state)
    assert state.bad_evals == 0 and state.best == 1.0


def test_plateau_threshold_is_relative():
    state = PlateauState(lr=1.0, patience=1)
    lr_plateau_step([100.0], state)
    assert lr_plateau_step([100.0, 99.995], state) == 0.5


def test_extract_patches(tmp_path):
    big = tmp_path / "big.png"
    small = tmp_path / "small.png"
    write_image(big, synthetic_images(1, 80, 96, seed=0)[0])
    write_image(small, synthetic_images(1, 40, 40, seed=0)[0])
    with pytest.warns(UserWarning, match="small.png"):
        patches = extract_random_patches([big, small], 64, 5, seed=1)
    assert patches.shape == (5, 3, 64, 64)
    with pytest.warns(UserWarning):
        again = extract_random_patches([big, small], 64, 5, seed=1)
    np.testing.assert_array_equal(patches, again)
    with pytest.warns(UserWarning), pytest.raises(DatasetError):
        extract_random_patches([small], 64, 1)


def test_zero_steps_returns_initialization(data):
    tr, ev = data
    model = _model()
    before = model.state_dict()
    result = train(model, _cfg(max_steps=0), tr, ev)
    assert result.checkpoint.step == 0 and len(result.history) == 1
    for k, v in before.items():
        np.testing.assert_array_equal(result.checkpoint.params[k], v)


def test_log_and_checkpoints(data, tmp_path):
    tr, ev = data
    result = train(_model(), _cfg(), tr, ev, out_dir=tmp_path, log_path=tmp_path / "log.jsonl")
    records = [json.loads(line) for line in (tmp_path / "log.jsonl").read_text().splitlines()]
    assert [r["step"] for r in records] == [0, 2, 4]
    assert set(records[0]) == {"step", "total", "distortion", "rate_bpp", "aux", "lr"}
    assert (tmp_path / "last.nzck").exists() and (tmp_path / "step0000000.nzck").exists()
    assert result.saved[-1].name == "last.nzck"


def test_resume_is_bit_identical(data):
    tr, ev = data
    full = train(_model(), _cfg(max_steps=4), tr, ev)
    half = train(_model(), _cfg(max_steps=2), tr, ev)
    model, cfg = resume_from(half.checkpoint)
    cfg.max_steps = 4
    resumed = train(model, cfg, tr, ev, resume=half.checkpoint)
    for k, v in full.checkpoint.params.items():
        np.testing.assert_array_equal(resumed.checkpoint.params[k], v)


def test_nan_loss_names_first_bad_operation(data):
    tr, ev = data
    model = _model()
    model.g_a[0].weight.data[0, 0, 0, 0] = np.inf
    with np.errstate(all="ignore"), pytest.raises(TrainingDivergedError, match="conv2d"):
        train(model, _cfg(max_steps=1), tr, ev)


def test_metric_mismatch(data):
    tr, ev = data
    with pytest.raises(InputError):
        train(_model(), _cfg(metric="ms-ssim"), tr, ev)
