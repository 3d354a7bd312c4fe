"""Rate-distortion training: patch sampling, LR plateau schedule, main loop."""
from __future__ import annotations

import configparser
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint
from .errors import DatasetError, InputError, NonFiniteError, NumericError
from .imageio import read_image
from .losses import RdLossBreakdown, lambda_for_quality, rd_loss
from .ndtensor import Adam, Tensor, clip_grad_norm, detect_anomaly, no_grad

log = logging.getLogger(__name__)


class TrainingDivergedError(NumericError):
    pass


@dataclass
class TrainingConfig:
    lmbda: float = 0.0130
    metric: str = "mse"
    batch_size: int = 16
    patch_size: int = 256
    initial_lr: float = 1e-4
    patience: int = 20
    lr_factor: float = 0.5
    max_steps: int = 1000
    seed: int = 0
    eval_interval: int = 500
    eval_batch_size: int = 16
    aux_lr: float = 1e-3
    clip_norm: float = 1.0

    def __post_init__(self):
        if not self.lmbda > 0:
            raise InputError(f"lambda must be positive, got {self.lmbda}")
        if self.metric not in ("mse", "ms-ssim"):
            raise InputError(f"metric must be mse or ms-ssim, got {self.metric!r}")
        if self.patch_size % 16 or self.patch_size < 64:
            raise InputError(f"patch_size must be a multiple of 16 and >= 64, got {self.patch_size}")
        if self.lr_factor != 0.5:
            raise InputError("the learning rate is only ever halved (lr_factor = 0.5)")
        if self.max_steps < 0 or self.batch_size < 1 or self.eval_interval < 1:
            raise InputError("max_steps >= 0, batch_size >= 1 and eval_interval >= 1 are required")

    @classmethod
    def for_quality(cls, metric: str, quality: int, **kwargs) -> "TrainingConfig":
        return cls(lmbda=lambda_for_quality(metric, quality), metric=metric, **kwargs)


def load_training_config(path, defaults=None, **overrides) -> TrainingConfig:
    """Read a flat ``key = value`` file (``#`` comments) into a :class:`TrainingConfig`.

    Precedence, lowest first: ``defaults``, the file, then keyword
    ``overrides`` that are not None.
    """
    parser = configparser.ConfigParser(interpolation=None)
    try:
        text = Path(path).read_text(encoding="utf-8") if path is not None else ""
        parser.read_string("[training]\n" + text)
    except (OSError, configparser.Error) as exc:
        raise InputError(f"cannot read training config {path}: {exc}") from None
    types = {f.name: f.type for f in fields(TrainingConfig)}
    values = dict(defaults or {})
    for key, raw in parser["training"].items():
        if key not in types:
            raise InputError(f"{path}: unknown training key {key!r}; known: {', '.join(types)}")
        kind = {"int": int, "float": float}.get(types[key], str)
        try:
            values[key] = kind(raw)
        except ValueError:
            raise InputError(f"{path}: {key} = {raw!r} is not a valid {kind.__name__}") from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainingConfig(**values)


# ---------------------------------------------------------------------------
# learning-rate schedule


@dataclass
class PlateauState:
    lr: float
    patience: int = 20
    factor: float = 0.5
    threshold: float = 1e-4
    best: float = math.inf
    bad_evals: int = 0


def lr_plateau_step(history, state: PlateauState) -> float:
    """Feed the newest evaluation loss in ``history`` to ``state``; return the lr.

    An evaluation improves when it beats the best so far by more than a
    relative ``threshold``. After ``patience`` consecutive non-improving
    evaluations the lr is multiplied by ``factor`` and the count restarts.
    """
    if not len(history):
        raise InputError("lr_plateau_step needs a non-empty history")
    value = float(history[-1])
    if value < state.best - abs(state.best) * state.threshold or math.isinf(state.best):
        state.best = value
        state.bad_evals = 0
    else:
        state.bad_evals += 1
        if state.bad_evals >= state.patience:
            state.lr *= state.factor
            state.bad_evals = 0
    return state.lr


# ---------------------------------------------------------------------------
# data


def extract_random_patches(image_paths, patch_size: int, n_patches: int, seed: int = 0) -> np.ndarray:
    """Crop ``n_patches`` random square patches, deterministic under ``seed``.

    Images smaller than ``patch_size`` on either side are skipped with a
    warning. Returns (n_patches, 3, patch_size, patch_size) float32.
    """
    images = []
    for path in image_paths:
        img = read_image(path) if not isinstance(path, np.ndarray) else np.asarray(path, dtype=np.float32)
        if img.shape[1] < patch_size or img.shape[2] < patch_size:
            warnings.warn(f"skipping {getattr(path, 'name', 'image')}: smaller than {patch_size}px", stacklevel=2)
            continue
        images.append(img)
    if not images:
        raise DatasetError(f"no image is at least {patch_size}x{patch_size}")
    rng = np.random.default_rng(seed)
    out = np.empty((n_patches, 3, patch_size, patch_size), dtype=np.float32)
    for i in range(n_patches):
        img = images[rng.integers(len(images))]
        top = rng.integers(img.shape[1] - patch_size + 1)
        left = rng.integers(img.shape[2] - patch_size + 1)
        out[i] = img[:, top : top + patch_size, left : left + patch_size]
    return out


# ---------------------------------------------------------------------------
# loop


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list = field(default_factory=list)
    saved: list = field(default_factory=list)

    @property
    def lrs(self):
        return [h["lr"] for h in self.history]


def evaluate(model, patches: np.ndarray, config: TrainingConfig) -> RdLossBreakdown:
    """Mean rounded-latent RD loss over ``patches``, plus the current aux loss."""
    was_training = model.training
    model.eval()
    totals = np.zeros(3)
    count = 0
    with no_grad():
        for start in range(0, len(patches), config.eval_batch_size):
            batch = patches[start : start + config.eval_batch_size]
            out = model.forward_eval(batch)
            b = rd_loss(batch, out["x_hat"], out["likelihoods"], config.lmbda, config.metric)
            totals += len(batch) * np.array([b.distortion, b.rate_bpp, 0.0])
            count += len(batch)
        aux = model.aux_loss().item()
    model.train(was_training)
    dist, rate, _ = totals / count
    result = RdLossBreakdown(0.0, float(dist), float(rate), aux, config.lmbda, config.metric)
    result.total = result.recompose()
    return result


def _diagnose(model, batch, rng_state, config):
    rng = np.random.default_rng()
    rng.bit_generator.state = rng_state
    try:
        with detect_anomaly():
            out = model.forward_train(batch, rng=rng)
            rd_loss(batch, out["x_hat"], out["likelihoods"], config.lmbda, config.metric)
    except NonFiniteError as exc:
        return exc.op
    return "unknown operation"


def train(model, config: TrainingConfig, train_set, eval_set, out_dir=None, log_path=None, resume=None) -> TrainResult:
    """Alternate main RD steps with auxiliary quantile steps.

    ``train_set`` and ``eval_set`` are patch arrays (N, 3, P, P). The model is
    evaluated at step 0 and every ``eval_interval`` steps; each improvement of
    the evaluation loss is checkpointed (to ``out_dir`` when given).
    """
    train_set = np.asarray(train_set, dtype=np.float32)
    eval_set = np.asarray(eval_set, dtype=np.float32)
    if len(train_set) == 0 or len(eval_set) == 0:
        raise DatasetError("training and evaluation sets must be non-empty")
    if model.config.metric != config.metric:
        raise InputError(f"model metric {model.config.metric!r} differs from training metric {config.metric!r}")
    main_opt = Adam(model.main_parameters(), lr=config.initial_lr)
    aux_opt = Adam(model.aux_parameters(), lr=config.aux_lr)
    sched = PlateauState(config.initial_lr, config.patience, config.lr_factor)
    rng = np.random.default_rng(config.seed)
    step = 0
    history = []
    if resume is not None:
        model.load_state_dict(resume.params)
        main_opt.load_state_dict(resume.optimizers["main"])
        aux_opt.load_state_dict(resume.optimizers["aux"])
        sched = PlateauState(**resume.scheduler)
        rng.bit_generator.state = resume.rng_state
        step = resume.step
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    log_file = open(log_path, "a" if resume is not None else "w") if log_path is not None else None
    saved = []

    def snapshot():
        return Checkpoint.from_model(
            model,
            step=step,
            training=asdict(config),
            optimizers={"main": main_opt.state_dict(), "aux": aux_opt.state_dict()},
            scheduler=asdict(sched),
            rng_state=rng.bit_generator.state,
            best=None if math.isinf(sched.best) else sched.best,
        )

    def run_eval():
        b = evaluate(model, eval_set, config)
        record = {"step": step, **b.as_dict(), "lr": sched.lr}
        history.append(record)
        if log_file is not None:
            log_file.write(json.dumps(record, sort_keys=True) + "\n")
            log_file.flush()
        log.info("step %d total %.5f dist %.6f bpp %.4f aux %.4g lr %.3g", step, b.total, b.distortion, b.rate_bpp, b.aux, sched.lr)
        previous_best = sched.best
        main_opt.lr = lr_plateau_step([r["total"] for r in history], sched)
        if sched.best != previous_best:
            ckpt = snapshot()
            if out_dir is not None:
                saved.append(ckpt.save(out_dir / f"step{step:07d}.nzck"))
        return b

    try:
        model.train()
        if resume is None:
            run_eval()
        while step < config.max_steps:
            idx = rng.integers(0, len(train_set), size=config.batch_size)
            batch = train_set[idx]
            state = rng.bit_generator.state
            out = model.forward_train(Tensor(batch), rng=rng)
            loss = rd_loss(batch, out["x_hat"], out["likelihoods"], config.lmbda, config.metric)
            if not np.isfinite(loss.loss.item()):
                op = _diagnose(model, batch, state, config)
                raise TrainingDivergedError(f"non-finite loss at step {step + 1}; first non-finite operation: {op}")
            main_opt.zero_grad()
            loss.loss.backward()
            clip_grad_norm(main_opt.params, config.clip_norm)
            main_opt.step()
            aux_opt.zero_grad()
            model.aux_loss().backward()
            aux_opt.step()
            step += 1
            if step % config.eval_interval == 0 or step == config.max_steps:
                run_eval()
    finally:
        if log_file is not None:
            log_file.close()
    final = snapshot()
    if out_dir is not None:
        saved.append(final.save(out_dir / "last.nzck"))
    return TrainResult(final, history, saved)


def resume_from(checkpoint: Checkpoint):
    """Model and training config rebuilt from a checkpoint for :func:`train`."""
    model = checkpoint.build_model()
    known = {f.name for f in fields(TrainingConfig)}
    config = TrainingConfig(**{k: v for k, v in checkpoint.training.items() if k in known})
    return model, config
