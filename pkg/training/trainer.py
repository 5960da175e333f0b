from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import TextIO

import numpy as np
from immutabledict import immutabledict
from tqdm import tqdm

from core.errors import DivergenceError, DomainError
from field.network import RadianceFieldParams, init_params
from optics.aperture import ApertureShape
from rendering.field_render import field_gradients, sample_field
from rendering.scatter import ConcentratedPatch, render_scatter, scatter_backward
from rendering.volume import JitterSeed, concentrate, concentrate_backward
from sampling.patches import PatchBatch, patch_batch
from sampling.rays import RayBatch, random_ray_batch
from scenes.dataset import SceneDataset
from training.checkpoint import save_checkpoint
from training.config import TrainConfig
from training.optim import AdamState, adam_step, decayed_lr, mse_loss
from training.state import PerViewOptics, TrainState

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "stage", "loss", "lr", "aperture_mean", "focus_mean", "aperture_0", "focus_0")
CHECKPOINT_NAME = "checkpoint.npz"
LOG_NAME = "train_log.csv"

# Stream tags mixed into per-step seeds so batch selection and depth jitter draw independent numbers.
_BATCH_STREAM = 1
_JITTER_STREAM = 2


@dataclass(frozen=True, slots=True)
class LossAndGradients:
    """
    Loss of one batch with its gradients on the field and on the optics of the batch's view.
    """

    loss: float
    field: RadianceFieldParams
    aperture: float = 0.0
    focus: float = 0.0


def pinhole_loss(
    params: RadianceFieldParams,
    batch: RayBatch,
    n_samples: int,
    jitter_seed: JitterSeed = None,
    threads: int | None = 1,
    chunk_size: int = 256
) -> LossAndGradients:
    """
    Photometric loss of pinhole renders of random rays, with its field gradient.
    """
    samples = sample_field(params, batch.rays, n_samples, jitter_seed, threads, chunk_size)
    prediction = concentrate(samples).radiance
    loss, d_prediction = mse_loss(prediction, batch.targets)
    d_colors, d_alphas = concentrate_backward(samples, d_prediction, np.zeros(len(batch)))
    return LossAndGradients(loss, field_gradients(params, batch.rays, samples, d_colors, d_alphas, threads, chunk_size))


def defocus_loss(
    params: RadianceFieldParams,
    patch: PatchBatch,
    aperture: float,
    focus: float,
    n_samples: int,
    gamma: float,
    r_max: float,
    shape: ApertureShape | None = None,
    jitter_seed: JitterSeed = None,
    threads: int | None = 1,
    chunk_size: int = 256
) -> LossAndGradients:
    """
    Photometric loss of a patch rendered by concentrate-and-scatter, with gradients on the field and the optics.

    :param params: Field parameters.
    :type params: RadianceFieldParams

    :param patch: Patch rays including the guard band, and interior targets.
    :type patch: PatchBatch

    :param aperture: Aperture parameter of the patch's view.
    :type aperture: float

    :param focus: Focus distance of the patch's view.
    :type focus: float

    :return: Loss on the interior and its gradients.
    :rtype: LossAndGradients
    """
    shape = shape or ApertureShape.circular()
    samples = sample_field(params, patch.rays, n_samples, jitter_seed, threads, chunk_size)
    concentration = concentrate(samples)
    side = patch.grid_size
    concentrated = ConcentratedPatch(concentration.radiance.reshape(side, side, 3), concentration.depth.reshape(side, side), patch.guard)
    result = render_scatter(concentrated, aperture, focus, shape, gamma, r_max)
    loss, d_image = mse_loss(result.image, patch.targets)
    scattered = scatter_backward(concentrated, aperture, focus, shape, gamma, r_max, d_image, result)
    d_colors, d_alphas = concentrate_backward(samples, scattered.radiance.reshape(-1, 3), scattered.depth.ravel())
    grads = field_gradients(params, patch.rays, samples, d_colors, d_alphas, threads, chunk_size)
    return LossAndGradients(loss, grads, scattered.aperture, scattered.focus)


@dataclass(frozen=True, slots=True)
class LogRecord:
    step: int
    stage: int
    loss: float
    lr: float
    aperture_mean: float
    focus_mean: float
    aperture_0: float
    focus_0: float


@dataclass(frozen=True, slots=True)
class TrainReport:
    """
    Summary of a training run.

    Attributes:
        records (tuple[LogRecord, ...]): One record per log interval, all losses finite.

        optics (PerViewOptics): Optics after the last step.

        checkpoint (Path | None): Last checkpoint written, if the run had an output directory.

        stage_seconds (immutabledict[int, float]): Wall-clock seconds spent in each stage.

        stage_steps (immutabledict[int, int]): Steps run in each stage.
    """

    records: tuple[LogRecord, ...]
    optics: PerViewOptics
    checkpoint: Path | None
    stage_seconds: immutabledict[int, float]
    stage_steps: immutabledict[int, int]

    def seconds_per_iteration(self, stage: int) -> float:
        steps = self.stage_steps.get(stage, 0)
        return self.stage_seconds.get(stage, 0.0) / steps if steps else math.nan


class Trainer:
    """
    Two-stage joint optimization of a radiance field and per-view optics.

    Steps [0, n_pretrain) fit the field with pinhole renders of random rays and leave the optics untouched. Later steps
    render patches through concentrate-and-scatter and update the field together with the aperture and focus of the
    trainable views, then project the optics back onto K ≥ APERTURE_FLOOR and F ∈ [near, far].

    Every step draws its randomness from (seed, step), so a run resumed from a checkpoint continues exactly as the
    uninterrupted run would.
    """

    def __init__(self, dataset: SceneDataset, config: TrainConfig, state: TrainState | None = None) -> None:
        self.dataset = dataset
        self.config = config
        if state is None:
            near = np.array([view.camera.near for view in dataset])
            far = np.array([view.camera.far for view in dataset])
            optics = PerViewOptics.initial(dataset.trainable_mask, near, far, config.aperture_init, config.focus_init)
            state = TrainState.fresh(init_params(config.arch, config.seed), optics)
        elif len(state.optics) != len(dataset):
            raise DomainError(f"State holds optics for {len(state.optics)} views, the dataset has {len(dataset)}.")
        self.state = state
        self._aperture_mask = dataset.trainable_mask & config.learn_aperture
        self._focus_mask = dataset.trainable_mask & config.learn_focus
        self.gamma = config.resolved_gamma(dataset.gamma)

    def _seed(self, step: int, stream: int) -> tuple[int, int, int]:
        return self.config.seed, step, stream

    def _jitter(self, step: int) -> JitterSeed:
        return self._seed(step, _JITTER_STREAM) if self.config.jitter else None

    def _check(self, loss: float, step: int, stage: int) -> None:
        if not math.isfinite(loss):
            raise DivergenceError(step, stage, loss)

    def _update_field(self, grads: RadianceFieldParams, step: int) -> tuple[RadianceFieldParams, AdamState]:
        cfg = self.config
        lr = decayed_lr(cfg.lr, step, cfg.resolved_decay_steps)
        blocks, adam = adam_step(self.state.field_adam, self.state.params.blocks, grads.blocks, lr, cfg.beta1, cfg.beta2, cfg.eps)
        params = RadianceFieldParams(self.state.params.arch, blocks)
        return params, adam

    def stage1_step(self, step: int) -> float:
        """
        One pinhole pretraining step. Updates the field only.

        :raises DomainError: If the step doesn't belong to the pretraining stage.
        :raises DivergenceError: If the loss isn't finite. The state is left as it was.
        """
        cfg = self.config
        if not 0 <= step < cfg.n_pretrain:
            raise DomainError(f"Step {step} is outside the pretraining range [0, {cfg.n_pretrain}).")
        batch = random_ray_batch(self.dataset, cfg.batch_size, self._seed(step, _BATCH_STREAM))
        result = pinhole_loss(self.state.params, batch, cfg.n_samples, self._jitter(step), cfg.threads, cfg.chunk_size)
        self._check(result.loss, step, 1)
        params, field_adam = self._update_field(result.field, step)
        self.state = TrainState(step + 1, params, self.state.optics, field_adam, self.state.optics_adam)
        return result.loss

    def stage2_step(self, step: int) -> float:
        """
        One joint step on a single patch: field, and the optics of the patch's view when it is trainable.

        :raises DomainError: If the step belongs to the pretraining stage.
        :raises DivergenceError: If the loss isn't finite. The state is left as it was.
        """
        cfg = self.config
        if step < cfg.n_pretrain:
            raise DomainError(f"Step {step} belongs to the pretraining range [0, {cfg.n_pretrain}).")
        patch = patch_batch(self.dataset, cfg.patch_spec, self._seed(step, _BATCH_STREAM))
        optics = self.state.optics
        view = patch.view
        result = defocus_loss(
            self.state.params, patch, float(optics.aperture[view]), float(optics.focus[view]),
            cfg.n_samples, self.gamma, cfg.r_max, None, self._jitter(step), cfg.threads, cfg.chunk_size,
        )
        self._check(result.loss, step, 2)
        params, field_adam = self._update_field(result.field, step)

        d_aperture = np.zeros(len(optics))
        d_focus = np.zeros(len(optics))
        d_aperture[view] = result.aperture if self._aperture_mask[view] else 0.0
        d_focus[view] = result.focus if self._focus_mask[view] else 0.0
        lr = decayed_lr(cfg.optics_lr, step, cfg.resolved_decay_steps)
        values, optics_adam = adam_step(
            self.state.optics_adam, optics.as_params(), immutabledict({"aperture": d_aperture, "focus": d_focus}),
            lr, cfg.beta1, cfg.beta2, cfg.eps,
        )
        # Views without a learnable group keep their values bit for bit.
        aperture = np.where(self._aperture_mask, values["aperture"], optics.aperture)
        focus = np.where(self._focus_mask, values["focus"], optics.focus)
        self.state = TrainState(step + 1, params, optics.clamped(aperture, focus), field_adam, optics_adam)
        return result.loss

    def step(self) -> tuple[int, float]:
        """
        Runs the next step of the schedule.

        :return: The stage that ran and its loss.
        :rtype: tuple[int, float]
        """
        step = self.state.step
        if step < self.config.n_pretrain:
            return 1, self.stage1_step(step)
        return 2, self.stage2_step(step)

    def record(self, step: int, stage: int, loss: float) -> LogRecord:
        optics = self.state.optics
        return LogRecord(
            step, stage, loss,
            decayed_lr(self.config.lr, step, self.config.resolved_decay_steps),
            float(np.mean(optics.aperture)), float(np.mean(optics.focus)),
            float(optics.aperture[0]), float(optics.focus[0]),
        )

    def run(self, out_dir: Path | str | None = None, progress: bool = False) -> TrainReport:
        """
        Runs the remaining steps up to n_iters, logging every log_interval steps and checkpointing when an output
        directory is given.

        :param out_dir: Directory receiving checkpoint.npz and train_log.csv.
        :type out_dir: Path | str | None

        :param progress: Whether to show a progress bar.
        :type progress: bool

        :return: Logged losses, final optics, checkpoint path and stage timings.
        :rtype: TrainReport
        """
        cfg = self.config
        directory = Path(out_dir) if out_dir is not None else None
        checkpoint: Path | None = None
        records: list[LogRecord] = []
        seconds = {1: 0.0, 2: 0.0}
        steps = {1: 0, 2: 0}
        log_handle: TextIO | None = None
        writer = None
        if directory is not None:
            directory.mkdir(parents=True, exist_ok=True)
            log_path = directory / LOG_NAME
            resumed = self.state.step > 0 and log_path.exists()
            log_handle = log_path.open("a" if resumed else "w", newline="")
            writer = csv.writer(log_handle)
            if not resumed:
                writer.writerow(LOG_COLUMNS)
        logger.info("Training from step %d to %d (%d pretraining steps)", self.state.step, cfg.n_iters, cfg.n_pretrain)
        try:
            for _ in tqdm(range(self.state.step, cfg.n_iters), disable=not progress, desc="train", unit="step"):
                step = self.state.step
                started = time.perf_counter()
                stage, loss = self.step()
                seconds[stage] += time.perf_counter() - started
                steps[stage] += 1
                last = step + 1 == cfg.n_iters
                if step % cfg.log_interval == 0 or last:
                    record = self.record(step, stage, loss)
                    records.append(record)
                    logger.debug("step %d stage %d loss %.6g", step, stage, loss)
                    if writer is not None and log_handle is not None:
                        writer.writerow([record.step, record.stage, repr(record.loss), repr(record.lr),
                                         repr(record.aperture_mean), repr(record.focus_mean),
                                         repr(record.aperture_0), repr(record.focus_0)])
                        log_handle.flush()
                if directory is not None and cfg.checkpoint_interval is not None and (step + 1) % cfg.checkpoint_interval == 0:
                    checkpoint = save_checkpoint(directory / CHECKPOINT_NAME, self.state, cfg)
        finally:
            if log_handle is not None:
                log_handle.close()
        if directory is not None:
            checkpoint = save_checkpoint(directory / CHECKPOINT_NAME, self.state, cfg)
        for stage in (1, 2):
            if steps[stage]:
                logger.info("Stage %d: %d steps, %.4f s/step", stage, steps[stage], seconds[stage] / steps[stage])
        return TrainReport(tuple(records), self.state.optics, checkpoint, immutabledict(seconds), immutabledict(steps))


def train(
    dataset: SceneDataset,
    config: TrainConfig,
    out_dir: Path | str | None = None,
    state: TrainState | None = None,
    progress: bool = False
) -> TrainReport:
    """
    Runs both stages of the schedule: n_pretrain pinhole steps, then joint defocus steps up to n_iters.

    :param dataset: Views to fit.
    :type dataset: SceneDataset

    :param config: Run configuration.
    :type config: TrainConfig

    :param out_dir: Optional directory for the checkpoint and the training log.
    :type out_dir: Path | str | None

    :param state: State to resume from, a fresh initialization when omitted.
    :type state: TrainState | None

    :return: The training report.
    :rtype: TrainReport

    :raises DivergenceError: If some step's loss is not finite.
    """
    return Trainer(dataset, config, state).run(out_dir, progress)
