from __future__ import annotations

import math
import tomllib
from pathlib import Path
from typing import Any, Literal, Self

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from core.errors import DatasetFormatError
from field.network import FieldArch
from sampling.patches import PatchSpec


class TrainConfig(BaseModel):
    """
    Every knob of a training run. Defaults are the desk-scale schedule for 64x64 images: 2000 pinhole steps of 512
    rays, then 3000 defocus steps on 16x16 patches with an 8 pixel guard, 32 samples per ray and a 4x32 trunk.

    The aperture and focus learn at 1e-2 rather than the field's 5e-4. Adam moves a parameter by about lr per step, so
    at 5e-4 the 3000 defocus steps could carry K at most 1.5 away from its 0.5 start. Setting lr_optics to None shares
    lr.

    Attributes:
        n_iters (int): Total optimizer steps.

        n_pretrain (int): Steps of pinhole pretraining before the defocus stage, at most n_iters.

        batch_size (int): Rays per pretraining step.

        n_samples (int): Stratified samples per ray.

        lr (float): Base learning rate of the field.

        lr_optics (float | None): Base learning rate of the per-view aperture and focus, 1e-2 by default. None shares lr.

        decay_steps (int | None): Steps over which the learning rate falls to one tenth. None means n_iters.

        patch_size (int): Side of the supervised patch interior in the defocus stage.

        anchor_stride (int): Spacing between patch anchors.

        guard (int | None): Border rendered around each patch. None means ceil(r_max).

        gamma (float | None): Gamma of the stored radiance. None takes the dataset's own gamma.

        r_max (float): Scatter radius clamp in pixels.

        learn_aperture (bool): Whether the training views' apertures are optimized.

        learn_focus (bool): Whether the training views' focus distances are optimized.

        jitter (bool): Whether sample depths are jittered inside their strata.

        threads (int | None): Worker threads. None defers to DOF_THREADS and then the core count.

        chunk_size (int): Rays per unit of parallel work. Results don't depend on it or on the thread count.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    n_iters: int = Field(default=5000, ge=0)
    n_pretrain: int = Field(default=2000, ge=0)
    batch_size: int = Field(default=512, ge=1)
    n_samples: int = Field(default=32, ge=2)

    lr: float = Field(default=5e-4, ge=0.0)
    lr_optics: float | None = Field(default=1e-2, ge=0.0)
    decay_steps: int | None = Field(default=None, ge=1)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)

    patch_size: int = Field(default=16, ge=1)
    anchor_stride: int = Field(default=8, ge=1)
    guard: int | None = Field(default=None, ge=0)
    snap_edges: bool = True
    gamma: float | None = Field(default=None, gt=0.0)
    r_max: float = Field(default=8.0, gt=0.0)

    hidden_layers: int = Field(default=4, ge=1)
    hidden_width: int = Field(default=32, ge=1)
    pos_freqs: int = Field(default=6, ge=0)
    dir_freqs: int = Field(default=2, ge=0)
    activation: Literal["softplus", "relu"] = "softplus"

    aperture_init: float = Field(default=0.5, ge=0.0)
    focus_init: float = Field(default=0.5, gt=0.0)
    learn_aperture: bool = True
    learn_focus: bool = True

    seed: int = Field(default=0, ge=0)
    jitter: bool = True
    log_interval: int = Field(default=50, ge=1)
    checkpoint_interval: int | None = Field(default=None, ge=1)
    threads: int | None = Field(default=None, ge=1)
    chunk_size: int = Field(default=256, ge=1)

    @model_validator(mode="after")
    def _check_schedule(self) -> Self:
        if self.n_pretrain > self.n_iters:
            raise ValueError(f"n_pretrain ({self.n_pretrain}) must not exceed n_iters ({self.n_iters})")
        return self

    @property
    def arch(self) -> FieldArch:
        return FieldArch(self.hidden_layers, self.hidden_width, self.pos_freqs, self.dir_freqs, self.activation)

    @property
    def resolved_guard(self) -> int:
        return math.ceil(self.r_max) if self.guard is None else self.guard

    @property
    def patch_spec(self) -> PatchSpec:
        return PatchSpec(self.patch_size, self.anchor_stride, self.resolved_guard, self.snap_edges)

    @property
    def resolved_decay_steps(self) -> int:
        return self.decay_steps if self.decay_steps is not None else max(self.n_iters, 1)

    def resolved_gamma(self, dataset_gamma: float) -> float:
        return dataset_gamma if self.gamma is None else self.gamma

    @property
    def optics_lr(self) -> float:
        return self.lr if self.lr_optics is None else self.lr_optics

    def with_overrides(self, **overrides: Any) -> TrainConfig:
        """
        Copy with the given fields replaced, skipping None values, validated again.

        :raises DatasetFormatError: If an override fails validation.
        """
        return _validate({**self.model_dump(), **{key: value for key, value in overrides.items() if value is not None}}, None)


def _validate(values: dict[str, Any], path: Path | str | None) -> TrainConfig:
    try:
        return TrainConfig.model_validate(values)
    except ValidationError as error:
        first = error.errors()[0]
        field = ".".join(str(part) for part in first["loc"]) or "<root>"
        raise DatasetFormatError(first["msg"], path=path, field=field) from error


def load_config(path: Path | str | None, **overrides: Any) -> TrainConfig:
    """
    Reads a TOML training config and applies overrides on top of it. Overrides set to None are ignored, so command-line
    flags that weren't given leave the file values in place.

    :param path: TOML file, or None to start from the defaults.
    :type path: Path | str | None

    :return: The validated configuration.
    :rtype: TrainConfig

    :raises DatasetFormatError: If the file is unreadable, isn't TOML, or holds an invalid value.
    """
    values: dict[str, Any] = {}
    if path is not None:
        try:
            values = tomllib.loads(Path(path).read_text())
        except (OSError, tomllib.TOMLDecodeError) as error:
            raise DatasetFormatError(str(error), path=path) from error
    values.update({key: value for key, value in overrides.items() if value is not None})
    return _validate(values, path)
