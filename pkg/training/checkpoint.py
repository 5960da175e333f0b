from __future__ import annotations

import json
import logging
import os
import zipfile
from pathlib import Path

import numpy as np
from immutabledict import immutabledict

from core.errors import DatasetFormatError, DomainError, ShapeMismatchError
from field.network import RadianceFieldParams
from training.config import TrainConfig
from training.optim import AdamState
from training.state import PerViewOptics, TrainState

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "lensfield-checkpoint"
CHECKPOINT_VERSION = 1

_REQUIRED = (
    "format", "version", "config", "step", "params",
    "aperture", "focus", "trainable", "near", "far",
    "field_adam_step", "field_adam_m", "field_adam_v",
    "optics_adam_step", "optics_adam_m", "optics_adam_v",
)


def save_checkpoint(path: Path | str, state: TrainState, config: TrainConfig) -> Path:
    """
    Writes the training state to an .npz archive, replacing any previous file atomically.

    Field parameters and their Adam moments are stored flattened in block order. Optics moments are stored as
    (2, V) arrays, aperture row first.

    :return: The written path.
    :rtype: Path
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    arch = state.params.arch
    partial = target.with_name(target.name + ".partial")
    with partial.open("wb") as handle:
        np.savez(
            handle,
            format=np.array(CHECKPOINT_FORMAT),
            version=np.array(CHECKPOINT_VERSION),
            config=np.array(config.model_dump_json()),
            step=np.array(state.step),
            params=state.params.flatten(),
            aperture=state.optics.aperture,
            focus=state.optics.focus,
            trainable=state.optics.trainable,
            near=state.optics.near,
            far=state.optics.far,
            field_adam_step=np.array(state.field_adam.step),
            field_adam_m=RadianceFieldParams(arch, state.field_adam.m).flatten(),
            field_adam_v=RadianceFieldParams(arch, state.field_adam.v).flatten(),
            optics_adam_step=np.array(state.optics_adam.step),
            optics_adam_m=np.stack([state.optics_adam.m["aperture"], state.optics_adam.m["focus"]]),
            optics_adam_v=np.stack([state.optics_adam.v["aperture"], state.optics_adam.v["focus"]]),
        )
    os.replace(partial, target)
    logger.debug("Checkpoint at step %d written to %s", state.step, target)
    return target


def load_checkpoint(path: Path | str) -> tuple[TrainState, TrainConfig]:
    """
    Reads a checkpoint written by :func:`save_checkpoint`.

    :return: The training state and the configuration it was trained with.
    :rtype: tuple[TrainState, TrainConfig]

    :raises DatasetFormatError: If the file is missing, isn't a checkpoint, or holds inconsistent arrays.
    """
    source = Path(path)
    if not source.is_file():
        raise DatasetFormatError("checkpoint not found", path=source)
    try:
        with np.load(source, allow_pickle=False) as archive:
            arrays = {name: archive[name] for name in archive.files}
    except (OSError, ValueError, zipfile.BadZipFile) as error:
        raise DatasetFormatError(f"cannot read checkpoint ({error})", path=source) from error
    for name in _REQUIRED:
        if name not in arrays:
            raise DatasetFormatError("missing entry", path=source, field=name)
    if str(arrays["format"]) != CHECKPOINT_FORMAT or int(arrays["version"]) != CHECKPOINT_VERSION:
        raise DatasetFormatError(f"unsupported checkpoint {arrays['format']} v{arrays['version']}", path=source, field="format")

    try:
        config = TrainConfig.model_validate(json.loads(str(arrays["config"])))
        arch = config.arch
        params = RadianceFieldParams.from_flat(arch, arrays["params"])
        optics = PerViewOptics(arrays["aperture"], arrays["focus"], arrays["trainable"].astype(bool), arrays["near"], arrays["far"])
        field_adam = AdamState(
            int(arrays["field_adam_step"]),
            RadianceFieldParams.from_flat(arch, arrays["field_adam_m"]).blocks,
            RadianceFieldParams.from_flat(arch, arrays["field_adam_v"]).blocks,
        )
        optics_m, optics_v = arrays["optics_adam_m"], arrays["optics_adam_v"]
        optics_adam = AdamState(
            int(arrays["optics_adam_step"]),
            immutabledict({"aperture": optics_m[0], "focus": optics_m[1]}),
            immutabledict({"aperture": optics_v[0], "focus": optics_v[1]}),
        )
    except (ValueError, DomainError, ShapeMismatchError, IndexError) as error:
        raise DatasetFormatError(str(error), path=source) from error
    return TrainState(int(arrays["step"]), params, optics, field_adam, optics_adam), config
