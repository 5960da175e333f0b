from __future__ import annotations

import logging
import tomllib
from pathlib import Path
from typing import Annotated, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from core.errors import DatasetFormatError, DomainError, ShapeMismatchError
from optics.aperture import ApertureShape
from sampling.camera import CameraModel
from scenes.analytic import AnalyticScene, CheckerTexture, GradientTexture, Layer, SolidTexture, Texture, scene_preset
from scenes.dataset import GroundTruthOptics, SceneDataset, SceneView, Split
from scenes.image_io import read_image, write_image
from scenes.synthesis import ViewPattern, make_recovery_dataset

logger = logging.getLogger(__name__)

POSE_FILE = "poses.json"
POSE_FORMAT = "lensfield-poses"
POSE_VERSION = 1

ImageFormat = Literal["png", "bin"]
Triple = Annotated[list[float], Field(min_length=3, max_length=3)]
Pair = Annotated[list[float], Field(min_length=2, max_length=2)]


def _error_field(error: ValidationError) -> str:
    first = error.errors()[0]
    return ".".join(str(part) for part in first["loc"]) or "<root>"


class ViewRecord(BaseModel):
    """
    One view of the pose file. Floats are written with the shortest representation that reads back exactly.
    """

    model_config = ConfigDict(extra="forbid")

    image: str
    camera_to_world: Annotated[list[float], Field(min_length=16, max_length=16)]
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float
    far: float
    split: Split
    aperture: float | None = None
    focus: float | None = None
    all_in_focus: str | None = None


class PoseFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    format: Literal["lensfield-poses"] = POSE_FORMAT
    version: Literal[1] = POSE_VERSION
    name: str
    gamma: float = Field(gt=0.0)
    views: list[ViewRecord] = Field(min_length=1)


def save_dataset(dataset: SceneDataset, path: Path | str, image_format: ImageFormat = "bin") -> Path:
    """
    Writes a dataset directory: poses.json next to images/ and, when known, all_in_focus/.

    :param dataset: Dataset to write.
    :type dataset: SceneDataset

    :param path: Directory to write into, created when missing.
    :type path: Path | str

    :param image_format: "bin" for the bit-exact format, "png" for 8-bit images.
    :type image_format: ImageFormat

    :return: Path of the written pose file.
    :rtype: Path
    """
    root = Path(path)
    (root / "images").mkdir(parents=True, exist_ok=True)
    records: list[ViewRecord] = []
    for index, view in enumerate(dataset):
        image_name = f"images/view_{index:03d}.{image_format}"
        write_image(root / image_name, view.image)
        reference = None
        if view.all_in_focus is not None:
            (root / "all_in_focus").mkdir(exist_ok=True)
            reference = f"all_in_focus/view_{index:03d}.{image_format}"
            write_image(root / reference, view.all_in_focus)
        camera = view.camera
        records.append(ViewRecord(
            image=image_name,
            camera_to_world=[float(value) for value in camera.camera_to_world.ravel()],
            fx=camera.fx, fy=camera.fy, cx=camera.cx, cy=camera.cy,
            width=camera.width, height=camera.height, near=camera.near, far=camera.far,
            split=view.split,
            aperture=None if view.optics is None else view.optics.aperture,
            focus=None if view.optics is None else view.optics.focus,
            all_in_focus=reference,
        ))
    pose_path = root / POSE_FILE
    pose_path.write_text(PoseFile(name=dataset.name, gamma=dataset.gamma, views=records).model_dump_json(indent=2))
    logger.info("Saved %d views to %s", len(records), root)
    return pose_path


def _load_view(root: Path, index: int, record: ViewRecord, pose_path: Path) -> SceneView:
    field = f"views.{index}"
    try:
        camera = CameraModel(
            record.fx, record.fy, record.cx, record.cy,
            np.asarray(record.camera_to_world, dtype=np.float64).reshape(4, 4),
            record.width, record.height, record.near, record.far,
        )
    except DomainError as error:
        raise DatasetFormatError(str(error), path=pose_path, field=f"{field}.camera_to_world") from error
    if (record.aperture is None) != (record.focus is None):
        raise DatasetFormatError("aperture and focus must be given together", path=pose_path, field=field)
    optics = None if record.aperture is None or record.focus is None else GroundTruthOptics(record.aperture, record.focus)

    images: list[np.ndarray | None] = []
    for name in (record.image, record.all_in_focus):
        if name is None:
            images.append(None)
            continue
        image_path = root / name
        if not image_path.is_file():
            raise DatasetFormatError(f"missing image {name}", path=pose_path, field=field)
        images.append(read_image(image_path))
    image, reference = images
    assert image is not None
    try:
        return SceneView(image, camera, record.split, optics, reference)
    except ShapeMismatchError as error:
        raise DatasetFormatError(str(error), path=root / record.image, field=field) from error


def load_dataset(path: Path | str) -> SceneDataset:
    """
    Reads a dataset directory written by :func:`save_dataset`.

    :raises DatasetFormatError: If the pose file is missing or malformed, a pose isn't a rigid transform, or an image
     is unreadable or has the wrong size. The message names the file and the offending field.
    """
    root = Path(path)
    pose_path = root / POSE_FILE
    if not pose_path.is_file():
        raise DatasetFormatError("pose file not found", path=pose_path)
    try:
        poses = PoseFile.model_validate_json(pose_path.read_bytes())
    except ValidationError as error:
        raise DatasetFormatError(error.errors()[0]["msg"], path=pose_path, field=_error_field(error)) from error
    views = tuple(_load_view(root, index, record, pose_path) for index, record in enumerate(poses.views))
    try:
        dataset = SceneDataset(views, poses.name, poses.gamma)
    except (DomainError, ShapeMismatchError) as error:
        raise DatasetFormatError(str(error), path=pose_path, field="views") from error
    logger.info("Loaded %d views from %s", len(dataset), root)
    return dataset


class TextureSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["solid", "checker", "gradient"] = "checker"
    color_a: Triple = [0.9, 0.9, 0.9]
    color_b: Triple = [0.1, 0.1, 0.1]
    frequency: float = Field(default=4.0, gt=0.0)
    phase: float = 0.0

    def build(self) -> Texture:
        a = (self.color_a[0], self.color_a[1], self.color_a[2])
        b = (self.color_b[0], self.color_b[1], self.color_b[2])
        match self.kind:
            case "solid":
                return SolidTexture(a)
            case "checker":
                return CheckerTexture(a, b, self.frequency, self.phase)
            case "gradient":
                return GradientTexture(a, b, self.frequency, self.phase)


class LayerSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    depth: float = Field(gt=0.0)
    center: Pair = [0.0, 0.0]
    half_extent: Pair = [1.0, 1.0]
    density: float = Field(default=1000.0, gt=0.0)
    thickness: float = Field(default=0.05, gt=0.0)
    texture: TextureSpec = TextureSpec()

    def build(self) -> Layer:
        return Layer(
            self.depth,
            (self.center[0], self.center[1]),
            (self.half_extent[0], self.half_extent[1]),
            self.texture.build(),
            self.density,
            self.thickness,
        )


class SceneSpec(BaseModel):
    """
    Plain-text description of a synthetic dataset: a preset or explicit layers, plus how views are generated.

    Every key is optional: an empty file describes the default recovery dataset.
    """

    model_config = ConfigDict(extra="forbid")

    preset: str | None = "recovery"
    name: str | None = None
    near: float | None = Field(default=None, gt=0.0)
    far: float | None = Field(default=None, gt=0.0)
    layers: list[LayerSpec] | None = None

    n_views: int = Field(default=10, ge=2)
    pattern: ViewPattern = ViewPattern.ALTERNATING_FOCUS
    aperture: float = Field(default=6.0, ge=0.0)
    focus_fg: float = Field(default=1.0, gt=0.0)
    focus_bg: float = Field(default=3.0, gt=0.0)
    seed: int = Field(default=0, ge=0)
    image_size: int = Field(default=64, ge=1)
    focal: float = Field(default=70.0, gt=0.0)
    gamma: float = Field(default=2.2, gt=0.0)
    r_max: float = Field(default=12.0, gt=0.0)
    blades: int | None = None
    rotation: float = 0.0
    image_format: ImageFormat = "bin"

    def build_scene(self) -> AnalyticScene:
        """
        :raises DomainError: If neither a preset nor layers are given, or the layers are invalid.
        """
        if self.layers is not None:
            return AnalyticScene(tuple(layer.build() for layer in self.layers), self.near or 0.5, self.far or 4.0, self.name or "custom")
        if self.preset is None:
            raise DomainError("A scene spec needs a preset or a list of layers.")
        scene = scene_preset(self.preset)
        return AnalyticScene(scene.layers, self.near or scene.near, self.far or scene.far, self.name or scene.name)

    def build_dataset(self) -> SceneDataset:
        return make_recovery_dataset(
            self.build_scene(),
            n_views=self.n_views,
            pattern=self.pattern,
            aperture=self.aperture,
            focus_fg=self.focus_fg,
            focus_bg=self.focus_bg,
            seed=self.seed,
            image_size=self.image_size,
            focal=self.focal,
            gamma=self.gamma,
            r_max=self.r_max,
            shape=ApertureShape.from_blades(self.blades, self.rotation),
        )


def load_scene_spec(path: Path | str | None, **overrides: object) -> SceneSpec:
    """
    Reads a TOML scene spec, applying keyword overrides on top of the file. A None path starts from the defaults.

    :raises DatasetFormatError: If the file is not valid TOML or a key fails validation.
    """
    values: dict[str, object] = {}
    if path is not None:
        try:
            values = tomllib.loads(Path(path).read_text())
        except (OSError, tomllib.TOMLDecodeError) as error:
            raise DatasetFormatError(str(error), path=path) from error
    values.update({key: value for key, value in overrides.items() if value is not None})
    try:
        return SceneSpec.model_validate(values)
    except ValidationError as error:
        raise DatasetFormatError(error.errors()[0]["msg"], path=path, field=_error_field(error)) from error
