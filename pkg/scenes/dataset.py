from __future__ import annotations

from dataclasses import dataclass
from enum import StrEnum
from typing import Iterator

import numpy as np

from core.errors import DomainError, ShapeMismatchError
from core.validation import FloatArray
from sampling.camera import CameraModel


class Split(StrEnum):
    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True, slots=True)
class GroundTruthOptics:
    """
    Aperture parameter K* and focus distance F* a synthetic view was rendered with.
    """

    aperture: float
    focus: float


@dataclass(frozen=True, slots=True)
class SceneView:
    """
    One captured view.

    Attributes:
        image (FloatArray): Observed image, shape (H, W, 3), values in [0, 1].

        camera (CameraModel): Intrinsics, pose and sampling bounds.

        split (Split): Whether the view is used for training or held out.

        optics (GroundTruthOptics | None): Optics the image was rendered with, known for synthetic scenes only.

        all_in_focus (FloatArray | None): All-in-focus reference of the same view, known for synthetic scenes only.
    """

    image: FloatArray
    camera: CameraModel
    split: Split = Split.TRAIN
    optics: GroundTruthOptics | None = None
    all_in_focus: FloatArray | None = None

    def __post_init__(self) -> None:
        expected = (self.camera.height, self.camera.width, 3)
        if self.image.shape != expected:
            raise ShapeMismatchError(f"View image has shape {self.image.shape}, camera expects {expected}.")
        if self.all_in_focus is not None and self.all_in_focus.shape != expected:
            raise ShapeMismatchError(f"All-in-focus image has shape {self.all_in_focus.shape}, camera expects {expected}.")

    @property
    def is_train(self) -> bool:
        return self.split is Split.TRAIN


@dataclass(frozen=True, slots=True)
class SceneDataset:
    """
    Images with cameras, split into training and held-out views.

    Attributes:
        views (tuple[SceneView, ...]): Every view, all of the same image size.

        name (str): Human-readable scene name.

        gamma (float): Gamma of the stored radiance, used by the scatter step.
    """

    views: tuple[SceneView, ...]
    name: str = "scene"
    gamma: float = 2.2

    def __post_init__(self) -> None:
        if not self.views:
            raise DomainError("A dataset needs at least one view.")
        sizes = {view.image.shape for view in self.views}
        if len(sizes) != 1:
            raise ShapeMismatchError(f"All views must share one image size, got {sorted(sizes)}.")
        if not any(view.is_train for view in self.views):
            raise DomainError("A dataset needs at least one training view.")
        if not any(not view.is_train for view in self.views):
            raise DomainError("A dataset needs at least one held-out test view.")

    def __len__(self) -> int:
        return len(self.views)

    def __iter__(self) -> Iterator[SceneView]:
        return iter(self.views)

    def __getitem__(self, index: int) -> SceneView:
        return self.views[index]

    @property
    def image_shape(self) -> tuple[int, int]:
        height, width, _ = self.views[0].image.shape
        return height, width

    @property
    def train_indices(self) -> tuple[int, ...]:
        return tuple(i for i, view in enumerate(self.views) if view.is_train)

    @property
    def test_indices(self) -> tuple[int, ...]:
        return tuple(i for i, view in enumerate(self.views) if not view.is_train)

    @property
    def trainable_mask(self) -> np.ndarray:
        return np.array([view.is_train for view in self.views], dtype=bool)

    @property
    def depth_bounds(self) -> tuple[float, float]:
        """
        The tightest (near, far) interval containing every view's sampling bounds.
        """
        return min(view.camera.near for view in self.views), max(view.camera.far for view in self.views)
