from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import numpy.typing as npt

from core.errors import DomainError
from core.validation import FloatArray
from rendering.volume import JitterSeed, RayBundle
from sampling.camera import generate_rays

if TYPE_CHECKING:
    from scenes.dataset import SceneDataset


@dataclass(frozen=True, slots=True)
class RayBatch:
    """
    Randomly chosen training rays with their observed colors.

    Attributes:
        rays (RayBundle): The rays, in draw order.

        targets (FloatArray): Observed color of each ray's pixel, shape (R, 3).

        views (npt.NDArray[np.int64]): Index of the view each ray belongs to, shape (R,).
    """

    rays: RayBundle
    targets: FloatArray
    views: npt.NDArray[np.int64]

    def __len__(self) -> int:
        return len(self.rays)


def random_ray_batch(dataset: SceneDataset, batch_size: int, seed: JitterSeed) -> RayBatch:
    """
    Draws rays uniformly over every (training view, pixel) pair.

    :param dataset: Dataset whose training views are sampled.
    :type dataset: SceneDataset

    :param batch_size: Number of rays to draw, with replacement.
    :type batch_size: int

    :param seed: Seed of the draw, the batch is a pure function of it.
    :type seed: JitterSeed

    :return: Rays with their target colors.
    :rtype: RayBatch

    :raises DomainError: If the dataset has no training view or the batch size is not positive.
    """
    train = dataset.train_indices
    if not train:
        raise DomainError("Cannot draw rays from a dataset without training views.")
    if batch_size < 1:
        raise DomainError(f"batch_size must be positive, got {batch_size}.")
    height, width = dataset.image_shape
    flat = np.random.default_rng(seed).integers(0, len(train) * height * width, size=batch_size)
    views = np.asarray(train, dtype=np.int64)[flat // (height * width)]
    pixel = flat % (height * width)
    rows, cols = pixel // width, pixel % width

    origins = np.empty((batch_size, 3))
    directions = np.empty((batch_size, 3))
    near = np.empty(batch_size)
    far = np.empty(batch_size)
    targets = np.empty((batch_size, 3))
    for view_index in np.unique(views):
        mask = views == view_index
        view = dataset[int(view_index)]
        bundle = generate_rays(view.camera, cols[mask], rows[mask])
        origins[mask] = bundle.origins
        directions[mask] = bundle.directions
        near[mask] = bundle.near
        far[mask] = bundle.far
        targets[mask] = view.image[rows[mask], cols[mask]]
    rays = RayBundle(origins, directions, near, far, np.stack([cols, rows], axis=-1).astype(np.int64))
    return RayBatch(rays, targets, views)
