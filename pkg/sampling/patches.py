from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import numpy.typing as npt

from core.errors import DomainError
from core.validation import FloatArray
from rendering.volume import JitterSeed, RayBundle
from sampling.camera import generate_rays, pixel_grid

if TYPE_CHECKING:
    from scenes.dataset import SceneDataset


@dataclass(frozen=True, slots=True)
class PatchSpec:
    """
    Geometry of the patches used by the defocus stage.

    Attributes:
        patch_size (int): Side N_patch of the supervised square interior.

        anchor_stride (int): Spacing N_anchor between consecutive anchors, which are patch top-left corners.

        guard (int): Extra border of rays rendered around the interior so scatter at its edge is complete.

        snap_edges (bool): Whether a final anchor is snapped to the image edge when the stride doesn't divide the free
         range, so every pixel lies inside some patch.
    """

    patch_size: int = 16
    anchor_stride: int = 8
    guard: int = 8
    snap_edges: bool = True

    def __post_init__(self) -> None:
        if self.patch_size < 1 or self.anchor_stride < 1 or self.guard < 0:
            raise DomainError(f"Invalid patch spec {self}.")

    @property
    def grid_size(self) -> int:
        return self.patch_size + 2 * self.guard


@dataclass(frozen=True, slots=True)
class PatchBatch:
    """
    One patch of rays from one view.

    Attributes:
        view (int): Index of the view the patch comes from.

        top (int): Row of the interior's top-left pixel.

        left (int): Column of the interior's top-left pixel.

        size (int): Side of the interior.

        guard (int): Width of the border around the interior.

        rays (RayBundle): Row-major grid of (size + 2·guard)² rays, guard included.

        targets (FloatArray): Observed interior colors, shape (size, size, 3).
    """

    view: int
    top: int
    left: int
    size: int
    guard: int
    rays: RayBundle
    targets: FloatArray

    @property
    def grid_size(self) -> int:
        return self.size + 2 * self.guard


def anchor_positions(length: int, patch_size: int, stride: int, snap_edges: bool = True) -> npt.NDArray[np.int64]:
    """
    Start offsets of patches along one image axis.

    :return: Offsets 0, stride, 2·stride, ... that keep the patch in-bounds, plus length − patch_size when snapping
     and the stride leaves the last pixels uncovered.
    :rtype: npt.NDArray[np.int64]

    :raises DomainError: If the image is shorter than a patch.
    """
    if length < patch_size:
        raise DomainError(f"Image side {length} is smaller than the patch size {patch_size}.")
    positions = np.arange(0, length - patch_size + 1, stride, dtype=np.int64)
    if snap_edges and positions[-1] != length - patch_size:
        positions = np.append(positions, length - patch_size)
    return positions


def anchor_grid(height: int, width: int, spec: PatchSpec) -> npt.NDArray[np.int64]:
    """
    Every anchor (top, left) of an image, row-major, shape (M, 2).
    """
    rows = anchor_positions(height, spec.patch_size, spec.anchor_stride, spec.snap_edges)
    cols = anchor_positions(width, spec.patch_size, spec.anchor_stride, spec.snap_edges)
    tops, lefts = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([tops.ravel(), lefts.ravel()], axis=-1)


def patch_batch(dataset: SceneDataset, spec: PatchSpec, seed: JitterSeed) -> PatchBatch:
    """
    Picks one training view and one of its anchors uniformly and returns the patch's rays and targets.

    :param dataset: Dataset whose training views are sampled.
    :type dataset: SceneDataset

    :param spec: Patch geometry.
    :type spec: PatchSpec

    :param seed: Seed of the draw, the patch is a pure function of it.
    :type seed: JitterSeed

    :return: The ray grid including the guard band and the interior targets.
    :rtype: PatchBatch

    :raises DomainError: If the dataset has no training view or the images are smaller than the patch.
    """
    train = dataset.train_indices
    if not train:
        raise DomainError("Cannot draw a patch from a dataset without training views.")
    height, width = dataset.image_shape
    anchors = anchor_grid(height, width, spec)
    rng = np.random.default_rng(seed)
    view_index = int(train[rng.integers(len(train))])
    top, left = (int(value) for value in anchors[rng.integers(len(anchors))])
    view = dataset[view_index]
    us, vs = pixel_grid(top - spec.guard, left - spec.guard, spec.grid_size, spec.grid_size)
    rays = generate_rays(view.camera, us, vs)
    targets = view.image[top:top + spec.patch_size, left:left + spec.patch_size].copy()
    return PatchBatch(view_index, top, left, spec.patch_size, spec.guard, rays, targets)
