from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import StrEnum
from typing import Literal

import numpy as np

from core.errors import DomainError
from core.validation import FloatArray, _validate_non_negative, _validate_positive
from optics.aperture import ApertureShape
from rendering.scatter import ConcentratedPatch, scatter_forward
from rendering.volume import (
    EMPTY_RAY_EPSILON,
    RaySamples,
    concentrate,
    segment_lengths,
    segment_transparency,
    stratified_sample,
)
from sampling.camera import CameraModel, generate_rays, look_at_pose, pixel_grid
from scenes.analytic import AnalyticScene
from scenes.dataset import GroundTruthOptics, SceneDataset, SceneView, Split

logger = logging.getLogger(__name__)

type GroundTruthMethod = Literal["closed_form", "quadrature"]


class ViewPattern(StrEnum):
    ALTERNATING_FOCUS = "alternating_focus"
    ALTERNATING_APERTURE = "alternating_aperture"
    ALL_IN_FOCUS = "all_in_focus"


@dataclass(frozen=True, slots=True)
class GroundTruthRender:
    """
    All-in-focus render of an analytic scene over a pixel grid that may extend past the image by a guard band.

    Attributes:
        radiance (FloatArray): Pinhole radiance, shape (H + 2·guard, W + 2·guard, 3).

        depth (FloatArray): Weighted mean ray distance of the emitted light, the far bound where nothing is hit.

        guard (int): Width of the border outside the image.
    """

    radiance: FloatArray
    depth: FloatArray
    guard: int

    @property
    def interior(self) -> FloatArray:
        height, width = self.depth.shape
        return self.radiance[self.guard:height - self.guard, self.guard:width - self.guard].copy()


def _closed_form(scene: AnalyticScene, camera: CameraModel, us: np.ndarray, vs: np.ndarray) -> tuple[FloatArray, FloatArray]:
    rays = generate_rays(camera, us, vs)
    count = len(rays)
    radiance = np.zeros((count, 3))
    weighted_depth = np.zeros(count)
    total = np.zeros(count)
    carried = np.ones(count)
    order = sorted(range(len(scene.layers)), key=lambda i: scene.layers[i].depth)
    hits = scene.hits(rays)
    for index in order:
        layer, hit = scene.layers[index], hits[index]
        start = np.maximum(hit.entry, camera.near)
        end = np.minimum(hit.entry + hit.path, camera.far)
        path = np.where(hit.hit, np.maximum(end - start, 0.0), 0.0)
        opacity = -np.expm1(-layer.density * path)
        weight = carried * opacity
        # Mean distance inside the slab under the exponential absorption profile.
        safe = np.where(opacity > 0.0, opacity, 1.0)
        inside = np.where(opacity > 0.0, 1.0 / layer.density - path * np.exp(-layer.density * path) / safe, 0.0)
        radiance += weight[:, None] * hit.color
        weighted_depth += weight * (start + inside)
        total += weight
        carried = carried * (1.0 - opacity)
    empty = total < EMPTY_RAY_EPSILON
    depth = np.where(empty, camera.far, weighted_depth / np.where(empty, 1.0, total))
    return np.where(empty[:, None], 0.0, radiance), depth


def _quadrature(scene: AnalyticScene, camera: CameraModel, us: np.ndarray, vs: np.ndarray, n_samples: int) -> tuple[FloatArray, FloatArray]:
    rays = generate_rays(camera, us, vs)
    depths = stratified_sample(rays, n_samples)
    density, colors = scene.density_and_color(rays.points(depths))
    deltas = segment_lengths(depths, rays.far)
    samples = RaySamples(depths, deltas, colors, segment_transparency(density, deltas), rays.far)
    concentration = concentrate(samples)
    return concentration.radiance, concentration.depth


def render_ground_truth(
    scene: AnalyticScene,
    camera: CameraModel,
    n_samples: int = 256,
    method: GroundTruthMethod = "closed_form",
    guard: int = 0
) -> GroundTruthRender:
    """
    Deterministic pinhole render of an analytic scene, evaluated directly from its layers.

    The closed form composites the layers front to back with their exact slab opacities. The quadrature method samples
    the scene's density and emission at stratum midpoints and runs the regular volume renderer on them, which makes it
    an independent check of the closed form.

    :param scene: Scene to render.
    :type scene: AnalyticScene

    :param camera: Camera looking at the scene.
    :type camera: CameraModel

    :param n_samples: Samples per ray of the quadrature method.
    :type n_samples: int

    :param method: "closed_form" or "quadrature".
    :type method: GroundTruthMethod

    :param guard: Pixels rendered past every image border.
    :type guard: int

    :return: Radiance and depth over the guarded pixel grid.
    :rtype: GroundTruthRender

    :raises DomainError: If the guard is negative or the method is unknown.
    """
    if guard < 0:
        raise DomainError(f"guard must be non-negative, got {guard}.")
    rows, cols = camera.height + 2 * guard, camera.width + 2 * guard
    us, vs = pixel_grid(-guard, -guard, rows, cols)
    if method == "closed_form":
        radiance, depth = _closed_form(scene, camera, us, vs)
    elif method == "quadrature":
        radiance, depth = _quadrature(scene, camera, us, vs, n_samples)
    else:
        raise DomainError(f"Unknown ground truth method {method!r}.")
    return GroundTruthRender(radiance.reshape(rows, cols, 3), depth.reshape(rows, cols), guard)


def apply_forward_dof(
    all_in_focus: FloatArray,
    depth: FloatArray,
    guard: int,
    aperture: float,
    focus: float,
    shape: ApertureShape | None = None,
    gamma: float = 2.2,
    r_max: float = 12.0
) -> FloatArray:
    """
    Simulates a shallow depth of field photograph by scattering every pixel as a concentrated ray at its depth.

    This is the model's own forward operator, so images made with it are exactly reachable by training.

    :param all_in_focus: Sharp image over the guarded grid, shape (H + 2·guard, W + 2·guard, 3).
    :type all_in_focus: FloatArray

    :param depth: Positive depth per pixel of the guarded grid.
    :type depth: FloatArray

    :param guard: Border width, at least ceil(r_max).
    :type guard: int

    :param aperture: Aperture parameter K* ≥ 0.
    :type aperture: float

    :param focus: Focus distance F* > 0.
    :type focus: float

    :return: The defocused image, shape (H, W, 3).
    :rtype: FloatArray
    """
    _validate_positive("depth", depth)
    patch = ConcentratedPatch(np.asarray(all_in_focus, dtype=np.float64), np.asarray(depth, dtype=np.float64), guard)
    return scatter_forward(patch, aperture, focus, shape or ApertureShape.circular(), gamma, r_max)


def recovery_optics(pattern: ViewPattern, index: int, aperture: float, focus_fg: float, focus_bg: float) -> GroundTruthOptics:
    """
    Optics of view index under a mixing pattern: even views are foreground focused or wide open, odd views background
    focused or pinhole.
    """
    even = index % 2 == 0
    match pattern:
        case ViewPattern.ALTERNATING_FOCUS:
            return GroundTruthOptics(aperture, focus_fg if even else focus_bg)
        case ViewPattern.ALTERNATING_APERTURE:
            return GroundTruthOptics(aperture if even else 0.0, focus_fg)
        case ViewPattern.ALL_IN_FOCUS:
            return GroundTruthOptics(0.0, focus_fg)


def view_split(index: int, n_views: int, test_every: int = 5) -> Split:
    """
    Every test_every-th view is held out. Short sequences hold out their last view so a test view always exists.
    """
    if index % test_every == test_every - 1 or (n_views < test_every and index == n_views - 1):
        return Split.TEST
    return Split.TRAIN


def pose_grid(scene: AnalyticScene, n_views: int, spread: float, seed: int) -> list[FloatArray]:
    """
    Camera-to-world poses on a jittered grid in the z = 0 plane, each looking at the scene centroid.
    """
    rng = np.random.default_rng(seed)
    columns = math.ceil(math.sqrt(n_views))
    rows = math.ceil(n_views / columns)
    xs = np.linspace(-spread, spread, columns) if columns > 1 else np.zeros(1)
    ys = np.linspace(-spread, spread, rows) if rows > 1 else np.zeros(1)
    jitter = rng.uniform(-spread / 4.0, spread / 4.0, size=(n_views, 2))
    target = scene.centroid
    poses: list[FloatArray] = []
    for i in range(n_views):
        position = np.array((xs[i % columns] + jitter[i, 0], ys[i // columns] + jitter[i, 1], 0.0))
        poses.append(look_at_pose(position, target))
    return poses


def make_recovery_dataset(
    scene: AnalyticScene,
    n_views: int = 10,
    pattern: ViewPattern | str = ViewPattern.ALTERNATING_FOCUS,
    aperture: float = 6.0,
    focus_fg: float = 1.0,
    focus_bg: float = 3.0,
    seed: int = 0,
    image_size: int = 64,
    focal: float = 70.0,
    gamma: float = 2.2,
    r_max: float = 12.0,
    shape: ApertureShape | None = None,
    spread: float = 0.15
) -> SceneDataset:
    """
    Renders a shallow depth of field dataset with known per-view optics.

    Cameras sit on a small pose grid facing the scene. Every image is the forward depth of field operator applied to
    the exact all-in-focus render, with the optics the pattern assigns to its index.

    :param scene: Scene with at least two layers.
    :type scene: AnalyticScene

    :param n_views: Number of views, at least 2.
    :type n_views: int

    :param pattern: How optics alternate between views.
    :type pattern: ViewPattern | str

    :param aperture: K* of the defocused views.
    :type aperture: float

    :param focus_fg: Focus distance of foreground-focused views.
    :type focus_fg: float

    :param focus_bg: Focus distance of background-focused views.
    :type focus_bg: float

    :param seed: Seed of the pose jitter. The dataset is a pure function of its arguments.
    :type seed: int

    :return: Views with images, cameras, ground truth optics and all-in-focus references.
    :rtype: SceneDataset

    :raises DomainError: If the scene has fewer than two layers or fewer than two views are requested.
    """
    if len(scene.layers) < 2:
        raise DomainError(f"A recovery dataset needs a scene with at least 2 layers, got {len(scene.layers)}.")
    if n_views < 2:
        raise DomainError(f"n_views must be at least 2, got {n_views}.")
    _validate_non_negative("aperture", aperture)
    _validate_positive("focus_fg", focus_fg)
    _validate_positive("focus_bg", focus_bg)
    pattern = ViewPattern(pattern)
    shape = shape or ApertureShape.circular()
    guard = math.ceil(r_max)
    center = (image_size - 1) / 2.0

    views: list[SceneView] = []
    for index, pose in enumerate(pose_grid(scene, n_views, spread, seed)):
        camera = CameraModel(focal, focal, center, center, pose, image_size, image_size, scene.near, scene.far)
        truth = render_ground_truth(scene, camera, guard=guard)
        optics = recovery_optics(pattern, index, aperture, focus_fg, focus_bg)
        image = apply_forward_dof(truth.radiance, truth.depth, guard, optics.aperture, optics.focus, shape, gamma, r_max)
        views.append(SceneView(image, camera, view_split(index, n_views), optics, truth.interior))
        logger.debug("Rendered view %d with K*=%g, F*=%g", index, optics.aperture, optics.focus)

    dataset = SceneDataset(tuple(views), scene.name, gamma)
    logger.info(
        "Generated %s dataset: %d train and %d test views, pattern %s",
        scene.name, len(dataset.train_indices), len(dataset.test_indices), pattern.value,
    )
    return dataset
