from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from immutabledict import immutabledict

from core.base import forbid_instantiation
from core.errors import DomainError
from core.validation import FloatArray, _validate_finite, _validate_positive
from rendering.volume import RayBundle

type Color = tuple[float, float, float]


def _validate_color(name: str, color: Color) -> None:
    if len(color) != 3 or not all(0.0 <= channel <= 1.0 for channel in color):
        raise DomainError(f"{name} must be three channels in [0, 1], got {color}.")


@forbid_instantiation
class Texture:
    """
    Procedural emission pattern of a layer, evaluated in the layer's local plane coordinates.

    This class can't be instantiated directly, use one of its concrete subclasses.
    """

    __slots__ = ()

    def evaluate(self, x: FloatArray, y: FloatArray) -> FloatArray:
        """
        Color at the local plane coordinates (x, y).

        :param x: Horizontal offsets from the layer centre, shape (N,).
        :type x: FloatArray

        :param y: Vertical offsets from the layer centre, shape (N,).
        :type y: FloatArray

        :return: Colors in [0, 1], shape (N, 3).
        :rtype: FloatArray
        """
        raise NotImplementedError


@dataclass(frozen=True, slots=True)
class SolidTexture(Texture):
    color: Color = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        _validate_color("color", self.color)

    def evaluate(self, x: FloatArray, y: FloatArray) -> FloatArray:
        return np.broadcast_to(np.asarray(self.color, dtype=np.float64), (np.shape(x)[0], 3)).copy()


@dataclass(frozen=True, slots=True)
class CheckerTexture(Texture):
    """
    Two-color checkerboard with frequency cells per scene unit, shifted by phase cells along both axes.
    """

    color_a: Color = (0.9, 0.9, 0.9)
    color_b: Color = (0.1, 0.1, 0.1)
    frequency: float = 4.0
    phase: float = 0.0

    def __post_init__(self) -> None:
        _validate_color("color_a", self.color_a)
        _validate_color("color_b", self.color_b)
        _validate_positive("frequency", self.frequency)
        _validate_finite("phase", self.phase)

    def evaluate(self, x: FloatArray, y: FloatArray) -> FloatArray:
        cells = np.floor(x * self.frequency + self.phase) + np.floor(y * self.frequency + self.phase)
        odd = (cells.astype(np.int64) % 2 == 1)[:, None]
        return np.where(odd, np.asarray(self.color_b), np.asarray(self.color_a))


@dataclass(frozen=True, slots=True)
class GradientTexture(Texture):
    """
    Smooth sinusoidal blend between two colors along x, frequency periods per scene unit, shifted by phase radians.
    """

    start: Color = (0.9, 0.2, 0.1)
    end: Color = (0.1, 0.3, 0.9)
    frequency: float = 1.0
    phase: float = 0.0

    def __post_init__(self) -> None:
        _validate_color("start", self.start)
        _validate_color("end", self.end)
        _validate_positive("frequency", self.frequency)
        _validate_finite("phase", self.phase)

    def evaluate(self, x: FloatArray, y: FloatArray) -> FloatArray:
        blend = 0.5 + 0.5 * np.sin(2.0 * math.pi * self.frequency * x + self.phase)
        start = np.asarray(self.start)
        return start + blend[:, None] * (np.asarray(self.end) - start)


@dataclass(frozen=True, slots=True)
class Layer:
    """
    Emissive fronto-parallel rectangle, a slab of constant density between the world planes z = depth and
    z = depth + thickness.

    Attributes:
        depth (float): World z of the front face.

        center (tuple[float, float]): World (x, y) of the rectangle's centre.

        half_extent (tuple[float, float]): Half width and half height of the rectangle.

        texture (Texture): Emission pattern over the rectangle.

        density (float): Density σ inside the slab. The default makes the slab opaque to within 1e-20.

        thickness (float): Extent of the slab along z.
    """

    depth: float
    center: tuple[float, float] = (0.0, 0.0)
    half_extent: tuple[float, float] = (1.0, 1.0)
    texture: Texture = CheckerTexture()
    density: float = 1000.0
    thickness: float = 0.05

    def __post_init__(self) -> None:
        _validate_positive("depth", self.depth)
        _validate_finite("center", self.center)
        _validate_positive("half_extent", self.half_extent)
        _validate_positive("density", self.density)
        _validate_positive("thickness", self.thickness)

    def contains(self, points: FloatArray) -> np.ndarray:
        """
        Mask of the points, shape (..., 3), that lie inside the slab.
        """
        x, y, z = points[..., 0], points[..., 1], points[..., 2]
        return (
            (np.abs(x - self.center[0]) <= self.half_extent[0])
            & (np.abs(y - self.center[1]) <= self.half_extent[1])
            & (z >= self.depth)
            & (z <= self.depth + self.thickness)
        )

    def color_at(self, points: FloatArray) -> FloatArray:
        flat = points.reshape(-1, 3)
        colors = self.texture.evaluate(flat[:, 0] - self.center[0], flat[:, 1] - self.center[1])
        return colors.reshape(points.shape[:-1] + (3,))


@dataclass(frozen=True, slots=True)
class LayerHits:
    """
    Where a batch of rays crosses one layer.

    Attributes:
        entry (FloatArray): Ray distance to the front face, shape (R,).

        path (FloatArray): Distance travelled inside the slab, shape (R,).

        hit (np.ndarray): Whether the front face point lies on the rectangle, shape (R,).

        color (FloatArray): Emission at the front face point, shape (R, 3).
    """

    entry: FloatArray
    path: FloatArray
    hit: np.ndarray
    color: FloatArray


@dataclass(frozen=True, slots=True)
class AnalyticScene:
    """
    Stack of layers with known geometry, rendered without any learned field.

    Attributes:
        layers (tuple[Layer, ...]): Layers, at pairwise distinct depths inside (near, far). May be empty.

        near (float): Near sampling bound of cameras looking at the scene.

        far (float): Far sampling bound of cameras looking at the scene.

        name (str): Preset or file name of the scene.
    """

    layers: tuple[Layer, ...]
    near: float = 0.5
    far: float = 4.0
    name: str = "custom"

    def __post_init__(self) -> None:
        _validate_positive("near", self.near)
        if not self.near < self.far:
            raise DomainError(f"near must be below far, got {self.near} and {self.far}.")
        depths = [layer.depth for layer in self.layers]
        if len(set(depths)) != len(depths):
            raise DomainError(f"Layer depths must be distinct, got {depths}.")
        for depth in depths:
            if not self.near < depth < self.far:
                raise DomainError(f"Layer depth {depth} lies outside ({self.near}, {self.far}).")

    @property
    def centroid(self) -> FloatArray:
        """
        Mean of the layer centres, the point every generated camera looks at.
        """
        if not self.layers:
            return np.array((0.0, 0.0, 0.5 * (self.near + self.far)))
        return np.mean([(layer.center[0], layer.center[1], layer.depth) for layer in self.layers], axis=0)

    def hits(self, rays: RayBundle) -> tuple[LayerHits, ...]:
        """
        Intersections of the rays with every layer, in layer order.

        :raises DomainError: If a ray doesn't travel towards +z, where the layers face.
        """
        dz = rays.directions[:, 2]
        if np.any(dz <= 0.0):
            raise DomainError("Every ray must travel towards +z to meet fronto-parallel layers.")
        result: list[LayerHits] = []
        for layer in self.layers:
            entry = (layer.depth - rays.origins[:, 2]) / dz
            front = rays.origins + entry[:, None] * rays.directions
            hit = (
                (entry > 0.0)
                & (np.abs(front[:, 0] - layer.center[0]) <= layer.half_extent[0])
                & (np.abs(front[:, 1] - layer.center[1]) <= layer.half_extent[1])
            )
            result.append(LayerHits(entry, layer.thickness / dz, hit, layer.color_at(front)))
        return tuple(result)

    def density_and_color(self, points: FloatArray) -> tuple[FloatArray, FloatArray]:
        """
        Density and emission of the scene at arbitrary points, shape (..., 3).

        :return: Density, shape (...), and color, shape (..., 3). Empty space is black with zero density.
        :rtype: tuple[FloatArray, FloatArray]
        """
        density = np.zeros(points.shape[:-1], dtype=np.float64)
        color = np.zeros(points.shape, dtype=np.float64)
        for layer in self.layers:
            inside = layer.contains(points)
            density = np.where(inside, density + layer.density, density)
            color = np.where(inside[..., None], layer.color_at(points), color)
        return density, color


def recovery_scene() -> AnalyticScene:
    """
    Two checker layers at depths 1 and 3: a foreground card covering the left of the view in front of a wall.
    """
    foreground = Layer(1.0, (-0.2, 0.0), (0.25, 0.3), CheckerTexture((0.95, 0.85, 0.2), (0.1, 0.1, 0.4), 10.0))
    background = Layer(3.0, (0.0, 0.0), (2.0, 2.0), CheckerTexture((0.85, 0.85, 0.85), (0.2, 0.05, 0.05), 3.0, 0.5))
    return AnalyticScene((foreground, background), 0.5, 4.0, "recovery")


def point_light_scene() -> AnalyticScene:
    """
    A small bright square in front of a dark backdrop, whose defocused image shows the aperture shape.
    """
    light = Layer(1.0, (0.0, 0.0), (0.01, 0.01), SolidTexture((1.0, 1.0, 1.0)))
    backdrop = Layer(3.0, (0.0, 0.0), (3.0, 3.0), SolidTexture((0.02, 0.02, 0.02)))
    return AnalyticScene((light, backdrop), 0.5, 4.0, "point_light")


SCENE_PRESETS: immutabledict[str, Callable[[], AnalyticScene]] = immutabledict({
    "recovery": recovery_scene,
    "point_light": point_light_scene,
})


def scene_preset(name: str) -> AnalyticScene:
    """
    :raises DomainError: If no preset has the given name.
    """
    if name not in SCENE_PRESETS:
        raise DomainError(f"Unknown scene preset {name!r}, expected one of {sorted(SCENE_PRESETS)}.")
    return SCENE_PRESETS[name]()
