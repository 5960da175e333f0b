from __future__ import annotations

import math
from dataclasses import dataclass
from enum import StrEnum

import numpy as np
from scipy.special import expit

from core.errors import DomainError
from core.validation import ArrayLike, _scalar_or_array

# Lower bound of the scatter kernel's area term, keeps in-focus weights finite.
KERNEL_AREA_OFFSET: float = 0.2
# Slope of the logistic disc edge.
KERNEL_EDGE_SLOPE: float = 8.0


class ApertureKind(StrEnum):
    CIRCULAR = "circular"
    POLYGONAL = "polygonal"


@dataclass(frozen=True, slots=True)
class ApertureShape:
    """
    Shape of the lens aperture, which is the shape defocused highlights take.

    Attributes:
        kind (ApertureKind): Circular, or polygonal with straight blades.

        blade_count (int | None): Number of blades n, at least 3. Only used by polygonal apertures.

        rotation (float): Rotation φ of the polygon in radians. Only used by polygonal apertures.
    """

    kind: ApertureKind = ApertureKind.CIRCULAR
    blade_count: int | None = None
    rotation: float = 0.0

    def __post_init__(self) -> None:
        if self.kind is ApertureKind.POLYGONAL and (self.blade_count is None or self.blade_count < 3):
            raise DomainError(f"A polygonal aperture needs at least 3 blades, got {self.blade_count}.")
        if not math.isfinite(self.rotation):
            raise DomainError(f"rotation must be finite, got {self.rotation}.")

    @classmethod
    def circular(cls) -> ApertureShape:
        return cls(ApertureKind.CIRCULAR)

    @classmethod
    def polygonal(cls, blade_count: int, rotation: float = 0.0) -> ApertureShape:
        return cls(ApertureKind.POLYGONAL, blade_count, rotation)

    @classmethod
    def from_blades(cls, blade_count: int | None, rotation: float = 0.0) -> ApertureShape:
        """
        Builds the shape from command-line style arguments, where a missing or zero blade count means circular.
        """
        if not blade_count:
            return cls.circular()
        return cls.polygonal(blade_count, rotation)

    def radius_factor(self, dx: ArrayLike, dy: ArrayLike) -> ArrayLike:
        """
        Scale applied to a scatter radius in the direction of the pixel offset (dx, dy).

        :return: 1 for circular apertures, the polygon factor otherwise.
        :rtype: ArrayLike
        """
        if self.kind is ApertureKind.CIRCULAR:
            return _scalar_or_array(np.ones(np.broadcast(np.asarray(dx), np.asarray(dy)).shape))
        assert self.blade_count is not None
        return polygon_factor(self.blade_count, self.rotation, dx, dy)


def scatter_weight(radius: ArrayLike, distance: ArrayLike) -> ArrayLike:
    """
    Soft circle-of-confusion kernel expit(8(r − l)) / (r² + 0.2), the same as (0.5 + 0.5·tanh(4(r − l))) / (r² + 0.2).

    The logistic edge replaces a hard inside-the-disc indicator so the weight is smooth in the radius, and the division
    spreads a source's radiance evenly over its disc area. The edge stays positive far outside the disc.

    :param radius: Scatter radius r in pixels.
    :type radius: ArrayLike

    :param distance: Distance l in pixels between the source pixel and the receiving pixel.
    :type distance: ArrayLike

    :return: Strictly positive weight, decreasing in the distance.
    :rtype: ArrayLike
    """
    r = np.asarray(radius, dtype=np.float64)
    l = np.asarray(distance, dtype=np.float64)
    edge = expit(KERNEL_EDGE_SLOPE * (r - l))
    return _scalar_or_array(edge / (r * r + KERNEL_AREA_OFFSET))


def scatter_weight_derivative(radius: ArrayLike, distance: ArrayLike) -> ArrayLike:
    """
    Partial derivative of :func:`scatter_weight` with respect to the radius.

    :return: d w / d r, broadcast over the inputs.
    :rtype: ArrayLike
    """
    r = np.asarray(radius, dtype=np.float64)
    l = np.asarray(distance, dtype=np.float64)
    x = KERNEL_EDGE_SLOPE * (r - l)
    edge = expit(x)
    # s·(1 − s) as expit(x)·expit(−x), exact in both tails.
    d_edge = KERNEL_EDGE_SLOPE * edge * expit(-x)
    area = r * r + KERNEL_AREA_OFFSET
    return _scalar_or_array(d_edge / area - edge * 2.0 * r / (area * area))


def polygon_factor(blade_count: int, rotation: float, dx: ArrayLike, dy: ArrayLike) -> ArrayLike:
    """
    Radius scale k that turns a circular disc into a regular n-gon inscribed in it.

    k = sin(π/2 − π/n) / sin(π/2 − π/n + mod(|θ + φ|, 2π/n)), where θ is the direction of the offset (dx, dy). The
    angle uses atan2 so vertical offsets are handled, and a zero offset maps to 1 since the centre pixel belongs to
    every shape.

    :param blade_count: Number of polygon sides n, at least 3.
    :type blade_count: int

    :param rotation: Polygon rotation φ in radians.
    :type rotation: float

    :param dx: Horizontal pixel offset.
    :type dx: ArrayLike

    :param dy: Vertical pixel offset.
    :type dy: ArrayLike

    :return: Scale in [cos(π/n), 1], periodic in the offset direction with period 2π/n.
    :rtype: ArrayLike

    :raises DomainError: If fewer than 3 blades are requested.
    """
    if blade_count < 3:
        raise DomainError(f"blade_count must be at least 3, got {blade_count}.")
    x = np.asarray(dx, dtype=np.float64)
    y = np.asarray(dy, dtype=np.float64)
    sector = 2.0 * math.pi / blade_count
    base = 0.5 * math.pi - math.pi / blade_count
    wrapped = np.mod(np.abs(np.arctan2(y, x) + rotation), sector)
    factor = math.sin(base) / np.sin(base + wrapped)
    return _scalar_or_array(np.where((x == 0.0) & (y == 0.0), 1.0, factor))
