from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import numpy.typing as npt

from core.errors import DomainError, InvariantViolation, ShapeMismatchError
from core.validation import FloatArray, _validate_non_negative, _validate_positive, _validate_shape
from optics.aperture import ApertureShape, scatter_weight, scatter_weight_derivative

# Floor of the normalized radiance when differentiating the inverse gamma at black pixels.
GAMMA_FLOOR: float = 1e-12


@dataclass(frozen=True, slots=True)
class ConcentratedPatch:
    """
    A rectangle of concentrated rays, with a guard band around the supervised interior.

    Attributes:
        radiance (FloatArray): Concentrated radiance per pixel, shape (H, W, 3), non-negative.

        depth (FloatArray): Concentration depth per pixel, shape (H, W), positive.

        guard (int): Width of the border that only emits light into the interior and is never supervised.
    """

    radiance: FloatArray
    depth: FloatArray
    guard: int

    def __post_init__(self) -> None:
        if self.radiance.ndim != 3 or self.radiance.shape[2] != 3:
            raise ShapeMismatchError(f"radiance must have shape (H, W, 3), got {self.radiance.shape}.")
        _validate_shape("depth", self.depth, self.radiance.shape[:2])
        height, width = self.depth.shape
        if self.guard < 0 or 2 * self.guard >= min(height, width):
            raise DomainError(f"guard {self.guard} leaves no interior in a {height}x{width} patch.")

    @property
    def interior_shape(self) -> tuple[int, int]:
        height, width = self.depth.shape
        return height - 2 * self.guard, width - 2 * self.guard

    @property
    def interior(self) -> tuple[slice, slice]:
        rows, cols = self.interior_shape
        return slice(self.guard, self.guard + rows), slice(self.guard, self.guard + cols)


@dataclass(frozen=True, slots=True)
class ScatterAccumulators:
    """
    Gathered buffers of the pixel-wise scatter, one entry per interior pixel.

    Attributes:
        weight (FloatArray): W, the sum of the kernel weights received, shape (h, w).

        radiance (FloatArray): I, the sum of weighted linear radiance received, shape (h, w, 3).
    """

    weight: FloatArray
    radiance: FloatArray


@dataclass(frozen=True, slots=True)
class ScatterResult:
    """
    Output of :func:`render_scatter` together with what :func:`scatter_backward` needs.

    Attributes:
        image (FloatArray): Rendered interior, shape (h, w, 3).

        accumulators (ScatterAccumulators | None): W and I buffers, None when the window collapsed to the pixel itself.

        normalized (FloatArray): Linear result B = I / W before the inverse gamma, shape (h, w, 3).

        linear (FloatArray): Gamma-encoded radiance of the whole patch, shape (H, W, 3).

        radius (FloatArray): Clamped scatter radius per pixel, shape (H, W).

        window (int): Half-size of the square neighbourhood every output pixel gathers from.
    """

    image: FloatArray
    accumulators: ScatterAccumulators | None
    normalized: FloatArray
    linear: FloatArray
    radius: FloatArray
    window: int


def gamma_encode(image: FloatArray, gamma: float) -> FloatArray:
    """
    Elementwise power image^γ, taking stored radiance to linear space.

    :raises DomainError: If γ is not positive or some pixel is negative.
    """
    _validate_positive("gamma", gamma)
    _validate_non_negative("image", image)
    if gamma == 1.0:
        return np.array(image, dtype=np.float64)
    return np.power(image, gamma)


def gamma_decode(image: FloatArray, gamma: float) -> FloatArray:
    """
    Elementwise power image^(1/γ), the inverse of :func:`gamma_encode`.

    :raises DomainError: If γ is not positive or some pixel is negative.
    """
    _validate_positive("gamma", gamma)
    _validate_non_negative("image", image)
    if gamma == 1.0:
        return np.array(image, dtype=np.float64)
    return np.power(image, 1.0 / gamma)


def scatter_radius(depth: FloatArray, aperture: float, focus: float, r_max: float) -> tuple[FloatArray, FloatArray, npt.NDArray[np.bool_]]:
    """
    Scatter radius r = |K·(1/h_c − 1/F)| / 2 clamped to r_max.

    :return: The clamped radius, the defocus factor 1/h_c − 1/F, and the mask of pixels below the clamp.
    :rtype: tuple[FloatArray, FloatArray, npt.NDArray[np.bool_]]
    """
    defocus = 1.0 / depth - 1.0 / focus
    half = aperture * np.abs(defocus) / 2.0
    unclamped = half < r_max
    return np.minimum(half, r_max), defocus, unclamped


@lru_cache(maxsize=64)
def _offsets(window: int, shape: ApertureShape) -> tuple[tuple[int, int, float, float], ...]:
    """
    Row-major list of (dy, dx, distance, radius factor) over the square neighbourhood of half-size window.
    """
    entries: list[tuple[int, int, float, float]] = []
    for dy in range(-window, window + 1):
        for dx in range(-window, window + 1):
            entries.append((dy, dx, math.hypot(dx, dy), float(shape.radius_factor(dx, dy))))
    return tuple(entries)


def scatter_window(radius: FloatArray, guard: int, r_max: float) -> int:
    """
    Half-size of the gather neighbourhood for a patch.

    The neighbourhood is ceil(r_max) whenever some pixel that can reach the interior has a non-zero radius, and 0
    otherwise, in which case every pixel keeps exactly its own radiance.

    :raises DomainError: If the guard band is narrower than ceil(r_max).
    """
    reach = math.ceil(r_max)
    if guard < reach:
        raise DomainError(f"guard {guard} is narrower than ceil(r_max) = {reach}.")
    height, width = radius.shape
    region = radius[guard - reach:height - guard + reach, guard - reach:width - guard + reach]
    return reach if bool(np.any(region > 0.0)) else 0


def _source(guard: int, dy: int, dx: int, rows: int, cols: int) -> tuple[slice, slice]:
    return slice(guard - dy, guard - dy + rows), slice(guard - dx, guard - dx + cols)


def _validate_scatter_args(aperture: float, focus: float, gamma: float, r_max: float) -> None:
    _validate_non_negative("aperture", aperture)
    _validate_positive("focus", focus)
    _validate_positive("gamma", gamma)
    _validate_positive("r_max", r_max)


def _gather(linear: FloatArray, radius: FloatArray, guard: int, window: int, shape: ApertureShape) -> ScatterAccumulators:
    rows, cols = radius.shape[0] - 2 * guard, radius.shape[1] - 2 * guard
    weight_sum = np.zeros((rows, cols), dtype=np.float64)
    radiance_sum = np.zeros((rows, cols, 3), dtype=np.float64)
    for dy, dx, distance, factor in _offsets(window, shape):
        src = _source(guard, dy, dx, rows, cols)
        w = scatter_weight(factor * radius[src], distance)
        weight_sum += w
        radiance_sum += w[..., None] * linear[src]
    if not np.all(weight_sum > 0.0):
        raise InvariantViolation("An interior pixel received zero scatter weight.")
    return ScatterAccumulators(weight_sum, radiance_sum)


def render_scatter(
    patch: ConcentratedPatch,
    aperture: float,
    focus: float,
    shape: ApertureShape,
    gamma: float,
    r_max: float
) -> ScatterResult:
    """
    Pixel-wise concentrate-and-scatter rendering of a patch, keeping the intermediate buffers.

    Radiance is gamma-encoded to linear space, every pixel spreads it over its circle of confusion with the soft
    kernel, the gathered buffers are normalized B = I / W, and the inverse gamma is applied. The scatter is computed
    as a gather: each interior pixel sums the weights its neighbours send it, which visits the same ordered pairs.

    :param patch: Concentrated radiance and depth with a guard band of at least ceil(r_max).
    :type patch: ConcentratedPatch

    :param aperture: Aperture parameter K ≥ 0.
    :type aperture: float

    :param focus: Focus distance F > 0.
    :type focus: float

    :param shape: Aperture shape, circular or polygonal.
    :type shape: ApertureShape

    :param gamma: Gamma γ > 0 of the stored radiance.
    :type gamma: float

    :param r_max: Radius clamp in pixels.
    :type r_max: float

    :return: The rendered interior and the buffers of the forward pass.
    :rtype: ScatterResult

    :raises DomainError: On invalid optics or a guard band narrower than ceil(r_max).
    :raises InvariantViolation: If an interior pixel ends with zero accumulated weight.
    """
    _validate_scatter_args(aperture, focus, gamma, r_max)
    _validate_positive("depth", patch.depth)
    linear = gamma_encode(patch.radiance, gamma)
    radius, _, _ = scatter_radius(patch.depth, aperture, focus, r_max)
    window = scatter_window(radius, patch.guard, r_max)

    if window == 0:
        normalized = linear[patch.interior].copy()
        return ScatterResult(gamma_decode(normalized, gamma), None, normalized, linear, radius, 0)

    accumulators = _gather(linear, radius, patch.guard, window, shape)
    normalized = accumulators.radiance / accumulators.weight[..., None]
    return ScatterResult(
        image=gamma_decode(normalized, gamma),
        accumulators=accumulators,
        normalized=normalized,
        linear=linear,
        radius=radius,
        window=window,
    )


def scatter_forward(
    patch: ConcentratedPatch,
    aperture: float,
    focus: float,
    shape: ApertureShape,
    gamma: float,
    r_max: float
) -> FloatArray:
    """
    Renders the interior of a concentrated patch with the given virtual optics.

    See :func:`render_scatter` for the algorithm.

    :return: Interior image, shape (H − 2·guard, W − 2·guard, 3).
    :rtype: FloatArray
    """
    return render_scatter(patch, aperture, focus, shape, gamma, r_max).image


@dataclass(frozen=True, slots=True)
class ScatterGradients:
    """
    Cotangents produced by :func:`scatter_backward`.

    Attributes:
        radiance (FloatArray): On the concentrated radiance of every patch pixel, shape (H, W, 3).

        depth (FloatArray): On the concentration depth of every patch pixel, shape (H, W).

        aperture (float): On the aperture parameter K.

        focus (float): On the focus distance F.
    """

    radiance: FloatArray
    depth: FloatArray
    aperture: float
    focus: float


def _decode_cotangent(d_image: FloatArray, normalized: FloatArray, gamma: float) -> FloatArray:
    if gamma == 1.0:
        return d_image
    return d_image * np.power(np.maximum(normalized, GAMMA_FLOOR), 1.0 / gamma - 1.0) / gamma


def _gather_backward(
    d_normalized: FloatArray,
    normalized: FloatArray,
    accumulators: ScatterAccumulators,
    linear: FloatArray,
    radius: FloatArray,
    guard: int,
    window: int,
    shape: ApertureShape
) -> tuple[FloatArray, FloatArray]:
    rows, cols = accumulators.weight.shape
    d_linear = np.zeros_like(linear)
    d_radius = np.zeros_like(radius)
    d_radiance_sum = d_normalized / accumulators.weight[..., None]
    d_weight_sum = -np.sum(d_normalized * normalized, axis=-1) / accumulators.weight
    for dy, dx, distance, factor in _offsets(window, shape):
        src = _source(guard, dy, dx, rows, cols)
        scaled = factor * radius[src]
        w = scatter_weight(scaled, distance)
        d_linear[src] += w[..., None] * d_radiance_sum
        d_w = np.sum(d_radiance_sum * linear[src], axis=-1) + d_weight_sum
        d_radius[src] += d_w * factor * scatter_weight_derivative(scaled, distance)
    return d_linear, d_radius


def scatter_backward(
    patch: ConcentratedPatch,
    aperture: float,
    focus: float,
    shape: ApertureShape,
    gamma: float,
    r_max: float,
    d_image: FloatArray,
    result: ScatterResult | None = None
) -> ScatterGradients:
    """
    Exact reverse-mode pass of :func:`render_scatter`.

    Cotangents flow through the inverse gamma, the normalization, both factors of the soft kernel, the radius law and
    the forward gamma. Pixels clamped at r_max receive no radius gradient.

    At K = 0 the forward pass is the identity, which the kernel only reaches in the limit of a vanishing edge. The
    radiance and depth cotangents are those of the identity, and the cotangent on K is the right-hand derivative, taken
    through the gather over zero radii.

    :param d_image: Cotangent on the rendered interior.
    :type d_image: FloatArray

    :param result: Output of the forward pass with the same arguments. Recomputed when omitted.
    :type result: ScatterResult | None

    :return: Cotangents on per-pixel radiance and depth, and on K and F.
    :rtype: ScatterGradients

    :raises ShapeMismatchError: If the cotangent doesn't match the interior shape.
    """
    if result is None:
        result = render_scatter(patch, aperture, focus, shape, gamma, r_max)
    rows, cols = patch.interior_shape
    _validate_shape("d_image", d_image, (rows, cols, 3))
    d_normalized = _decode_cotangent(d_image, result.normalized, gamma)
    _, defocus, unclamped = scatter_radius(patch.depth, aperture, focus, r_max)

    if result.accumulators is not None:
        d_linear, d_radius = _gather_backward(d_normalized, result.normalized, result.accumulators, result.linear,
                                              result.radius, patch.guard, result.window, shape)
    else:
        d_linear = np.zeros_like(result.linear)
        d_linear[patch.interior] = d_normalized
        d_radius = np.zeros_like(result.radius)
        if aperture == 0.0 and bool(np.any(defocus != 0.0)):
            window = math.ceil(r_max)
            limit = _gather(result.linear, result.radius, patch.guard, window, shape)
            limit_normalized = limit.radiance / limit.weight[..., None]
            _, d_radius = _gather_backward(_decode_cotangent(d_image, limit_normalized, gamma), limit_normalized, limit,
                                           result.linear, result.radius, patch.guard, window, shape)

    d_radius = np.where(unclamped, d_radius, 0.0)
    # r = K·|a|/2 with K ≥ 0, so dr/dK = |a|/2 holds at K = 0 as well.
    d_aperture = float(np.sum(d_radius * np.abs(defocus)) / 2.0)
    d_defocus = d_radius * aperture * np.sign(defocus) / 2.0
    d_focus = float(np.sum(d_defocus) / (focus * focus))
    d_depth = -d_defocus / (patch.depth * patch.depth)

    if gamma == 1.0:
        d_radiance = d_linear
    else:
        base = patch.radiance
        d_radiance = np.where(base > 0.0, d_linear * gamma * np.power(np.where(base > 0.0, base, 1.0), gamma - 1.0), 0.0)
    return ScatterGradients(d_radiance, d_depth, d_aperture, d_focus)
