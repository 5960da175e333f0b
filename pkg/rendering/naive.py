from __future__ import annotations

import math

import numpy as np

from core.errors import DomainError, InvariantViolation
from core.validation import FloatArray, _validate_non_negative, _validate_positive
from optics.aperture import ApertureShape, scatter_weight
from rendering.scatter import _offsets, _source
from rendering.volume import EMPTY_RAY_EPSILON, RaySamples, composite_pinhole, volume_coefficients


def naive_dof_render(
    samples: RaySamples,
    height: int,
    width: int,
    guard: int,
    aperture: float,
    focus: float,
    r_max: float,
    shape: ApertureShape | None = None
) -> FloatArray:
    """
    Slow reference renderer where every sample point scatters over its own circle of confusion.

    Each sample i of the ray through pixel p spreads K_volume,i·c_i with the soft kernel of its own depth's radius.
    The weight buffer receives the kernel scaled by the sample's share K_volume,i / Σ K_volume of its ray, so a ray
    whose radiance sits at a single depth contributes exactly like its concentrated counterpart. Occlusion of
    scattered light is taken as the source ray's own transmittance. Works in linear radiance, no gamma.

    :param samples: Samples of a height·width grid of rays in row-major order.
    :type samples: RaySamples

    :param height: Rows of the ray grid, guard band included.
    :type height: int

    :param width: Columns of the ray grid, guard band included.
    :type width: int

    :param guard: Border width, at least ceil(r_max).
    :type guard: int

    :param aperture: Aperture parameter K ≥ 0.
    :type aperture: float

    :param focus: Focus distance F > 0.
    :type focus: float

    :param r_max: Radius clamp in pixels.
    :type r_max: float

    :param shape: Aperture shape, circular when omitted.
    :type shape: ApertureShape | None

    :return: Rendered interior, shape (height − 2·guard, width − 2·guard, 3).
    :rtype: FloatArray
    """
    _validate_non_negative("aperture", aperture)
    _validate_positive("focus", focus)
    _validate_positive("r_max", r_max)
    shape = shape or ApertureShape.circular()
    rays, count = samples.shape
    if rays != height * width:
        raise DomainError(f"Expected {height * width} rays for a {height}x{width} grid, got {rays}.")
    reach = math.ceil(r_max)
    if guard < reach:
        raise DomainError(f"guard {guard} is narrower than ceil(r_max) = {reach}.")
    rows, cols = height - 2 * guard, width - 2 * guard

    weights = volume_coefficients(samples)
    total = weights.sum(axis=-1)
    empty = total < EMPTY_RAY_EPSILON
    share = np.where(empty[:, None], 0.0, weights / np.where(empty, 1.0, total)[:, None])
    contributions = weights[..., None] * samples.colors

    sample_radius = np.minimum(aperture * np.abs(1.0 / samples.depths - 1.0 / focus) / 2.0, r_max)
    empty_radius = np.minimum(aperture * np.abs(1.0 / samples.far - 1.0 / focus) / 2.0, r_max)

    grid = (height, width)
    share = share.reshape(grid + (count,))
    contributions = contributions.reshape(grid + (count, 3))
    sample_radius = sample_radius.reshape(grid + (count,))
    empty_radius = np.where(empty, empty_radius, 0.0).reshape(grid)
    empty_grid = empty.reshape(grid)

    active = np.where(weights.reshape(grid + (count,)) > 0.0, sample_radius, 0.0)
    region = (slice(guard - reach, height - guard + reach), slice(guard - reach, width - guard + reach))
    if not (np.any(active[region] > 0.0) or np.any(empty_radius[region] > 0.0)):
        return composite_pinhole(samples).reshape(grid + (3,))[guard:guard + rows, guard:guard + cols]

    weight_sum = np.zeros((rows, cols), dtype=np.float64)
    radiance_sum = np.zeros((rows, cols, 3), dtype=np.float64)
    for dy, dx, distance, factor in _offsets(reach, shape):
        src = _source(guard, dy, dx, rows, cols)
        w = scatter_weight(factor * sample_radius[src], distance)
        w_empty = scatter_weight(factor * empty_radius[src], distance)
        weight_sum += np.sum(share[src] * w, axis=-1) + np.where(empty_grid[src], w_empty, 0.0)
        radiance_sum += np.einsum("hws,hwsc->hwc", w, contributions[src])

    if not np.all(weight_sum > 0.0):
        raise InvariantViolation("An interior pixel received zero scatter weight.")
    return radiance_sum / weight_sum[..., None]
