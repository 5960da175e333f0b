from __future__ import annotations

import math

import numpy as np

from core.parallel import map_chunks, resolve_threads, tree_reduce
from core.validation import FloatArray, _validate_non_negative, _validate_shape
from field.network import RadianceFieldParams, field_backward, field_forward
from optics.aperture import ApertureShape
from rendering.scatter import ConcentratedPatch, scatter_forward
from rendering.volume import (
    JitterSeed,
    RayBundle,
    RaySamples,
    composite_pinhole,
    concentrate,
    segment_lengths,
    segment_transparency,
    stratified_sample,
    transparency_backward,
)
from sampling.camera import CameraModel, generate_rays, pixel_grid

DEFAULT_CHUNK_SIZE: int = 256


def _field_inputs(rays: RayBundle, depths: FloatArray) -> tuple[FloatArray, FloatArray]:
    count = depths.shape[1]
    positions = rays.points(depths).reshape(-1, 3)
    directions = np.repeat(rays.directions, count, axis=0)
    return positions, directions


def sample_field(
    params: RadianceFieldParams,
    rays: RayBundle,
    n_samples: int,
    jitter_seed: JitterSeed = None,
    threads: int | None = 1,
    chunk_size: int = DEFAULT_CHUNK_SIZE
) -> RaySamples:
    """
    Evaluates the field along every ray at stratified depths.

    Depths are drawn once for the whole bundle, then rays are processed in fixed chunks on the worker pool, so the
    result doesn't depend on the thread count or the chunk size.

    :param params: Field parameters.
    :type params: RadianceFieldParams

    :param rays: Rays to sample.
    :type rays: RayBundle

    :param n_samples: Samples per ray.
    :type n_samples: int

    :param jitter_seed: Seed of the in-stratum jitter, None for stratum midpoints.
    :type jitter_seed: JitterSeed

    :return: Depths, segment lengths, colors and transparencies of every sample.
    :rtype: RaySamples
    """
    depths = stratified_sample(rays, n_samples, jitter_seed)
    deltas = segment_lengths(depths, rays.far)

    def evaluate(start: int, stop: int) -> tuple[FloatArray, FloatArray]:
        positions, directions = _field_inputs(rays[start:stop], depths[start:stop])
        output, _ = field_forward(params, positions, directions)
        return output.color.reshape(stop - start, n_samples, 3), output.density.reshape(stop - start, n_samples)

    parts = map_chunks(evaluate, len(rays), chunk_size, resolve_threads(threads))
    colors = np.concatenate([color for color, _ in parts], axis=0)
    density = np.concatenate([sigma for _, sigma in parts], axis=0)
    return RaySamples(depths, deltas, colors, segment_transparency(density, deltas), rays.far.copy())


def field_gradients(
    params: RadianceFieldParams,
    rays: RayBundle,
    samples: RaySamples,
    d_colors: FloatArray,
    d_alphas: FloatArray,
    threads: int | None = 1,
    chunk_size: int = DEFAULT_CHUNK_SIZE
) -> RadianceFieldParams:
    """
    Pulls cotangents on sample colors and transparencies back to the field parameters.

    Each chunk re-runs the forward pass to recover its activations instead of keeping them from :func:`sample_field`.
    Chunk gradients are summed with a fixed pairwise tree.

    :param samples: Output of :func:`sample_field` for the same rays.
    :type samples: RaySamples

    :param d_colors: Cotangent on the sample colors, shape (R, S, 3).
    :type d_colors: FloatArray

    :param d_alphas: Cotangent on the sample transparencies, shape (R, S).
    :type d_alphas: FloatArray

    :return: Gradient of every parameter block.
    :rtype: RadianceFieldParams
    """
    rays_count, n_samples = samples.shape
    _validate_shape("d_colors", d_colors, (rays_count, n_samples, 3))
    _validate_shape("d_alphas", d_alphas, (rays_count, n_samples))
    d_density = transparency_backward(samples, d_alphas)

    def backward(start: int, stop: int) -> RadianceFieldParams:
        positions, directions = _field_inputs(rays[start:stop], samples.depths[start:stop])
        _, cache = field_forward(params, positions, directions)
        return field_backward(params, cache, d_colors[start:stop].reshape(-1, 3), d_density[start:stop].ravel()).params

    parts = map_chunks(backward, rays_count, chunk_size, resolve_threads(threads))
    return tree_reduce(parts, lambda a, b: a + b)


def render_pinhole(
    params: RadianceFieldParams,
    rays: RayBundle,
    n_samples: int,
    threads: int | None = 1,
    chunk_size: int = DEFAULT_CHUNK_SIZE
) -> FloatArray:
    """
    Pinhole volume rendering of the rays with unjittered samples, shape (R, 3).
    """
    return composite_pinhole(sample_field(params, rays, n_samples, None, threads, chunk_size))


def render_view(
    params: RadianceFieldParams,
    camera: CameraModel,
    aperture: float = 0.0,
    focus: float = 1.0,
    shape: ApertureShape | None = None,
    gamma: float = 2.2,
    r_max: float = 12.0,
    n_samples: int = 64,
    threads: int | None = 1,
    chunk_size: int = DEFAULT_CHUNK_SIZE
) -> FloatArray:
    """
    Renders a full image with virtual optics.

    A zero aperture renders the pinhole image directly. Otherwise the image is rendered with a guard band of
    ceil(r_max) pixels, concentrated, and scattered through the requested aperture.

    :param params: Field parameters.
    :type params: RadianceFieldParams

    :param camera: Camera to render from.
    :type camera: CameraModel

    :param aperture: Aperture parameter K ≥ 0.
    :type aperture: float

    :param focus: Focus distance F, unused when the aperture is 0.
    :type focus: float

    :param shape: Aperture shape, circular when omitted.
    :type shape: ApertureShape | None

    :return: Image of shape (H, W, 3).
    :rtype: FloatArray
    """
    _validate_non_negative("aperture", aperture)
    if aperture == 0.0:
        us, vs = pixel_grid(0, 0, camera.height, camera.width)
        rays = generate_rays(camera, us, vs)
        return render_pinhole(params, rays, n_samples, threads, chunk_size).reshape(camera.height, camera.width, 3)

    guard = math.ceil(r_max)
    rows, cols = camera.height + 2 * guard, camera.width + 2 * guard
    us, vs = pixel_grid(-guard, -guard, rows, cols)
    rays = generate_rays(camera, us, vs)
    concentration = concentrate(sample_field(params, rays, n_samples, None, threads, chunk_size))
    patch = ConcentratedPatch(concentration.radiance.reshape(rows, cols, 3), concentration.depth.reshape(rows, cols), guard)
    return scatter_forward(patch, aperture, focus, shape or ApertureShape.circular(), gamma, r_max)
