from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from core.errors import DomainError
from core.validation import FloatArray, _validate_shape, _validate_unit_vectors

# Rays whose total volume coefficient is below this emit nothing and concentrate at the far bound.
EMPTY_RAY_EPSILON: float = 1e-8
# Segment lengths are kept strictly positive.
MIN_SEGMENT: float = 1e-10

type JitterSeed = int | Sequence[int] | None


@dataclass(frozen=True, slots=True)
class Ray:
    """
    A single camera ray r(h) = o + h·d.

    Attributes:
        origin (FloatArray): Camera centre o, shape (3,).

        direction (FloatArray): Unit direction d, shape (3,).

        near (float): Depth where sampling starts.

        far (float): Depth where sampling ends.

        pixel (tuple[int, int]): (u, v) coordinates on the source image. May lie outside it for guard rays.
    """

    origin: FloatArray
    direction: FloatArray
    near: float
    far: float
    pixel: tuple[int, int]

    def __post_init__(self) -> None:
        if not self.near < self.far:
            raise DomainError(f"Ray bounds must satisfy near < far, got {self.near} and {self.far}.")
        _validate_unit_vectors("direction", self.direction[None, :])


@dataclass(frozen=True, slots=True)
class RayBundle:
    """
    A batch of rays stored as parallel arrays, the layout every renderer works with.

    Attributes:
        origins (FloatArray): Shape (R, 3).

        directions (FloatArray): Unit directions, shape (R, 3).

        near (FloatArray): Shape (R,).

        far (FloatArray): Shape (R,).

        pixels (npt.NDArray[np.int64]): (u, v) per ray, shape (R, 2).
    """

    origins: FloatArray
    directions: FloatArray
    near: FloatArray
    far: FloatArray
    pixels: npt.NDArray[np.int64]

    def __post_init__(self) -> None:
        count = self.origins.shape[0]
        _validate_shape("origins", self.origins, (count, 3))
        _validate_shape("directions", self.directions, (count, 3))
        _validate_shape("near", self.near, (count,))
        _validate_shape("far", self.far, (count,))
        _validate_shape("pixels", self.pixels, (count, 2))
        if np.any(self.near >= self.far):
            raise DomainError("Every ray must satisfy near < far.")

    def __len__(self) -> int:
        return self.origins.shape[0]

    def __getitem__(self, index: slice | npt.NDArray[np.int64]) -> RayBundle:
        return RayBundle(self.origins[index], self.directions[index], self.near[index], self.far[index], self.pixels[index])

    @classmethod
    def of_rays(cls, rays: Sequence[Ray]) -> RayBundle:
        return cls(
            np.array([ray.origin for ray in rays], dtype=np.float64).reshape(-1, 3),
            np.array([ray.direction for ray in rays], dtype=np.float64).reshape(-1, 3),
            np.array([ray.near for ray in rays], dtype=np.float64),
            np.array([ray.far for ray in rays], dtype=np.float64),
            np.array([ray.pixel for ray in rays], dtype=np.int64).reshape(-1, 2),
        )

    def points(self, depths: FloatArray) -> FloatArray:
        """
        Positions o + h·d of the given per-ray depths, shape (R, S, 3).
        """
        return self.origins[:, None, :] + depths[..., None] * self.directions[:, None, :]


@dataclass(frozen=True, slots=True)
class RaySamples:
    """
    Field values sampled along a batch of rays.

    Attributes:
        depths (FloatArray): Ascending sample depths h_i, shape (R, S).

        deltas (FloatArray): Segment lengths Δ_i > 0, shape (R, S). The last segment ends at the far bound.

        colors (FloatArray): Sample colors c_i, shape (R, S, 3).

        alphas (FloatArray): Segment transparencies α_i, shape (R, S).

        far (FloatArray): Far bound of each ray, shape (R,), where empty rays concentrate.
    """

    depths: FloatArray
    deltas: FloatArray
    colors: FloatArray
    alphas: FloatArray
    far: FloatArray

    def __post_init__(self) -> None:
        rays, count = self.depths.shape
        _validate_shape("deltas", self.deltas, (rays, count))
        _validate_shape("colors", self.colors, (rays, count, 3))
        _validate_shape("alphas", self.alphas, (rays, count))
        _validate_shape("far", self.far, (rays,))

    @property
    def shape(self) -> tuple[int, int]:
        return self.depths.shape  # type: ignore[return-value]


@dataclass(frozen=True, slots=True)
class Concentration:
    """
    Radiance of each ray collapsed onto a single depth.

    Attributes:
        radiance (FloatArray): Accumulated radiance Σ K_volume,i·c_i, shape (R, 3). Area normalization happens in the
         scatter step.

        depth (FloatArray): Concentration depth h_c, shape (R,). The far bound for empty rays.

        weight (FloatArray): Total volume coefficient Σ K_volume,i, shape (R,).
    """

    radiance: FloatArray
    depth: FloatArray
    weight: FloatArray

    @property
    def empty(self) -> npt.NDArray[np.bool_]:
        return self.weight < EMPTY_RAY_EPSILON


def stratified_sample(rays: Ray | RayBundle, n_samples: int, jitter_seed: JitterSeed = None) -> FloatArray:
    """
    Draws one depth per equal stratum of [near, far] along every ray.

    :param rays: A single ray or a bundle.
    :type rays: Ray | RayBundle

    :param n_samples: Number of strata N_s, at least 2.
    :type n_samples: int

    :param jitter_seed: Seed of the uniform draw inside each stratum. None disables jitter and returns midpoints.
    :type jitter_seed: JitterSeed

    :return: Ascending depths, shape (R, N_s), or (N_s,) for a single ray.
    :rtype: FloatArray

    :raises DomainError: If fewer than 2 samples are requested.
    """
    if n_samples < 2:
        raise DomainError(f"n_samples must be at least 2, got {n_samples}.")
    single = isinstance(rays, Ray)
    near = np.atleast_1d(np.asarray(rays.near, dtype=np.float64))
    far = np.atleast_1d(np.asarray(rays.far, dtype=np.float64))
    if jitter_seed is None:
        offsets = np.broadcast_to(np.full(n_samples, 0.5), (near.shape[0], n_samples))
    else:
        offsets = np.random.default_rng(jitter_seed).random((near.shape[0], n_samples))
    stratum = (far - near)[:, None] / n_samples
    depths = near[:, None] + (np.arange(n_samples)[None, :] + offsets) * stratum
    return depths[0] if single else depths


def segment_lengths(depths: FloatArray, far: FloatArray) -> FloatArray:
    """
    Distances Δ_i = h_{i+1} − h_i, with the last segment running to the far bound.
    """
    deltas = np.concatenate([np.diff(depths, axis=-1), far[..., None] - depths[..., -1:]], axis=-1)
    return np.maximum(deltas, MIN_SEGMENT)


def segment_transparency(density: FloatArray | float, delta: FloatArray | float) -> FloatArray:
    """
    Probability α = exp(−σ·Δ) that light crosses a segment unabsorbed.

    :return: Transparency in (0, 1], monotone decreasing in the density.
    :rtype: FloatArray
    """
    return np.exp(-np.asarray(density, dtype=np.float64) * np.asarray(delta, dtype=np.float64))


def transmittance(alphas: FloatArray) -> FloatArray:
    """
    Accumulated transmittance T_i = Π_{j<i} α_j along the last axis.
    """
    leading = np.ones(alphas.shape[:-1] + (1,), dtype=np.float64)
    return np.concatenate([leading, np.cumprod(alphas, axis=-1)[..., :-1]], axis=-1)


def volume_coefficients(samples: RaySamples) -> FloatArray:
    """
    Compositing weights K_volume,i = T_i·(1 − α_i), each in [0, 1] and summing to 1 − Π α_i per ray.
    """
    return transmittance(samples.alphas) * (1.0 - samples.alphas)


def concentrate(samples: RaySamples) -> Concentration:
    """
    Collapses every ray's radiance onto its volume-coefficient weighted mean depth.

    h_c = Σ K_v,i·h_i / Σ K_v,i and C = Σ K_v,i·c_i. Rays whose total weight is below EMPTY_RAY_EPSILON emit nothing
    and concentrate at their far bound.

    :param samples: Sampled field values.
    :type samples: RaySamples

    :return: Concentrated radiance, depth and total weight per ray.
    :rtype: Concentration
    """
    weights = volume_coefficients(samples)
    total = weights.sum(axis=-1)
    empty = total < EMPTY_RAY_EPSILON
    safe_total = np.where(empty, 1.0, total)
    depth = np.where(empty, samples.far, np.sum(weights * samples.depths, axis=-1) / safe_total)
    radiance = np.where(empty[:, None], 0.0, np.einsum("rs,rsc->rc", weights, samples.colors))
    return Concentration(radiance, depth, total)


def composite_pinhole(samples: RaySamples) -> FloatArray:
    """
    Pinhole volume rendering Σ_i T_i·(1 − α_i)·c_i, shape (R, 3).

    This is the same weighted sum as the concentrated radiance, so both agree exactly.
    """
    return concentrate(samples).radiance


def concentrate_backward(samples: RaySamples, d_radiance: FloatArray, d_depth: FloatArray) -> tuple[FloatArray, FloatArray]:
    """
    Exact reverse-mode pass of :func:`concentrate`.

    :param samples: Samples the forward pass ran on.
    :type samples: RaySamples

    :param d_radiance: Cotangent on the concentrated radiance, shape (R, 3).
    :type d_radiance: FloatArray

    :param d_depth: Cotangent on the concentration depth, shape (R,).
    :type d_depth: FloatArray

    :return: Cotangents on the sample colors, shape (R, S, 3), and on the transparencies, shape (R, S).
    :rtype: tuple[FloatArray, FloatArray]

    :raises ShapeMismatchError: If a cotangent doesn't match the forward output.
    """
    rays, count = samples.shape
    _validate_shape("d_radiance", d_radiance, (rays, 3))
    _validate_shape("d_depth", d_depth, (rays,))

    alphas = samples.alphas
    trans = transmittance(alphas)
    weights = trans * (1.0 - alphas)
    total = weights.sum(axis=-1)
    live = ~(total < EMPTY_RAY_EPSILON)
    safe_total = np.where(live, total, 1.0)
    depth = np.sum(weights * samples.depths, axis=-1) / safe_total

    d_rad = np.where(live[:, None], d_radiance, 0.0)
    d_dep = np.where(live, d_depth, 0.0)
    d_colors = weights[..., None] * d_rad[:, None, :]
    d_weights = np.einsum("rc,rsc->rs", d_rad, samples.colors)
    d_weights += d_dep[:, None] * (samples.depths - depth[:, None]) / safe_total[:, None]

    # d α_j = T_j·(−dK_j + S_j) with S_j = Σ_{i>j} dK_i·(1 − α_i)·Π_{j<k<i} α_k, scanned from the back.
    d_alphas = np.empty_like(alphas)
    suffix = np.zeros(rays, dtype=np.float64)
    for j in range(count - 1, -1, -1):
        d_alphas[:, j] = trans[:, j] * (suffix - d_weights[:, j])
        suffix = d_weights[:, j] * (1.0 - alphas[:, j]) + alphas[:, j] * suffix
    return d_colors, d_alphas


def transparency_backward(samples: RaySamples, d_alphas: FloatArray) -> FloatArray:
    """
    Pulls a cotangent on α = exp(−σ·Δ) back to the density σ.
    """
    return -d_alphas * samples.deltas * samples.alphas
