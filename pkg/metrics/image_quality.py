from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from skimage.metrics import structural_similarity

from core.errors import DomainError
from core.validation import FloatArray, _validate_positive, _validate_shape

SSIM_WINDOW: int = 11
SSIM_SIGMA: float = 1.5
SSIM_K1: float = 0.01
SSIM_K2: float = 0.03
LUMA_WEIGHTS: tuple[float, float, float] = (0.299, 0.587, 0.114)


def psnr(a: FloatArray, b: FloatArray, peak: float = 1.0) -> float:
    """
    Peak signal-to-noise ratio 10·log10(peak² / MSE) in decibels.

    :return: The ratio, math.inf for identical images.
    :rtype: float

    :raises ShapeMismatchError: If the images differ in shape.
    :raises DomainError: If the peak is not positive.
    """
    _validate_shape("b", b, a.shape)
    _validate_positive("peak", peak)
    mse = float(np.mean(np.square(np.asarray(a, dtype=np.float64) - b)))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def luma(image: FloatArray) -> FloatArray:
    """
    Luma of an (H, W, 3) image, or the image itself when it is already (H, W).
    """
    if image.ndim == 2:
        return np.asarray(image, dtype=np.float64)
    return image @ np.asarray(LUMA_WEIGHTS)


def ssim(a: FloatArray, b: FloatArray, dynamic_range: float = 1.0) -> float:
    """
    Mean structural similarity of the luma of two images.

    Local statistics use an 11x11 Gaussian window with σ = 1.5 and population covariances, with stabilizers
    C1 = (0.01·L)² and C2 = (0.03·L)², averaged over every position where the window fits.

    :param a: First image, (H, W, 3) or (H, W).
    :type a: FloatArray

    :param b: Second image, same shape.
    :type b: FloatArray

    :param dynamic_range: Value range L of the pixels.
    :type dynamic_range: float

    :return: SSIM in [−1, 1], exactly 1 for identical images.
    :rtype: float

    :raises ShapeMismatchError: If the images differ in shape.
    :raises DomainError: If the images are smaller than the window or the range isn't positive.
    """
    _validate_shape("b", b, a.shape)
    _validate_positive("dynamic_range", dynamic_range)
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise DomainError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {a.shape[:2]}.")
    return float(structural_similarity(
        luma(a), luma(b),
        win_size=SSIM_WINDOW, gaussian_weights=True, sigma=SSIM_SIGMA, use_sample_covariance=False,
        K1=SSIM_K1, K2=SSIM_K2, data_range=dynamic_range,
    ))


@dataclass(frozen=True, slots=True)
class ViewScore:
    view: int
    psnr: float
    ssim: float


def evaluate_images(renders: Sequence[FloatArray], truths: Sequence[FloatArray], views: Sequence[int] | None = None) -> tuple[ViewScore, ...]:
    """
    PSNR and SSIM of every render against its reference.

    :raises DomainError: If the sequences differ in length or are empty.
    """
    if len(renders) != len(truths) or not renders:
        raise DomainError(f"Need matching, non-empty image lists, got {len(renders)} renders and {len(truths)} references.")
    indices = list(views) if views is not None else list(range(len(renders)))
    return tuple(ViewScore(index, psnr(render, truth), ssim(render, truth)) for index, render, truth in zip(indices, renders, truths))


def mean_score(scores: Sequence[ViewScore]) -> tuple[float, float]:
    """
    Arithmetic means of PSNR and SSIM. The PSNR mean is infinite when some view is a perfect match.
    """
    return float(np.mean([score.psnr for score in scores])), float(np.mean([score.ssim for score in scores]))
