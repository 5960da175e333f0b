from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from core.errors import DomainError
from core.validation import ArrayLike, _scalar_or_array, _validate_non_negative, _validate_positive


@dataclass(frozen=True, slots=True)
class LensSpec:
    """
    Physical description of a thin lens.

    Attributes:
        focal_length (float): Focal length f, in scene units. Must be positive.

        aperture_diameter (float): Aperture diameter D, in scene units. Zero is the pinhole limit.
    """

    focal_length: float
    aperture_diameter: float

    def __post_init__(self) -> None:
        _validate_positive("focal_length", self.focal_length)
        _validate_non_negative("aperture_diameter", self.aperture_diameter)

    @property
    def aperture_parameter(self) -> float:
        """
        The product f·D, the single scalar the defocus law in pixel units is driven by.
        """
        return self.focal_length * self.aperture_diameter


def signed_defocus(aperture: ArrayLike, focus: ArrayLike, depth: ArrayLike) -> ArrayLike:
    """
    Computes the signed defocus K·(1/h − 1/F).

    Points in front of the focal plane (h < F) get a positive sign, points behind it a negative one. The magnitude is
    the circle of confusion diameter in pixels.

    :param aperture: Aperture parameter K, in pixel·scene-units.
    :type aperture: ArrayLike

    :param focus: Focus distance F, in scene units.
    :type focus: ArrayLike

    :param depth: Object depth h, in scene units.
    :type depth: ArrayLike

    :return: Signed diameter in pixels, broadcast over the inputs.
    :rtype: ArrayLike

    :raises DomainError: If the focus distance or the depth is not positive.
    """
    _validate_positive("focus", focus)
    _validate_positive("depth", depth)
    k = np.asarray(aperture, dtype=np.float64)
    f = np.asarray(focus, dtype=np.float64)
    h = np.asarray(depth, dtype=np.float64)
    return _scalar_or_array(k * (1.0 / h - 1.0 / f))


def coc_diameter(aperture: ArrayLike, focus: ArrayLike, depth: ArrayLike) -> ArrayLike:
    """
    Circle of confusion diameter K·|1/F − 1/h| on the imaging plane, in pixels.

    :return: Non-negative diameter, zero exactly when the depth equals the focus distance.
    :rtype: ArrayLike

    :raises DomainError: If the focus distance or the depth is not positive.
    """
    return _scalar_or_array(np.abs(np.asarray(signed_defocus(aperture, focus, depth))))


def coc_diameter_exact(lens: LensSpec, focus: ArrayLike, depth: ArrayLike) -> ArrayLike:
    """
    Exact thin-lens circle of confusion diameter f·D·|h − F| / (h·(F − f)), in scene units.

    Derived from the Gaussian lens formula, this is the reference :func:`coc_diameter` approximates by dropping f
    against F. The relative gap between the two is f/F, below f/(F − f).

    :param lens: Lens whose focal length and aperture diameter are used.
    :type lens: LensSpec

    :param focus: Focus distance F. Must exceed the focal length.
    :type focus: ArrayLike

    :param depth: Object depth h. Must exceed the focal length.
    :type depth: ArrayLike

    :return: Diameter on the sensor in scene units.
    :rtype: ArrayLike

    :raises DomainError: If F or h don't exceed the focal length, where the lens forms no real image.
    """
    f = lens.focal_length
    focus_arr = np.asarray(focus, dtype=np.float64)
    depth_arr = np.asarray(depth, dtype=np.float64)
    if np.any(focus_arr <= f) or not np.all(np.isfinite(focus_arr)):
        raise DomainError(f"focus must exceed the focal length {f}, degenerate imaging otherwise.")
    if np.any(depth_arr <= f) or not np.all(np.isfinite(depth_arr)):
        raise DomainError(f"depth must exceed the focal length {f}.")
    diameter = f * lens.aperture_diameter * np.abs(depth_arr - focus_arr) / (depth_arr * (focus_arr - f))
    return _scalar_or_array(diameter)
