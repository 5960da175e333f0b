from __future__ import annotations

from typing import Any

import numpy as np
import numpy.typing as npt

from core.errors import DomainError, ShapeMismatchError


type FloatArray = npt.NDArray[np.float64]
type ArrayLike = float | FloatArray


def _validate_positive(name: str, value: Any) -> None:
    """
    Validates that every entry of a scalar or array is strictly positive and finite.

    :param name: Name of the argument, used in the error message.
    :type name: str

    :param value: Scalar or array to check.
    :type value: Any

    :raises DomainError: If any entry is non-positive or not finite.
    """
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise DomainError(f"{name} must be positive and finite, got {_describe(arr)}.")


def _validate_non_negative(name: str, value: Any) -> None:
    """
    Validates that every entry of a scalar or array is non-negative and finite.

    :raises DomainError: If any entry is negative or not finite.
    """
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0):
        raise DomainError(f"{name} must be non-negative and finite, got {_describe(arr)}.")


def _validate_finite(name: str, value: Any) -> None:
    """
    Validates that every entry of a scalar or array is finite.

    :raises DomainError: If any entry is NaN or infinite.
    """
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite, got {_describe(arr)}.")


def _validate_shape(name: str, value: npt.NDArray[Any], expected: tuple[int, ...]) -> None:
    """
    Validates that an array has exactly the expected shape.

    :param name: Name of the argument, used in the error message.
    :type name: str

    :param value: Array to check.
    :type value: npt.NDArray[Any]

    :param expected: Shape the array must have.
    :type expected: tuple[int, ...]

    :raises ShapeMismatchError: If the shapes differ.
    """
    if np.shape(value) != expected:
        raise ShapeMismatchError(f"{name} has shape {np.shape(value)}, expected {expected}.")


def _validate_unit_vectors(name: str, vectors: FloatArray, tolerance: float = 1e-6) -> None:
    """
    Validates that every row along the last axis has unit Euclidean norm within a tolerance.

    :raises DomainError: If some vector's norm differs from 1 by more than the tolerance.
    """
    norms = np.linalg.norm(vectors, axis=-1)
    worst = float(np.max(np.abs(norms - 1.0))) if norms.size else 0.0
    if worst > tolerance:
        raise DomainError(f"{name} must be unit vectors within {tolerance}, worst norm deviation is {worst:.3g}.")


def _describe(arr: npt.NDArray[Any]) -> str:
    if arr.ndim == 0:
        return repr(float(arr))
    return f"array with range [{np.nanmin(arr):.6g}, {np.nanmax(arr):.6g}]" if arr.size else "empty array"


def _scalar_or_array(value: FloatArray) -> ArrayLike:
    """
    Returns a Python float for 0-d results, so scalar calls give scalar answers, and the array otherwise.
    """
    return float(value) if np.ndim(value) == 0 else value
