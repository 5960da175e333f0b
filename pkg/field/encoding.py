from __future__ import annotations

import numpy as np

from core.errors import DomainError, ShapeMismatchError
from core.validation import FloatArray


def encoded_size(dims: int, n_freqs: int) -> int:
    """
    Length of the encoding of a dims-vector with n_freqs frequency bands.
    """
    return dims + 2 * dims * n_freqs


def positional_encoding(values: FloatArray, n_freqs: int) -> FloatArray:
    """
    Frequency encoding of the last axis of values.

    The output is the concatenation of v and, for every band j in [0, n_freqs), the blocks sin(2^j·π·v) and
    cos(2^j·π·v), in that order.

    :param values: Array of shape (..., k).
    :type values: FloatArray

    :param n_freqs: Number of frequency bands, zero keeps only the raw values.
    :type n_freqs: int

    :return: Array of shape (..., k + 2·k·n_freqs).
    :rtype: FloatArray

    :raises DomainError: If n_freqs is negative.
    """
    if n_freqs < 0:
        raise DomainError(f"n_freqs must be non-negative, got {n_freqs}.")
    v = np.asarray(values, dtype=np.float64)
    blocks = [v]
    for j in range(n_freqs):
        scaled = (2.0 ** j) * np.pi * v
        blocks.append(np.sin(scaled))
        blocks.append(np.cos(scaled))
    return np.concatenate(blocks, axis=-1)


def positional_encoding_backward(values: FloatArray, n_freqs: int, d_features: FloatArray) -> FloatArray:
    """
    Pulls a cotangent on the encoding back to the encoded values.

    :param values: The array that was encoded, of shape (..., k).
    :type values: FloatArray

    :param n_freqs: Number of frequency bands used by the forward call.
    :type n_freqs: int

    :param d_features: Cotangent on the encoding, of shape (..., k + 2·k·n_freqs).
    :type d_features: FloatArray

    :return: Cotangent on the values, of shape (..., k).
    :rtype: FloatArray

    :raises ShapeMismatchError: If the cotangent doesn't match the encoding's shape.
    """
    v = np.asarray(values, dtype=np.float64)
    k = v.shape[-1]
    expected = v.shape[:-1] + (encoded_size(k, n_freqs),)
    if d_features.shape != expected:
        raise ShapeMismatchError(f"Encoding cotangent has shape {d_features.shape}, expected {expected}.")
    grad = d_features[..., :k].copy()
    for j in range(n_freqs):
        freq = (2.0 ** j) * np.pi
        scaled = freq * v
        offset = k + 2 * k * j
        grad += freq * np.cos(scaled) * d_features[..., offset:offset + k]
        grad -= freq * np.sin(scaled) * d_features[..., offset + k:offset + 2 * k]
    return grad
