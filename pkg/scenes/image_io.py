from __future__ import annotations

import struct
from pathlib import Path

import imageio.v3 as iio
import numpy as np

from core.errors import DatasetFormatError
from core.validation import FloatArray

# Header of the full-precision image format: magic, then width, height and channels as little-endian uint32.
BINARY_MAGIC: bytes = b"LFIMG001"
_HEADER = struct.Struct("<III")


def to_uint8(image: FloatArray) -> np.ndarray:
    return np.rint(255.0 * np.clip(image, 0.0, 1.0)).astype(np.uint8)


def write_png(path: Path | str, image: FloatArray) -> None:
    """
    Writes an (H, W, 3) image in [0, 1] as an 8-bit RGB PNG. Values are clipped and rounded.
    """
    iio.imwrite(Path(path), to_uint8(image), extension=".png")


def read_png(path: Path | str) -> FloatArray:
    """
    Reads an 8-bit RGB PNG into a float64 (H, W, 3) image in [0, 1].

    :raises DatasetFormatError: If the file can't be decoded or isn't a 3-channel 8-bit image.
    """
    try:
        pixels = iio.imread(Path(path), extension=".png")
    except (OSError, ValueError) as error:
        raise DatasetFormatError(f"cannot decode PNG ({error})", path=path) from error
    if pixels.dtype != np.uint8 or pixels.ndim != 3 or pixels.shape[2] < 3:
        raise DatasetFormatError(f"expected an 8-bit RGB image, got {pixels.dtype} with shape {pixels.shape}", path=path)
    return pixels[..., :3].astype(np.float64) / 255.0


def write_binary_image(path: Path | str, image: FloatArray) -> None:
    """
    Writes an (H, W, C) image bit-exactly: magic, width, height, channels, then float64 little-endian row-major data.
    """
    data = np.ascontiguousarray(image, dtype="<f8")
    height, width, channels = data.shape
    Path(path).write_bytes(BINARY_MAGIC + _HEADER.pack(width, height, channels) + data.tobytes())


def read_binary_image(path: Path | str) -> FloatArray:
    """
    Reads an image written by :func:`write_binary_image`.

    :raises DatasetFormatError: On a wrong magic, a truncated header or a payload whose size disagrees with the header.
    """
    raw = Path(path).read_bytes()
    offset = len(BINARY_MAGIC)
    if raw[:offset] != BINARY_MAGIC:
        raise DatasetFormatError("not a binary image file", path=path, field="magic")
    if len(raw) < offset + _HEADER.size:
        raise DatasetFormatError("truncated header", path=path, field="header")
    width, height, channels = _HEADER.unpack_from(raw, offset)
    payload = raw[offset + _HEADER.size:]
    expected = width * height * channels * 8
    if len(payload) != expected:
        raise DatasetFormatError(f"payload has {len(payload)} bytes, header announces {expected}", path=path, field="data")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(height, width, channels)


def write_image(path: Path | str, image: FloatArray) -> None:
    """
    Writes the image in the format given by the file suffix, .png or .bin.
    """
    if Path(path).suffix == ".bin":
        write_binary_image(path, image)
    else:
        write_png(path, image)


def read_image(path: Path | str) -> FloatArray:
    if Path(path).suffix == ".bin":
        return read_binary_image(path)
    return read_png(path)
