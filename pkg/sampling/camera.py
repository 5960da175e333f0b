from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from core.errors import DomainError
from core.validation import FloatArray, _validate_finite, _validate_positive, _validate_shape
from rendering.volume import Ray, RayBundle

# Tolerance of the orthonormality check on the rotation block.
ROTATION_TOLERANCE: float = 1e-6


@dataclass(frozen=True, slots=True)
class CameraModel:
    """
    Pinhole camera with OpenCV axes: x right, y down, z forward.

    Pixel (u, v) has its centre at the continuous image coordinate (u, v), so the principal point (cx, cy) is expressed
    in pixel-index units.

    Attributes:
        fx (float): Horizontal focal length in pixels.

        fy (float): Vertical focal length in pixels.

        cx (float): Principal point column.

        cy (float): Principal point row.

        camera_to_world (FloatArray): Rigid 4x4 transform from camera to world coordinates.

        width (int): Image width in pixels.

        height (int): Image height in pixels.

        near (float): Near sampling bound in scene units.

        far (float): Far sampling bound in scene units.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    camera_to_world: FloatArray
    width: int
    height: int
    near: float
    far: float

    def __post_init__(self) -> None:
        _validate_positive("fx", self.fx)
        _validate_positive("fy", self.fy)
        _validate_finite("principal point", (self.cx, self.cy))
        if self.width < 1 or self.height < 1:
            raise DomainError(f"Image size must be positive, got {self.width}x{self.height}.")
        _validate_positive("near", self.near)
        if not self.near < self.far:
            raise DomainError(f"near must be below far, got {self.near} and {self.far}.")
        _validate_shape("camera_to_world", self.camera_to_world, (4, 4))
        _validate_finite("camera_to_world", self.camera_to_world)
        rotation = self.camera_to_world[:3, :3]
        deviation = float(np.max(np.abs(rotation.T @ rotation - np.eye(3))))
        if deviation > ROTATION_TOLERANCE or np.linalg.det(rotation) <= 0.0:
            raise DomainError(f"camera_to_world rotation is not orthonormal (deviation {deviation:.3g}).")
        if not np.allclose(self.camera_to_world[3], (0.0, 0.0, 0.0, 1.0)):
            raise DomainError("camera_to_world must have (0, 0, 0, 1) as its last row.")

    @property
    def center(self) -> FloatArray:
        return self.camera_to_world[:3, 3].copy()

    @property
    def rotation(self) -> FloatArray:
        return self.camera_to_world[:3, :3].copy()

    @property
    def forward(self) -> FloatArray:
        return self.camera_to_world[:3, 2].copy()


def look_at_pose(position: FloatArray, target: FloatArray, down: FloatArray | None = None) -> FloatArray:
    """
    Camera-to-world transform of a camera at position whose optical axis points at target.

    :param position: Camera centre, shape (3,).
    :type position: FloatArray

    :param target: Point the optical axis passes through, shape (3,).
    :type target: FloatArray

    :param down: World direction that should appear downwards in the image. Defaults to +y.
    :type down: FloatArray | None

    :return: 4x4 rigid transform with columns (right, down, forward, position).
    :rtype: FloatArray

    :raises DomainError: If position and target coincide or the down hint is parallel to the axis.
    """
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    norm = np.linalg.norm(forward)
    if norm == 0.0:
        raise DomainError("Camera position and target coincide.")
    forward = forward / norm
    hint = np.array((0.0, 1.0, 0.0)) if down is None else np.asarray(down, dtype=np.float64)
    right = np.cross(hint, forward)
    right_norm = np.linalg.norm(right)
    if right_norm < 1e-12:
        raise DomainError("The down hint is parallel to the viewing direction.")
    right = right / right_norm
    down_axis = np.cross(forward, right)
    pose = np.eye(4)
    pose[:3, 0] = right
    pose[:3, 1] = down_axis
    pose[:3, 2] = forward
    pose[:3, 3] = position
    return pose


def generate_rays(camera: CameraModel, us: npt.ArrayLike, vs: npt.ArrayLike) -> RayBundle:
    """
    Rays through the centres of the given pixels.

    Pixels outside the image are allowed: they extend the sensor virtually, which is how guard bands around patches
    near the image border get their rays.

    :param camera: Camera the rays leave from.
    :type camera: CameraModel

    :param us: Pixel columns.
    :type us: npt.ArrayLike

    :param vs: Pixel rows, same shape as us.
    :type vs: npt.ArrayLike

    :return: One ray per pixel, flattened in the order of the inputs.
    :rtype: RayBundle
    """
    u = np.asarray(us).ravel()
    v = np.asarray(vs).ravel()
    local = np.stack([(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, np.ones(u.shape)], axis=-1)
    directions = local @ camera.rotation.T
    directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
    count = directions.shape[0]
    return RayBundle(
        origins=np.broadcast_to(camera.center, (count, 3)).copy(),
        directions=directions,
        near=np.full(count, camera.near),
        far=np.full(count, camera.far),
        pixels=np.stack([np.rint(u), np.rint(v)], axis=-1).astype(np.int64),
    )


def generate_ray(camera: CameraModel, u: float, v: float) -> Ray:
    """
    Ray from the camera centre through the centre of pixel (u, v).

    :return: A ray with unit direction and the camera's sampling bounds.
    :rtype: Ray
    """
    bundle = generate_rays(camera, [u], [v])
    return Ray(bundle.origins[0], bundle.directions[0], camera.near, camera.far, (int(bundle.pixels[0, 0]), int(bundle.pixels[0, 1])))


def pixel_grid(top: int, left: int, rows: int, cols: int) -> tuple[npt.NDArray[np.int64], npt.NDArray[np.int64]]:
    """
    Row-major (us, vs) coordinates of a rows x cols pixel rectangle starting at (top, left).
    """
    vs, us = np.meshgrid(np.arange(top, top + rows), np.arange(left, left + cols), indexing="ij")
    return us.ravel(), vs.ravel()
