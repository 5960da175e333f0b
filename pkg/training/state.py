from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import numpy.typing as npt
from immutabledict import immutabledict

from core.errors import DomainError, ShapeMismatchError
from core.validation import FloatArray
from field.network import RadianceFieldParams
from training.optim import AdamState

# Smallest aperture parameter an optimizer update can leave on a view.
APERTURE_FLOOR: float = 1e-3


@dataclass(frozen=True, slots=True)
class PerViewOptics:
    """
    Aperture parameter and focus distance of every view.

    Attributes:
        aperture (FloatArray): K_i ≥ 0 per view, shape (V,).

        focus (FloatArray): F_i per view, inside that view's [near, far].

        trainable (npt.NDArray[np.bool_]): Whether view i is optimized. Held-out views stay frozen.

        near (FloatArray): Lower focus bound per view.

        far (FloatArray): Upper focus bound per view.
    """

    aperture: FloatArray
    focus: FloatArray
    trainable: npt.NDArray[np.bool_]
    near: FloatArray
    far: FloatArray

    def __post_init__(self) -> None:
        count = self.aperture.shape
        for name in ("focus", "trainable", "near", "far"):
            if getattr(self, name).shape != count:
                raise ShapeMismatchError(f"{name} has shape {getattr(self, name).shape}, expected {count}.")
        if np.any(self.aperture < 0.0) or np.any(self.focus < self.near) or np.any(self.focus > self.far):
            raise DomainError("Per-view optics violate K ≥ 0 or F ∈ [near, far].")

    def __len__(self) -> int:
        return self.aperture.shape[0]

    @classmethod
    def initial(cls, trainable: npt.NDArray[np.bool_], near: FloatArray, far: FloatArray, aperture: float, focus: float) -> PerViewOptics:
        """
        Every view starts from the same (aperture, focus), with the aperture raised to APERTURE_FLOOR and the focus
        clamped into the view's depth range.
        """
        count = trainable.shape[0]
        return cls(
            np.full(count, max(aperture, APERTURE_FLOOR)),
            np.clip(np.full(count, focus), near, far),
            trainable.copy(),
            near.astype(np.float64),
            far.astype(np.float64),
        )

    def clamped(self, aperture: FloatArray, focus: FloatArray) -> PerViewOptics:
        """
        Copy holding the given values, projected onto K ≥ APERTURE_FLOOR and F ∈ [near, far].
        """
        return replace(self, aperture=np.maximum(aperture, APERTURE_FLOOR), focus=np.clip(focus, self.near, self.far))

    def as_params(self) -> immutabledict[str, FloatArray]:
        return immutabledict({"aperture": self.aperture, "focus": self.focus})


@dataclass(frozen=True, slots=True)
class TrainState:
    """
    Everything a run needs to continue: field, optics, optimizer moments and the index of the next step.
    """

    step: int
    params: RadianceFieldParams
    optics: PerViewOptics
    field_adam: AdamState
    optics_adam: AdamState

    @classmethod
    def fresh(cls, params: RadianceFieldParams, optics: PerViewOptics) -> TrainState:
        return cls(0, params, optics, AdamState.zeros(params.blocks), AdamState.zeros(optics.as_params()))
