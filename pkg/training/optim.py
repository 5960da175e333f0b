from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np
from immutabledict import immutabledict

from core.errors import ShapeMismatchError
from core.validation import FloatArray, _validate_shape

type ParamMap = Mapping[str, FloatArray]


def mse_loss(prediction: FloatArray, target: FloatArray) -> tuple[float, FloatArray]:
    """
    Mean squared error over every component, with its gradient 2·(prediction − target) / N.

    :raises ShapeMismatchError: If the arrays don't have the same shape.
    """
    _validate_shape("prediction", prediction, target.shape)
    residual = prediction - target
    return float(np.mean(residual * residual)), 2.0 * residual / residual.size


@dataclass(frozen=True, slots=True)
class AdamState:
    """
    Moments of the Adam optimizer, keyed like the parameters they belong to.

    Attributes:
        step (int): Number of updates applied so far.

        m (immutabledict[str, FloatArray]): First moment estimates.

        v (immutabledict[str, FloatArray]): Second moment estimates.
    """

    step: int
    m: immutabledict[str, FloatArray]
    v: immutabledict[str, FloatArray]

    @classmethod
    def zeros(cls, params: ParamMap) -> AdamState:
        return cls(0, immutabledict({k: np.zeros_like(p) for k, p in params.items()}), immutabledict({k: np.zeros_like(p) for k, p in params.items()}))


def adam_step(
    state: AdamState,
    params: ParamMap,
    grads: ParamMap,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8
) -> tuple[immutabledict[str, FloatArray], AdamState]:
    """
    One bias-corrected Adam update.

    :param state: Moments before the update.
    :type state: AdamState

    :param params: Current parameters.
    :type params: ParamMap

    :param grads: Gradients, with the same keys and shapes as params.
    :type grads: ParamMap

    :param lr: Step size of this update.
    :type lr: float

    :return: The updated parameters and moments. Inputs are left untouched.
    :rtype: tuple[immutabledict[str, FloatArray], AdamState]

    :raises ShapeMismatchError: If keys or shapes of params, grads and state disagree.
    """
    if set(params) != set(grads) or set(params) != set(state.m):
        raise ShapeMismatchError(f"Parameter keys {sorted(params)} don't match gradients {sorted(grads)} or optimizer state {sorted(state.m)}.")
    step = state.step + 1
    correction1 = 1.0 - beta1 ** step
    correction2 = 1.0 - beta2 ** step
    new_params: dict[str, FloatArray] = {}
    new_m: dict[str, FloatArray] = {}
    new_v: dict[str, FloatArray] = {}
    for name, value in params.items():
        grad = grads[name]
        _validate_shape(f"gradient {name}", grad, value.shape)
        _validate_shape(f"moment {name}", state.m[name], value.shape)
        m = beta1 * state.m[name] + (1.0 - beta1) * grad
        v = beta2 * state.v[name] + (1.0 - beta2) * grad * grad
        new_params[name] = value - lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
        new_m[name] = m
        new_v[name] = v
    return immutabledict(new_params), AdamState(step, immutabledict(new_m), immutabledict(new_v))


def decayed_lr(base: float, step: int, decay_steps: int) -> float:
    """
    Exponential schedule base·0.1^(step / decay_steps), a tenfold drop every decay_steps.
    """
    return base * 0.1 ** (step / decay_steps)
