from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Any, Callable, Iterator, Literal

import numpy as np
from immutabledict import immutabledict
from scipy.special import expit

from core.errors import DomainError, ShapeMismatchError
from core.validation import FloatArray, _validate_finite, _validate_shape, _validate_unit_vectors
from field.encoding import encoded_size, positional_encoding, positional_encoding_backward

type Activation = Literal["softplus", "relu"]


@dataclass(frozen=True, slots=True)
class FieldArch:
    """
    Layout of the radiance field network.

    The trunk maps the encoded position through hidden_layers fully connected layers. A density head reads the trunk,
    and a feature layer followed by the encoded direction feeds the final two layers, which produce the color.

    Attributes:
        hidden_layers (int): Number of trunk layers, at least 1.

        hidden_width (int): Width of every trunk layer, at least 1.

        pos_freqs (int): Frequency bands of the position encoding.

        dir_freqs (int): Frequency bands of the direction encoding.

        activation (Activation): Hidden nonlinearity. Softplus keeps the whole map smooth.
    """

    hidden_layers: int = 4
    hidden_width: int = 64
    pos_freqs: int = 6
    dir_freqs: int = 2
    activation: Activation = "softplus"

    def __post_init__(self) -> None:
        if self.hidden_layers < 1 or self.hidden_width < 1:
            raise DomainError(f"hidden_layers and hidden_width must be at least 1, got {self.hidden_layers} and {self.hidden_width}.")
        if self.pos_freqs < 0 or self.dir_freqs < 0:
            raise DomainError("Frequency band counts must be non-negative.")
        if self.activation not in ("softplus", "relu"):
            raise DomainError(f"Unknown activation {self.activation!r}.")

    @property
    def pos_dim(self) -> int:
        return encoded_size(3, self.pos_freqs)

    @property
    def dir_dim(self) -> int:
        return encoded_size(3, self.dir_freqs)

    @property
    def head_width(self) -> int:
        return max(1, self.hidden_width // 2)

    def block_shapes(self) -> immutabledict[str, tuple[int, ...]]:
        """
        Names and shapes of every parameter block, in the fixed order used for flattening.
        """
        shapes: dict[str, tuple[int, ...]] = {}
        fan_in = self.pos_dim
        for i in range(self.hidden_layers):
            shapes[f"trunk_{i}_weight"] = (fan_in, self.hidden_width)
            shapes[f"trunk_{i}_bias"] = (self.hidden_width,)
            fan_in = self.hidden_width
        shapes["density_weight"] = (self.hidden_width, 1)
        shapes["density_bias"] = (1,)
        shapes["feature_weight"] = (self.hidden_width, self.hidden_width)
        shapes["feature_bias"] = (self.hidden_width,)
        shapes["view_weight"] = (self.hidden_width + self.dir_dim, self.head_width)
        shapes["view_bias"] = (self.head_width,)
        shapes["color_weight"] = (self.head_width, 3)
        shapes["color_bias"] = (3,)
        return immutabledict(shapes)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True, slots=True)
class RadianceFieldParams:
    """
    Every weight matrix and bias vector of the field, keyed by block name.

    Instances are immutable: optimisation produces new parameter objects. The same type carries parameter gradients.

    Attributes:
        arch (FieldArch): Layout the block shapes follow.

        blocks (immutabledict[str, FloatArray]): Parameter arrays in the order given by FieldArch.block_shapes.
    """

    arch: FieldArch
    blocks: immutabledict[str, FloatArray]

    def __post_init__(self) -> None:
        shapes = self.arch.block_shapes()
        if tuple(self.blocks) != tuple(shapes):
            raise ShapeMismatchError(f"Parameter blocks {list(self.blocks)} don't match the architecture's {list(shapes)}.")
        for name, shape in shapes.items():
            _validate_shape(name, self.blocks[name], shape)

    def __getitem__(self, name: str) -> FloatArray:
        return self.blocks[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.blocks)

    @property
    def size(self) -> int:
        return sum(block.size for block in self.blocks.values())

    def flatten(self) -> FloatArray:
        """
        Concatenates every block, in order, into one 1-D array.
        """
        return np.concatenate([block.ravel() for block in self.blocks.values()])

    @classmethod
    def from_flat(cls, arch: FieldArch, flat: FloatArray) -> RadianceFieldParams:
        """
        Rebuilds parameters from the output of :meth:`flatten`.

        :raises ShapeMismatchError: If the flat array's length doesn't match the architecture.
        """
        shapes = arch.block_shapes()
        total = sum(math.prod(shape) for shape in shapes.values())
        if flat.shape != (total,):
            raise ShapeMismatchError(f"Flat parameter array has shape {flat.shape}, expected ({total},).")
        blocks: dict[str, FloatArray] = {}
        offset = 0
        for name, shape in shapes.items():
            count = math.prod(shape)
            blocks[name] = np.array(flat[offset:offset + count], dtype=np.float64).reshape(shape)
            offset += count
        return cls(arch, immutabledict(blocks))

    def map_blocks(self, f: Callable[[str, FloatArray], FloatArray]) -> RadianceFieldParams:
        return RadianceFieldParams(self.arch, immutabledict({name: f(name, block) for name, block in self.blocks.items()}))

    def zeros_like(self) -> RadianceFieldParams:
        return self.map_blocks(lambda _, block: np.zeros_like(block))

    def __add__(self, other: RadianceFieldParams) -> RadianceFieldParams:
        return self.map_blocks(lambda name, block: block + other.blocks[name])

    def all_finite(self) -> bool:
        return all(bool(np.all(np.isfinite(block))) for block in self.blocks.values())


@dataclass(frozen=True, slots=True)
class FieldOutput:
    """
    Per-point output of the field.

    Attributes:
        color (FloatArray): Emitted color, shape (N, 3), componentwise in [0, 1].

        density (FloatArray): Volume density σ ≥ 0, shape (N,). The volume module turns it into segment transparency.
    """

    color: FloatArray
    density: FloatArray


@dataclass(frozen=True, slots=True)
class FieldCache:
    """
    Activations retained by :func:`field_forward` for the backward pass.
    """

    positions: FloatArray
    directions: FloatArray
    layer_inputs: tuple[FloatArray, ...]
    layer_preactivations: tuple[FloatArray, ...]
    trunk_output: FloatArray
    density_preactivation: FloatArray
    view_input: FloatArray
    view_preactivation: FloatArray
    view_output: FloatArray
    color: FloatArray


@dataclass(frozen=True, slots=True)
class FieldGradients:
    """
    Result of :func:`field_backward`: parameter gradients and cotangents on the inputs.
    """

    params: RadianceFieldParams
    positions: FloatArray
    directions: FloatArray


def _activate(z: FloatArray, activation: Activation) -> FloatArray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    return np.logaddexp(0.0, z)


def _activate_derivative(z: FloatArray, activation: Activation) -> FloatArray:
    if activation == "relu":
        return (z > 0.0).astype(np.float64)
    return expit(z)


def init_params(arch: FieldArch, seed: int) -> RadianceFieldParams:
    """
    Draws fan-in scaled uniform weights, U(−√(6/fan_in), √(6/fan_in)), and zero biases.

    :param arch: Layout of the network.
    :type arch: FieldArch

    :param seed: Seed of the generator, the result is a pure function of (arch, seed).
    :type seed: int

    :return: Freshly initialised parameters.
    :rtype: RadianceFieldParams
    """
    rng = np.random.default_rng(seed)
    blocks: dict[str, FloatArray] = {}
    for name, shape in arch.block_shapes().items():
        if name.endswith("_weight"):
            bound = math.sqrt(6.0 / shape[0])
            blocks[name] = rng.uniform(-bound, bound, size=shape)
        else:
            blocks[name] = np.zeros(shape, dtype=np.float64)
    return RadianceFieldParams(arch, immutabledict(blocks))


def field_forward(params: RadianceFieldParams, positions: FloatArray, directions: FloatArray) -> tuple[FieldOutput, FieldCache]:
    """
    Evaluates the field at a batch of points.

    :param params: Network parameters.
    :type params: RadianceFieldParams

    :param positions: Sample positions, shape (N, 3).
    :type positions: FloatArray

    :param directions: Unit viewing directions, shape (N, 3).
    :type directions: FloatArray

    :return: The color/density output and the cache :func:`field_backward` consumes.
    :rtype: tuple[FieldOutput, FieldCache]

    :raises DomainError: If inputs are not finite or directions are not normalized within 1e-6.
    :raises ShapeMismatchError: If positions and directions aren't matching (N, 3) arrays.
    """
    arch = params.arch
    if positions.ndim != 2 or positions.shape[1] != 3:
        raise ShapeMismatchError(f"positions must have shape (N, 3), got {positions.shape}.")
    _validate_shape("directions", directions, positions.shape)
    _validate_finite("positions", positions)
    _validate_finite("directions", directions)
    _validate_unit_vectors("directions", directions)

    h = positional_encoding(positions, arch.pos_freqs)
    layer_inputs: list[FloatArray] = []
    preactivations: list[FloatArray] = []
    for i in range(arch.hidden_layers):
        layer_inputs.append(h)
        z = h @ params[f"trunk_{i}_weight"] + params[f"trunk_{i}_bias"]
        preactivations.append(z)
        h = _activate(z, arch.activation)

    density_pre = (h @ params["density_weight"] + params["density_bias"])[:, 0]
    density = np.logaddexp(0.0, density_pre)

    feature = h @ params["feature_weight"] + params["feature_bias"]
    view_input = np.concatenate([feature, positional_encoding(directions, arch.dir_freqs)], axis=1)
    view_pre = view_input @ params["view_weight"] + params["view_bias"]
    view_out = _activate(view_pre, arch.activation)
    color = expit(view_out @ params["color_weight"] + params["color_bias"])

    cache = FieldCache(
        positions=positions,
        directions=directions,
        layer_inputs=tuple(layer_inputs),
        layer_preactivations=tuple(preactivations),
        trunk_output=h,
        density_preactivation=density_pre,
        view_input=view_input,
        view_preactivation=view_pre,
        view_output=view_out,
        color=color,
    )
    return FieldOutput(color, density), cache


def field_backward(params: RadianceFieldParams, cache: FieldCache, d_color: FloatArray, d_density: FloatArray) -> FieldGradients:
    """
    Exact reverse-mode pass of :func:`field_forward`.

    :param params: Parameters the forward pass ran with.
    :type params: RadianceFieldParams

    :param cache: Activations returned by the forward pass.
    :type cache: FieldCache

    :param d_color: Cotangent on the color output, shape (N, 3).
    :type d_color: FloatArray

    :param d_density: Cotangent on the density output, shape (N,).
    :type d_density: FloatArray

    :return: Gradients for every parameter block and cotangents on positions and directions.
    :rtype: FieldGradients

    :raises ShapeMismatchError: If the cotangents don't match the forward output.
    """
    arch = params.arch
    n = cache.color.shape[0]
    _validate_shape("d_color", d_color, (n, 3))
    _validate_shape("d_density", d_density, (n,))
    grads: dict[str, FloatArray] = {}

    d_color_pre = d_color * cache.color * (1.0 - cache.color)
    grads["color_weight"] = cache.view_output.T @ d_color_pre
    grads["color_bias"] = d_color_pre.sum(axis=0)

    d_view_pre = (d_color_pre @ params["color_weight"].T) * _activate_derivative(cache.view_preactivation, arch.activation)
    grads["view_weight"] = cache.view_input.T @ d_view_pre
    grads["view_bias"] = d_view_pre.sum(axis=0)
    d_view_input = d_view_pre @ params["view_weight"].T
    d_feature = d_view_input[:, :arch.hidden_width]
    d_dir_features = d_view_input[:, arch.hidden_width:]

    grads["feature_weight"] = cache.trunk_output.T @ d_feature
    grads["feature_bias"] = d_feature.sum(axis=0)
    d_h = d_feature @ params["feature_weight"].T

    d_density_pre = (d_density * expit(cache.density_preactivation))[:, None]
    grads["density_weight"] = cache.trunk_output.T @ d_density_pre
    grads["density_bias"] = d_density_pre.sum(axis=0)
    d_h = d_h + d_density_pre @ params["density_weight"].T

    for i in reversed(range(arch.hidden_layers)):
        d_z = d_h * _activate_derivative(cache.layer_preactivations[i], arch.activation)
        grads[f"trunk_{i}_weight"] = cache.layer_inputs[i].T @ d_z
        grads[f"trunk_{i}_bias"] = d_z.sum(axis=0)
        d_h = d_z @ params[f"trunk_{i}_weight"].T

    ordered = immutabledict({name: grads[name] for name in arch.block_shapes()})
    return FieldGradients(
        params=RadianceFieldParams(arch, ordered),
        positions=positional_encoding_backward(cache.positions, arch.pos_freqs, d_h),
        directions=positional_encoding_backward(cache.directions, arch.dir_freqs, d_dir_features),
    )
