"""3D V-Net: residual conv blocks, strided down-sampling, transposed-conv
up-sampling with skip concatenation, and a residual output head that adds
the current-session low-dose channel to the network output.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

from ..errors import InvalidArgumentError, ShapeError
from ..volcore.volume import MultiChannelVolume, Volume
from .tensor import Tensor, concat, conv3d, conv_transpose3d, prelu, relu, take_channels


@dataclass(frozen=True)
class VNetConfig:
    in_channels: int = 4
    levels: int = 3
    base_channels: int = 8
    convs_per_level: int = 2
    activation: str = "prelu"
    residual: bool = True
    predict_residual: bool = True
    kernel_size: int = 3

    def __post_init__(self):
        if self.in_channels not in (2, 4):
            raise InvalidArgumentError(f"in_channels must be 2 or 4, got {self.in_channels}")
        if self.levels < 2:
            raise InvalidArgumentError(f"levels must be >= 2, got {self.levels}")
        if self.base_channels < 4:
            raise InvalidArgumentError(f"base_channels must be >= 4, got {self.base_channels}")
        if self.convs_per_level < 1:
            raise InvalidArgumentError("convs_per_level must be >= 1")
        if self.activation not in ("prelu", "relu"):
            raise InvalidArgumentError(f"unknown activation {self.activation!r}")
        if self.kernel_size % 2 != 1:
            raise InvalidArgumentError("kernel_size must be odd for same-padding")

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** level

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "VNetConfig":
        return cls(**d)


class VNetModel:
    """Configuration plus an ordered map of named parameter tensors."""

    def __init__(self, config: VNetConfig, parameters: dict[str, Tensor]):
        self.config = config
        self.parameters = parameters

    @classmethod
    def initialize(cls, config: VNetConfig, seed: int = 0, dtype=np.float32, zero_head: bool | None = None) -> "VNetModel":
        """Kaiming fan-in normal kernels, zero biases, PReLU slopes 0.25.

        The 1x1x1 head is zero when ``zero_head`` (default: ``predict_residual``),
        making a fresh model the identity on the low-dose channel.
        """
        if zero_head is None:
            zero_head = config.predict_residual
        rng = np.random.default_rng(seed)
        params: dict[str, Tensor] = {}

        def kernel(name, shape, fan_in):
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape).astype(dtype)
            params[name + ".w"] = Tensor(w, requires_grad=True)
            params[name + ".b"] = Tensor(np.zeros(shape[1] if name.endswith("up") else shape[0], dtype), requires_grad=True)

        def act(name, channels):
            if config.activation == "prelu":
                params[name + ".a"] = Tensor(np.full(channels, 0.25, dtype), requires_grad=True)

        k, n = config.kernel_size, config.convs_per_level
        c0 = config.channels(0)
        kernel("input", (c0, config.in_channels, k, k, k), config.in_channels * k ** 3)
        act("input", c0)
        for level in range(config.levels):
            c = config.channels(level)
            for i in range(n):
                kernel(f"enc{level}.conv{i}", (c, c, k, k, k), c * k ** 3)
                act(f"enc{level}.conv{i}", c)
            if level < config.levels - 1:
                kernel(f"enc{level}.down", (2 * c, c, 2, 2, 2), c * 8)
                act(f"enc{level}.down", 2 * c)
        for level in reversed(range(config.levels - 1)):
            c = config.channels(level)
            kernel(f"dec{level}.up", (2 * c, c, 2, 2, 2), 2 * c)
            act(f"dec{level}.up", c)
            for i in range(n):
                cin = 2 * c if i == 0 else c
                kernel(f"dec{level}.conv{i}", (c, cin, k, k, k), cin * k ** 3)
                act(f"dec{level}.conv{i}", c)
        head = rng.normal(0.0, np.sqrt(2.0 / c0), (1, c0, 1, 1, 1)).astype(dtype)
        params["head.w"] = Tensor(np.zeros_like(head) if zero_head else head, requires_grad=True)
        params["head.b"] = Tensor(np.zeros(1, dtype), requires_grad=True)
        return cls(config, params)

    def __iter__(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.parameters.items())

    @property
    def n_parameters(self) -> int:
        return sum(t.size for t in self.parameters.values())

    def zero_grad(self) -> None:
        for t in self.parameters.values():
            t.grad = None

    def astype(self, dtype) -> "VNetModel":
        return VNetModel(
            self.config,
            {k: Tensor(v.data.astype(dtype), requires_grad=True) for k, v in self.parameters.items()},
        )

    def copy(self) -> "VNetModel":
        return self.astype(next(iter(self.parameters.values())).dtype)

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            self.parameters[k].data = v.copy()

    @property
    def dtype(self):
        return next(iter(self.parameters.values())).dtype

    def forward(self, x: Tensor) -> Tensor:
        cfg = self.config
        if x.data.ndim != 4 or x.shape[0] != cfg.in_channels:
            raise ShapeError(f"model expects ({cfg.in_channels}, X, Y, Z) input, got {x.shape}")
        factor = 2 ** (cfg.levels - 1)
        if any(d % factor for d in x.shape[1:]):
            raise ShapeError(f"spatial dims {x.shape[1:]} must be divisible by {factor} for {cfg.levels} levels")
        p = self.parameters
        h = self._conv_act("input", x)
        skips = []
        for level in range(cfg.levels):
            h = residual_block(self, f"enc{level}", h, h)
            if level < cfg.levels - 1:
                skips.append(h)
                h = down_block(self, f"enc{level}", h, level)
        for level in reversed(range(cfg.levels - 1)):
            h = up_block(self, f"dec{level}", h, skips[level])
        out = conv3d(h, p["head.w"], p["head.b"])
        if cfg.predict_residual:
            ld = cfg.in_channels - 1
            out = out + take_channels(x, ld, ld + 1)
        return out

    __call__ = forward

    def _act(self, name: str, h: Tensor) -> Tensor:
        if self.config.activation == "prelu":
            return prelu(h, self.parameters[name + ".a"])
        return relu(h)

    def _conv_act(self, name: str, h: Tensor) -> Tensor:
        p = self.parameters
        pad = self.config.kernel_size // 2
        return self._act(name, conv3d(h, p[name + ".w"], p[name + ".b"], 1, pad))


def residual_block(model: VNetModel, prefix: str, h: Tensor, shortcut: Tensor) -> Tensor:
    """``convs_per_level`` same-padded convs; the last activation follows the shortcut add."""
    p, cfg = model.parameters, model.config
    pad = cfg.kernel_size // 2
    n = cfg.convs_per_level
    for i in range(n):
        name = f"{prefix}.conv{i}"
        h = conv3d(h, p[name + ".w"], p[name + ".b"], 1, pad)
        if i < n - 1:
            h = model._act(name, h)
    if cfg.residual:
        h = h + shortcut
    return model._act(f"{prefix}.conv{n - 1}", h)


def down_block(model: VNetModel, prefix: str, h: Tensor, level: int = 0) -> Tensor:
    """Stride-2 2x2x2 convolution: halves spatial dims, doubles channels."""
    if any(d % 2 for d in h.shape[1:]):
        raise ShapeError(f"level {level}: spatial dims {h.shape[1:]} not divisible by 2")
    name = f"{prefix}.down"
    p = model.parameters
    return model._act(name, conv3d(h, p[name + ".w"], p[name + ".b"], stride=2))


def up_block(model: VNetModel, prefix: str, h: Tensor, skip: Tensor) -> Tensor:
    """Transposed stride-2 conv (doubles dims, halves channels), skip concat, residual block."""
    name = f"{prefix}.up"
    p = model.parameters
    up = model._act(name, conv_transpose3d(h, p[name + ".w"], p[name + ".b"], stride=2))
    if up.shape[1:] != skip.shape[1:]:
        raise ShapeError(f"{prefix}: upsampled dims {up.shape[1:]} do not match skip dims {skip.shape[1:]}")
    return residual_block(model, prefix, concat([up, skip], axis=0), up)


def vnet_forward(model: VNetModel, inputs: MultiChannelVolume) -> Volume:
    """Predict the full-dose image for one stacked multi-channel sample."""
    if inputs.n_channels != model.config.in_channels:
        raise ShapeError(f"model expects {model.config.in_channels} channels, got {inputs.n_channels}")
    x = Tensor(inputs.as_array(model.dtype))
    out = model.forward(x)
    ref = inputs.channels[-1]
    return ref.replace(data=out.data[0].astype(np.float64))
