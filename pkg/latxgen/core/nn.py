"""Parameter containers and the layers the two pipeline stages are built from."""
from __future__ import annotations

import math
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import functional as F
from .errors import CheckpointError, ShapeError
from .tensor import Tensor


class Parameter(Tensor):
    """Leaf tensor that always tracks gradients."""

    def __init__(self, data: np.ndarray):
        super().__init__(data, requires_grad=True)

    def __repr__(self) -> str:
        return f"Parameter(shape={self.shape})"


class Module:
    """Base class for anything owning parameters or buffers.

    Parameters, buffers and sub-modules are discovered from instance attributes
    in assignment order, which fixes the naming used by :meth:`state_dict`.
    """

    def __init__(self) -> None:
        object.__setattr__(self, "training", True)
        object.__setattr__(self, "_buffers", {})

    # ------------------------------------------------------------------
    # Registration
    # ------------------------------------------------------------------

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        """Attach a non-trainable array that is saved with the parameters."""
        self._buffers[name] = np.asarray(value, dtype=np.float64)

    def get_buffer(self, name: str) -> np.ndarray:
        return self._buffers[name]

    def _children(self) -> Iterator[Tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, value in self._buffers.items():
            yield prefix + name, value
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, child in self._children():
            yield from child.modules()

    # ------------------------------------------------------------------
    # Mode and gradients
    # ------------------------------------------------------------------

    def train(self, mode: bool = True) -> "Module":
        for module in self.modules():
            object.__setattr__(module, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    # ------------------------------------------------------------------
    # Serialisation
    # ------------------------------------------------------------------

    def state_dict(self, prefix: str = "") -> Dict[str, np.ndarray]:
        """Flat name → array mapping of parameters followed by buffers."""
        state = {name: p.data.copy() for name, p in self.named_parameters(prefix)}
        for name, buf in self.named_buffers(prefix):
            state[name] = buf.copy()
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray], prefix: str = "") -> None:
        """Copy arrays into parameters/buffers in place.

        Raises:
            CheckpointError: on a missing entry or a shape mismatch.
        """
        for name, p in self.named_parameters(prefix):
            p.data[...] = self._lookup(state, name, p.shape)
        for module_prefix, module in self._modules_with_prefix(prefix):
            for key in list(module._buffers):
                full = module_prefix + key
                module._buffers[key] = self._lookup(state, full, module._buffers[key].shape).copy()

    def _modules_with_prefix(self, prefix: str) -> Iterator[Tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self._children():
            yield from child._modules_with_prefix(f"{prefix}{name}.")

    @staticmethod
    def _lookup(state: Dict[str, np.ndarray], name: str, shape: Tuple[int, ...]) -> np.ndarray:
        if name not in state:
            raise CheckpointError(f"checkpoint is missing entry '{name}'")
        value = np.asarray(state[name], dtype=np.float64)
        if value.shape != tuple(shape):
            raise CheckpointError(
                f"entry '{name}' has shape {value.shape}, expected {tuple(shape)}"
            )
        return value

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


def _uniform(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=tuple(shape))


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
        bias: bool = True,
    ):
        super().__init__()
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = Parameter(_uniform(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in))
        self.bias = Parameter(_uniform(rng, (out_channels,), fan_in)) if bias else None
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    def zero_(self) -> "Conv2d":
        self.weight.data[...] = 0.0
        if self.bias is not None:
            self.bias.data[...] = 0.0
        return self


class ConvTranspose2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
    ):
        super().__init__()
        fan_in = out_channels * kernel_size * kernel_size
        self.weight = Parameter(_uniform(rng, (in_channels, out_channels, kernel_size, kernel_size), fan_in))
        self.bias = Parameter(_uniform(rng, (out_channels,), fan_in))
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return F.conv_transpose2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__()
        self.weight = Parameter(_uniform(rng, (out_features, in_features), in_features))
        self.bias = Parameter(_uniform(rng, (out_features,), in_features))

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class BatchNorm2d(Module):
    """Batch norm with running statistics for eval mode.

    running = momentum * running + (1 - momentum) * batch, momentum 0.9.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.9):
        super().__init__()
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.eps = eps
        self.momentum = momentum
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.gamma.shape[0]:
            raise ShapeError(
                f"BatchNorm2d({self.gamma.shape[0]}) got input of shape {x.shape}"
            )
        if self.training:
            out, batch_mean, batch_var = F.batchnorm2d(x, self.gamma, self.beta, eps=self.eps)
            m = self.momentum
            self._buffers["running_mean"] = m * self._buffers["running_mean"] + (1 - m) * batch_mean
            self._buffers["running_var"] = m * self._buffers["running_var"] + (1 - m) * batch_var
            return out
        mean = self._buffers["running_mean"].reshape(1, -1, 1, 1)
        inv_std = 1.0 / np.sqrt(self._buffers["running_var"].reshape(1, -1, 1, 1) + self.eps)
        gamma = F.reshape(self.gamma, (1, -1, 1, 1))
        beta = F.reshape(self.beta, (1, -1, 1, 1))
        return F.add(F.mul(F.mul(F.sub(x, mean), inv_std), gamma), beta)


class ConvBnRelu(Module):
    """conv → batch norm → ReLU, the σ(Conv(·)) unit used throughout."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: Optional[int] = None,
    ):
        super().__init__()
        pad = kernel_size // 2 if padding is None else padding
        self.conv = Conv2d(in_channels, out_channels, kernel_size, rng, stride=stride, padding=pad)
        self.bn = BatchNorm2d(out_channels)

    def forward(self, x: Tensor) -> Tensor:
        return F.relu(self.bn(self.conv(x)))
