"""
Reusable layers and parameter management

Contains:
- Module / ModuleList: containers that register parameters under dot-separated names
- ParameterStore: ordered name -> Tensor mapping shared with the optimizer and checkpoints
- Conv2d, LayerNorm2d, ResidualBlock, FeedForward layers
- init_parameters(): deterministic fan-in uniform initialization

Parameter names are the public checkpoint contract.
"""

from collections import OrderedDict
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ShapeError
from .functional import conv2d, layer_norm_channel
from .tensor import Tensor, get_default_dtype, relu
from .utils import logger

INIT_KINDS = ("fan_in_uniform", "zeros", "ones")


class ParameterStore(Mapping):
    """Named, ordered collection of trainable tensors"""

    def __init__(
        self,
        entries: Optional[Sequence[Tuple[str, Tensor]]] = None,
        rng_seed: Optional[int] = None,
    ):
        self._entries: "OrderedDict[str, Tensor]" = OrderedDict()
        self.rng_seed = rng_seed
        for name, tensor in entries or ():
            self.add(name, tensor)

    def add(self, name: str, tensor: Tensor) -> None:
        if name in self._entries:
            raise ValueError(f"Duplicate parameter name: {name}")
        if any(t is tensor for t in self._entries.values()):
            raise ValueError(f"Parameter registered twice under a second name: {name}")
        self._entries[name] = tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def param_count(self) -> int:
        return param_count(self)

    def zero_grad(self) -> None:
        for tensor in self._entries.values():
            tensor.zero_grad()

    def grads(self) -> "OrderedDict[str, np.ndarray]":
        """Current accumulated gradients; untouched parameters report zeros"""
        return OrderedDict(
            (name, t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in self._entries.items()
        )

    def astype(self, dtype: Any) -> "ParameterStore":
        """Convert every parameter in place (used for 64-bit gradient checks)"""
        dtype = np.dtype(dtype)
        for tensor in self._entries.values():
            tensor.data = tensor.data.astype(dtype)
            tensor.zero_grad()
        return self

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, t.data.copy()) for name, t in self._entries.items())

    def load_state_dict(self, arrays: Mapping[str, np.ndarray], strict: bool = True) -> None:
        """
        Copy arrays into the stored tensors

        Args:
            arrays: name -> array mapping (e.g. from a checkpoint)
            strict: Require the exact same name set

        Raises:
            KeyError: on missing/unexpected names when strict
            ShapeError: on extent mismatch
        """
        missing = [n for n in self._entries if n not in arrays]
        unexpected = [n for n in arrays if n not in self._entries]
        if strict and (missing or unexpected):
            raise KeyError(
                f"State mismatch: missing={missing[:5]}{'...' if len(missing) > 5 else ''}, "
                f"unexpected={unexpected[:5]}{'...' if len(unexpected) > 5 else ''}"
            )
        for name, tensor in self._entries.items():
            if name not in arrays:
                continue
            value = np.asarray(arrays[name])
            if value.shape != tensor.shape:
                raise ShapeError(
                    f"Parameter {name}: stored shape {value.shape} != model shape {tensor.shape}"
                )
            tensor.data = value.astype(tensor.dtype, copy=True)


def param_count(store: Mapping[str, Tensor]) -> int:
    """Total number of scalar parameters"""
    return int(sum(t.size for t in store.values()))


class Module:
    """Base class for layers; parameters and submodules register in assignment order"""

    def __init__(self) -> None:
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_inits", {})
        object.__setattr__(self, "_modules", OrderedDict())

    def __setattr__(self, name: str, value: Any) -> None:
        if isinstance(value, Module):
            self._modules[name] = value
        elif value is None and name in self._modules:
            del self._modules[name]
        object.__setattr__(self, name, value)

    def add_parameter(self, name: str, shape: Sequence[int], init: str) -> Tensor:
        if init not in INIT_KINDS:
            raise ValueError(f"Unknown initializer '{init}', expected one of {INIT_KINDS}")
        tensor = Tensor(np.zeros(tuple(shape)), requires_grad=True)
        self._params[name] = tensor
        self._inits[name] = init
        object.__setattr__(self, name, tensor)
        return tensor

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor, str]]:
        """Yield (dotted name, tensor, initializer) depth-first in registration order"""
        for name, tensor in self._params.items():
            yield prefix + name, tensor, self._inits[name]
        for name, module in self._modules.items():
            yield from module.named_parameters(prefix + name + ".")

    def parameters(self) -> ParameterStore:
        return ParameterStore([(name, t) for name, t, _ in self.named_parameters()])

    def forward(self, *args: Any, **kwargs: Any) -> Tensor:
        raise NotImplementedError(f"{type(self).__name__}.forward is not implemented")

    def __call__(self, *args: Any, **kwargs: Any) -> Tensor:
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, modules: Sequence[Module] = ()):
        super().__init__()
        self._items: List[Module] = []
        for module in modules:
            self.append(module)

    def append(self, module: Module) -> None:
        self._modules[str(len(self._items))] = module
        self._items.append(module)

    def __iter__(self) -> Iterator[Module]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, index: int) -> Module:
        return self._items[index]


def init_parameters(model: Module, seed: int) -> ParameterStore:
    """
    Initialize every parameter of a model deterministically

    Convolution weights are drawn from uniform(-b, b) with b = sqrt(6 / fan_in),
    fan_in = in_channels_per_group * K^2; biases and norm shifts start at 0,
    norm scales and attention temperatures at 1.

    Args:
        model: Module tree describing the architecture
        seed: Seed for the single generator consumed in parameter order

    Returns:
        The model's ParameterStore, tagged with the seed
    """
    rng = np.random.default_rng(seed)
    dtype = get_default_dtype()
    store = ParameterStore(rng_seed=seed)
    for name, tensor, init in model.named_parameters():
        if init == "fan_in_uniform":
            fan_in = int(np.prod(tensor.shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            tensor.data = rng.uniform(-bound, bound, size=tensor.shape).astype(dtype)
        elif init == "zeros":
            tensor.data = np.zeros(tensor.shape, dtype=dtype)
        else:
            tensor.data = np.ones(tensor.shape, dtype=dtype)
        tensor.zero_grad()
        store.add(name, tensor)
    logger.debug(f"Initialized {len(store)} tensors ({param_count(store)} values), seed={seed}")
    return store


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        padding: Optional[int] = None,
        groups: int = 1,
        bias: bool = True,
    ):
        super().__init__()
        if in_channels % groups or out_channels % groups:
            raise ShapeError(
                f"Conv2d: groups={groups} must divide {in_channels} input "
                f"and {out_channels} output channels"
            )
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding
        self.groups = groups
        weight_shape = (out_channels, in_channels // groups, kernel_size, kernel_size)
        self.add_parameter("weight", weight_shape, "fan_in_uniform")
        if bias:
            self.add_parameter("bias", (out_channels,), "zeros")
        else:
            object.__setattr__(self, "bias", None)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.in_channels:
            raise ShapeError(
                f"Conv2d expects {self.in_channels} input channels, got {x.shape[1]}"
            )
        return conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class LayerNorm2d(Module):
    """Layer normalization over the channel axis at every spatial position"""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.add_parameter("weight", (channels,), "ones")
        self.add_parameter("bias", (channels,), "zeros")

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm_channel(x, self.weight, self.bias, self.eps)


class ResidualBlock(Module):
    """conv3x3 -> relu -> conv3x3 with identity (or 1x1 projection) skip"""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.conv1 = Conv2d(in_channels, out_channels, 3)
        self.conv2 = Conv2d(out_channels, out_channels, 3)
        self.skip = Conv2d(in_channels, out_channels, 1) if in_channels != out_channels else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.in_channels:
            raise ShapeError(
                f"ResidualBlock expects {self.in_channels} channels, got {x.shape[1]}"
            )
        branch = self.conv2(relu(self.conv1(x)))
        identity = self.skip(x) if self.skip is not None else x
        return identity + branch


class FeedForward(Module):
    """Pre-norm gated-free FFN: 1x1 expand, 3x3 depthwise, relu, 1x1 project, residual"""

    def __init__(self, channels: int, expansion: int = 2, eps: float = 1e-5):
        super().__init__()
        hidden = channels * expansion
        self.channels = channels
        self.norm = LayerNorm2d(channels, eps)
        self.expand = Conv2d(channels, hidden, 1)
        self.dw = Conv2d(hidden, hidden, 3, groups=hidden)
        self.project = Conv2d(hidden, channels, 1)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.channels:
            raise ShapeError(f"FeedForward expects {self.channels} channels, got {x.shape[1]}")
        return x + self.project(relu(self.dw(self.expand(self.norm(x)))))


def residual_block_forward(block: ResidualBlock, x: Tensor) -> Tensor:
    return block(x)


def feed_forward_forward(ffn: FeedForward, x: Tensor) -> Tensor:
    return ffn(x)


def zero_branch(module: Module, names: Sequence[str]) -> None:
    """Set the named parameters of a module (and their biases) to zero"""
    params: Dict[str, Tensor] = {n: t for n, t, _ in module.named_parameters()}
    for name in names:
        for suffix in (".weight", ".bias"):
            tensor = params.get(name + suffix)
            if tensor is not None:
                tensor.data = np.zeros_like(tensor.data)
