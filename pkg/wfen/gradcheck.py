"""
Finite-difference gradient verification

Contains:
- grad_check(): central-difference comparison against reverse-mode gradients
- gradcheck_suite(): the per-layer verification table behind `wfen gradcheck`
"""

import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, NamedTuple, Optional, Tuple

import numpy as np

from .config import WFENConfig
from .data import bicubic_resize
from .errors import ConfigError, NumericalError
from .fdt import FDTBlock, GlobalSelfAttention, GSAConfig, RegionalSelfAttention, RSAConfig
from .functional import conv2d
from .model import WaveletFeatureDownsample, WaveletFeatureUpgrade, WFENModel
from .nn import Conv2d, FeedForward, LayerNorm2d, Module, ResidualBlock, init_parameters
from .tensor import Tensor, backward, concat, float64_mode, no_grad, record_kinks
from .utils import logger
from .wavelet import dwt2_haar, idwt2_haar, subbands_from

DENOMINATOR_FLOOR = 1e-12


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst: str
    coords: int
    skipped: int = 0


def grad_check_detailed(
    fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    step_eps: float = 1e-6,
    max_coords_per_param: Optional[int] = None,
    atol: float = 0.0,
    seed: int = 0,
    skip_kinks: bool = False,
) -> GradCheckResult:
    """
    Compare analytic gradients of a scalar function with central differences

    Args:
        fn: Deterministic closure computing a scalar loss from `params`
        params: Named 64-bit tensors to check (inputs may be included)
        step_eps: Central-difference step
        max_coords_per_param: Check at most this many random coordinates per tensor
        atol: Coordinates whose absolute discrepancy is within atol count as exact
        seed: Seed for coordinate sampling
        skip_kinks: Skip coordinates whose perturbations flip the sign of any relu or abs
            input, i.e. the central difference straddles a kink

    Returns:
        GradCheckResult with the max relative error, the worst coordinate, the
        number of checked coordinates and the number skipped at kinks

    Raises:
        NumericalError: non-64-bit parameters or non-finite values while perturbing
    """
    for name, tensor in params.items():
        if tensor.dtype != np.float64:
            raise NumericalError(f"grad_check needs 64-bit tensors, {name} is {tensor.dtype}")
        tensor.zero_grad()

    with record_kinks() as base_pattern:
        loss = fn()
    if loss.requires_grad:
        analytic = {name: g.data for name, g in backward(loss, params).items()}
    else:
        analytic = {name: np.zeros_like(t.data) for name, t in params.items()}

    rng = np.random.default_rng(seed)
    worst = GradCheckResult(0.0, "", 0)
    for name, tensor in params.items():
        flat = tensor.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_coords_per_param is not None and flat.size > max_coords_per_param:
            indices = np.sort(rng.choice(flat.size, size=max_coords_per_param, replace=False))
        grad = analytic[name].reshape(-1)

        for index in indices:
            original = flat[index]
            values = []
            crossed = False
            for step in (step_eps, -step_eps):
                flat[index] = original + step
                with no_grad(), record_kinks() as pattern:
                    try:
                        values.append(fn().item())
                    except NumericalError as e:
                        flat[index] = original
                        message = f"non-finite value perturbing {name}[{index}]: {e}"
                        raise NumericalError(message) from e
                crossed = crossed or not _same_pattern(base_pattern, pattern)
            flat[index] = original
            if not all(np.isfinite(values)):
                raise NumericalError(f"non-finite loss perturbing {name}[{index}]")

            if skip_kinks and crossed:
                worst.skipped += 1
                continue
            numeric = (values[0] - values[1]) / (2.0 * step_eps)
            diff = abs(grad[index] - numeric)
            worst.coords += 1
            if diff <= atol:
                continue
            rel = diff / max(abs(grad[index]), abs(numeric), DENOMINATOR_FLOOR)
            if rel > worst.max_rel_error:
                worst.max_rel_error = float(rel)
                worst.worst = f"{name}[{index}] analytic={grad[index]:.6e} numeric={numeric:.6e}"
    return worst


def _same_pattern(base: List[np.ndarray], other: List[np.ndarray]) -> bool:
    if len(base) != len(other):
        return False
    return all(np.array_equal(a, b) for a, b in zip(base, other))


def grad_check(
    fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    step_eps: float = 1e-6,
    max_coords_per_param: Optional[int] = None,
    atol: float = 0.0,
    seed: int = 0,
    skip_kinks: bool = False,
) -> float:
    """Max relative error between analytic and central-difference gradients"""
    result = grad_check_detailed(
        fn, params, step_eps, max_coords_per_param, atol, seed, skip_kinks
    )
    return result.max_rel_error


class GradCheckRow(NamedTuple):
    layer: str
    max_rel_error: float
    coords: int
    skipped: int = 0


def _module_case(
    module: Module, inputs: List[Tuple[int, ...]], seed: int
) -> Tuple[Callable[[], Tensor], Dict[str, Tensor]]:
    store = init_parameters(module, seed)
    rng = np.random.default_rng(seed + 1)
    # randomize norm affines and temperatures away from their degenerate init
    for name, tensor in store.items():
        if name.endswith("temperature"):
            tensor.data = rng.uniform(0.5, 1.5, size=tensor.shape)
        elif tensor.ndim == 1:
            tensor.data = tensor.data + rng.uniform(-0.2, 0.2, size=tensor.shape)
    xs = [Tensor(rng.standard_normal(shape), requires_grad=True) for shape in inputs]
    with no_grad():
        out_shape = module(*xs).shape
    weights = Tensor(rng.standard_normal(out_shape))

    def fn() -> Tensor:
        return (module(*xs) * weights).mean()

    params: Dict[str, Tensor] = {f"input{i}": x for i, x in enumerate(xs)}
    params.update(store)
    return fn, params


def _function_case(
    op: Callable[..., Tensor], inputs: List[Tuple[int, ...]], seed: int
) -> Tuple[Callable[[], Tensor], Dict[str, Tensor]]:
    rng = np.random.default_rng(seed)
    xs = [Tensor(rng.standard_normal(shape), requires_grad=True) for shape in inputs]
    with no_grad():
        out_shape = op(*xs).shape
    weights = Tensor(rng.standard_normal(out_shape))

    def fn() -> Tensor:
        return (op(*xs) * weights).mean()

    return fn, {f"input{i}": x for i, x in enumerate(xs)}


Case = Callable[[int], Tuple[Callable[[], Tensor], Dict[str, Tensor]]]


def _tiny_config() -> WFENConfig:
    return WFENConfig(tiny=True)


def _functional_conv(x: Tensor, w: Tensor) -> Tensor:
    return conv2d(x, w, padding=1, groups=2)


def _dwt_bands(x: Tensor) -> Tensor:
    return concat(list(dwt2_haar(x).bands()), axis=1)


def _idwt(ll: Tensor, lh: Tensor, hl: Tensor, hh: Tensor) -> Tensor:
    return idwt2_haar(subbands_from(ll, lh, hl, hh))


def _bicubic(x: Tensor) -> Tensor:
    return bicubic_resize(x, 3, 5)


class _WaveletChain(Module):
    """One encoder-decoder level: WFD, an FDT block at half resolution, 1x1 reduction, WFU"""

    def __init__(self, channels: int):
        super().__init__()
        self.down = WaveletFeatureDownsample(channels, 2 * channels, 4, 2, _tiny_config())
        self.block = FDTBlock(2 * channels, 4, 2, shifted=True)
        self.reduce = Conv2d(2 * channels, channels, 1)
        self.up = WaveletFeatureUpgrade(channels)

    def forward(self, x: Tensor) -> Tensor:
        return self.up(x, self.reduce(self.block(self.down(x))))


# name -> (builder, sampled coordinates per tensor or None for all)
_CASES: Dict[str, Tuple[Case, Optional[int]]] = {
    "conv": (lambda s: _module_case(Conv2d(3, 4, 3), [(1, 3, 5, 5)], s), None),
    "conv_strided": (
        lambda s: _module_case(Conv2d(4, 6, 3, stride=2, padding=1), [(2, 4, 6, 6)], s),
        None,
    ),
    "conv_depthwise": (lambda s: _module_case(Conv2d(4, 4, 3, groups=4), [(1, 4, 5, 5)], s), None),
    "conv_grouped": (
        lambda s: _function_case(_functional_conv, [(1, 4, 4, 4), (6, 2, 3, 3)], s),
        None,
    ),
    "layer_norm": (lambda s: _module_case(LayerNorm2d(4), [(2, 4, 3, 3)], s), None),
    "dwt": (lambda s: _function_case(_dwt_bands, [(1, 2, 4, 4)], s), None),
    "idwt": (lambda s: _function_case(_idwt, [(1, 2, 2, 2)] * 4, s), None),
    "bicubic": (lambda s: _function_case(_bicubic, [(1, 2, 8, 8)], s), None),
    "residual": (lambda s: _module_case(ResidualBlock(4, 6), [(1, 4, 6, 6)], s), None),
    "ffn": (lambda s: _module_case(FeedForward(4), [(1, 4, 4, 4)], s), None),
    "rsa": (
        lambda s: _module_case(
            RegionalSelfAttention(4, RSAConfig(4, shifted=True)), [(1, 4, 8, 8)], s
        ),
        None,
    ),
    "rsa_qk_norm": (
        lambda s: _module_case(
            RegionalSelfAttention(4, RSAConfig(4, shifted=True, qk_norm=True)), [(1, 4, 8, 8)], s
        ),
        None,
    ),
    "gsa": (lambda s: _module_case(GlobalSelfAttention(GSAConfig(4, 2)), [(1, 4, 8, 8)], s), None),
    "gsa_qk_norm": (
        lambda s: _module_case(
            GlobalSelfAttention(GSAConfig(4, 2, qk_norm=True)), [(1, 4, 8, 8)], s
        ),
        None,
    ),
    "fdt": (lambda s: _module_case(FDTBlock(4, 4, 2, shifted=True), [(1, 4, 8, 8)], s), 24),
    "wfd": (
        lambda s: _module_case(
            WaveletFeatureDownsample(4, 8, 4, 2, _tiny_config()), [(1, 4, 8, 8)], s
        ),
        24,
    ),
    "wfu": (
        lambda s: _module_case(WaveletFeatureUpgrade(4), [(1, 4, 8, 8), (1, 4, 4, 4)], s),
        24,
    ),
    "wavelet_chain": (lambda s: _module_case(_WaveletChain(4), [(1, 4, 8, 8)], s), 12),
    "model": (lambda s: _module_case(WFENModel(_tiny_config()), [(1, 3, 16, 16)], s), 4),
}

LAYER_CASES = tuple(name for name in _CASES if name != "model")


def gradcheck_suite(
    scope: str = "all",
    seed: int = 0,
    step_eps: float = 1e-6,
    atol: float = 1e-8,
    skip_kinks: bool = True,
) -> List[GradCheckRow]:
    """
    Run the 64-bit gradient check over a set of layers

    Args:
        scope: "all", "layers" (everything but the full model), "model", or one case name
        seed: Seed for parameters, inputs and coordinate sampling
        step_eps: Central-difference step
        atol: Absolute discrepancy treated as exact (round-off floor of the differences)
        skip_kinks: Leave out coordinates whose perturbations cross a relu kink

    Returns:
        One row per case: (layer, max_rel_error, checked coordinates, skipped at kinks)
    """
    if scope == "all":
        names = list(_CASES)
    elif scope == "layers":
        names = list(LAYER_CASES)
    elif scope in _CASES:
        names = [scope]
    else:
        raise ConfigError(
            [f"unknown gradcheck scope '{scope}', valid: all, layers, {', '.join(_CASES)}"]
        )

    rows: List[GradCheckRow] = []
    with float64_mode():
        for name in names:
            builder, max_coords = _CASES[name]
            start = time.time()
            fn, params = builder(seed)
            result = grad_check_detailed(
                fn, params, step_eps, max_coords, atol, seed, skip_kinks
            )
            rows.append(
                GradCheckRow(name, result.max_rel_error, result.coords, result.skipped)
            )
            logger.debug(
                f"gradcheck {name}: max_rel={result.max_rel_error:.3e} over {result.coords} coords "
                f"({result.skipped} at kinks) "
                f"in {time.time() - start:.1f}s {result.worst}"
            )
    return rows
