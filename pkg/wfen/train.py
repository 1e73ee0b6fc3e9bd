"""
Training: L1 objective, Adam, and the step loop

Contains:
- l1_loss(): mean absolute error
- AdamState / adam_step() / Adam: bias-corrected Adam over a ParameterStore
- train_loop(): sample -> degrade -> forward -> L1 -> backward -> Adam
- TrainMixin: training entry point of the WFEN pipeline
"""

import time
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
from tqdm import tqdm

from .checkpoint import save_checkpoint
from .data import BatchSampler, DirectoryDataset, SyntheticDataset, make_batch
from .errors import NumericalError, ShapeError, TrainingDivergedError
from .model import WFENModel, build_model
from .nn import ParameterStore
from .tensor import Tensor, absolute, backward, scalar_mul
from .utils import batch_digest, logger

if TYPE_CHECKING:
    from .config import RunConfig, TrainConfig, WFENSettings

GradLike = Union[Tensor, np.ndarray]


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute difference over all elements"""
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss: prediction {pred.shape} vs target {target.shape}")
    return absolute(pred - target).mean()


@dataclass
class AdamState:
    """First/second moments per parameter and the shared step counter"""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_store(cls, store: Mapping[str, Tensor]) -> "AdamState":
        return cls(
            m={name: np.zeros_like(p.data) for name, p in store.items()},
            v={name: np.zeros_like(p.data) for name, p in store.items()},
        )


def adam_step(
    store: Mapping[str, Tensor],
    grads: Mapping[str, GradLike],
    state: AdamState,
    lr: float = 2e-4,
    beta1: float = 0.9,
    beta2: float = 0.99,
    eps: float = 1e-8,
) -> AdamState:
    """
    Apply one Adam update in place

    Args:
        store: Parameters to update
        grads: Gradient for every parameter in the store
        state: Moments and step counter, updated in place
        lr, beta1, beta2, eps: Adam hyperparameters

    Returns:
        The updated state

    Raises:
        KeyError: if any parameter has no gradient
    """
    missing = [name for name in store if name not in grads]
    if missing:
        raise KeyError(f"adam_step: no gradient for parameter '{missing[0]}'")

    state.t += 1
    correction1 = 1.0 - beta1**state.t
    correction2 = 1.0 - beta2**state.t
    for name, param in store.items():
        g = grads[name]
        g = g.data if isinstance(g, Tensor) else np.asarray(g)
        if g.shape != param.shape:
            raise ShapeError(f"adam_step: gradient for {name} is {g.shape}, expected {param.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / correction1
        v_hat = v / correction2
        param.data = (param.data - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype)
    return state


class Adam:
    """Adam optimizer bound to one ParameterStore"""

    def __init__(
        self,
        store: ParameterStore,
        lr: float = 2e-4,
        beta1: float = 0.9,
        beta2: float = 0.99,
        eps: float = 1e-8,
    ):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState.for_store(store)

    def step(self, grads: Mapping[str, GradLike]) -> None:
        adam_step(self.store, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)


@dataclass
class TrainReport:
    """Result of a training run"""

    losses: List[float]
    checkpoints: List[str]
    wall_time: float
    log_every: int = 1
    data_digest: str = ""
    param_count: int = 0

    @property
    def steps(self) -> int:
        return len(self.losses)

    @property
    def initial_loss(self) -> float:
        return self.losses[0] if self.losses else float("nan")

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")

    def logged_steps(self) -> List[int]:
        """1-based steps reported in the text form: every log_every-th and the last"""
        n = len(self.losses)
        steps = [s for s in range(1, n + 1) if s % self.log_every == 0]
        if n and (not steps or steps[-1] != n):
            steps.append(n)
        return steps

    def to_text(self) -> str:
        lines = [f"step {s} loss {self.losses[s - 1]:.6f}" for s in self.logged_steps()]
        return "\n".join(lines) + ("\n" if lines else "")

    def summary(self) -> str:
        return (
            f"Training Summary:\n"
            f"  Steps: {self.steps}\n"
            f"  Parameters: {self.param_count:,}\n"
            f"  Initial loss: {self.initial_loss:.6f}\n"
            f"  Final loss: {self.final_loss:.6f}\n"
            f"  Checkpoints: {len(self.checkpoints)}\n"
            f"  Wall time: {self.wall_time:.2f} seconds"
        )


def parameter_stats(store: Mapping[str, Tensor], limit: int = 5) -> Dict[str, Dict[str, float]]:
    """
    min/max/mean/non-finite count for the most suspicious parameters

    Parameters holding non-finite values come first; otherwise the ones with
    the largest magnitude.
    """
    rows = []
    for name, param in store.items():
        data = param.data
        finite = np.isfinite(data)
        bad = int(data.size - np.count_nonzero(finite))
        values = data[finite]
        peak = float(np.max(np.abs(values))) if values.size else float("inf")
        rows.append((bad, peak, name, values))
    rows.sort(key=lambda r: (r[0], r[1]), reverse=True)

    stats: Dict[str, Dict[str, float]] = OrderedDict()
    for bad, _, name, values in rows[:limit]:
        stats[name] = {
            "min": float(values.min()) if values.size else float("nan"),
            "max": float(values.max()) if values.size else float("nan"),
            "mean": float(values.mean()) if values.size else float("nan"),
            "nonfinite": float(bad),
        }
    return stats


def build_dataset(train: "TrainConfig") -> Sequence:
    if train.dataset == "directory":
        return DirectoryDataset(train.data_dir, train.image_size)
    return SyntheticDataset(train.seed, train.num_images, train.image_size)


def _checkpoint_path(final_path: Path, step: int) -> Path:
    return final_path.with_name(f"{final_path.stem}_step{step:06d}{final_path.suffix}")


def _fold_digests(digests: List[str]) -> str:
    joined = np.frombuffer("".join(digests).encode("ascii"), dtype=np.uint8)
    return batch_digest(list(range(len(digests))), [joined])


def train_loop(
    model: WFENModel,
    store: ParameterStore,
    run_config: "RunConfig",
    settings: Optional["WFENSettings"] = None,
    checkpoint_path: Union[str, Path, None] = None,
    config_text: Optional[str] = None,
    dataset: Optional[Sequence] = None,
) -> TrainReport:
    """
    Train a model in place

    Args:
        model: Network to train
        store: Its parameters (updated in place)
        run_config: Run configuration (train section drives the loop)
        settings: Process settings (progress bars)
        checkpoint_path: Final checkpoint location; None skips checkpointing
        config_text: Run-config text echoed into checkpoints (defaults to the JSON dump)
        dataset: Override for the configured training images

    Returns:
        TrainReport with the per-step loss curve

    Raises:
        TrainingDivergedError: when the loss or any parameter becomes non-finite
    """
    train = run_config.train
    show_progress = settings.show_progress if settings is not None else False
    config_text = config_text if config_text is not None else run_config.to_json()
    dataset = dataset if dataset is not None else build_dataset(train)
    batch_size = min(train.batch_size, len(dataset))
    if batch_size < train.batch_size:
        logger.warning(
            f"batch_size {train.batch_size} exceeds dataset size {len(dataset)}, using {batch_size}"
        )

    optimizer = Adam(store, train.lr, train.beta1, train.beta2, train.adam_eps)
    sampler = iter(BatchSampler(len(dataset), batch_size, train.seed))
    final_path = Path(checkpoint_path) if checkpoint_path is not None else None

    losses: List[float] = []
    checkpoints: List[str] = []
    digests: List[str] = []
    start = time.time()
    logger.info(
        f"Training {train.steps} steps, batch {batch_size}, lr {train.lr:g}, "
        f"{len(dataset)} images of {train.image_size}px, x{train.sr_factor}"
    )

    for step in tqdm(
        range(1, train.steps + 1), desc="Training", unit="step", disable=not show_progress
    ):
        indices = next(sampler)
        lr_up, hr = make_batch(dataset, indices, train.sr_factor)
        digests.append(batch_digest(indices, [hr.data]))

        store.zero_grad()
        try:
            loss = l1_loss(model(lr_up), hr)
            if train.loss_weight != 1.0:
                loss = scalar_mul(loss, train.loss_weight)
            value = loss.item()
            grads = backward(loss, store)
        except NumericalError as e:
            raise TrainingDivergedError(step, str(e), parameter_stats(store)) from e
        if not np.isfinite(value):
            raise TrainingDivergedError(step, f"loss is {value}", parameter_stats(store))

        optimizer.step(grads)
        if not all(np.all(np.isfinite(p.data)) for p in store.values()):
            raise TrainingDivergedError(
                step, "non-finite parameters after the update", parameter_stats(store)
            )
        losses.append(value)

        if step % train.log_every == 0:
            logger.info(f"step {step} loss {value:.6f}")
        if final_path is not None and train.checkpoint_every and step % train.checkpoint_every == 0:
            path = _checkpoint_path(final_path, step)
            checkpoints.append(str(save_checkpoint(path, store.state_dict(), config_text)))

    store.zero_grad()
    if final_path is not None:
        checkpoints.append(str(save_checkpoint(final_path, store.state_dict(), config_text)))

    report = TrainReport(
        losses=losses,
        checkpoints=checkpoints,
        wall_time=time.time() - start,
        log_every=train.log_every,
        data_digest=_fold_digests(digests),
        param_count=store.param_count(),
    )
    logger.info(report.summary())
    return report


class TrainMixin:
    """TrainMixin class containing the training entry point for WFEN"""

    # Type hints for mixin attributes (will be available when mixed into WFEN)
    run_config: "RunConfig"
    settings: "WFENSettings"
    config_text: Optional[str]

    def train(
        self,
        output_dir: Union[str, Path, None] = None,
        seed: Optional[int] = None,
        write_report: bool = True,
    ) -> TrainReport:
        """
        Build the configured model, train it and write checkpoint and report

        Args:
            output_dir: Overrides the configured output directory
            seed: Overrides train.seed (also seeds parameter initialization)
            write_report: Write the line-oriented loss report next to the checkpoint

        Returns:
            TrainReport
        """
        run_config = self.run_config
        config_text = self.config_text
        if seed is not None and seed != run_config.train.seed:
            run_config = run_config.model_copy(deep=True)
            run_config.train.seed = seed
            config_text = run_config.to_json()

        out = Path(output_dir) if output_dir is not None else run_config.output_dir(self.settings)
        out.mkdir(parents=True, exist_ok=True)

        model, store = build_model(run_config.model, run_config.train.seed)
        report = train_loop(
            model,
            store,
            run_config,
            self.settings,
            checkpoint_path=out / run_config.io.checkpoint_name,
            config_text=config_text,
        )
        if write_report:
            report_path = out / run_config.io.report_name
            report_path.write_text(report.to_text(), encoding="utf-8")
            logger.info(f"Wrote training report to {report_path}")
        return report
