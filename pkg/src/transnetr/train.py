"""Training loop: augment -> forward -> BCE+Dice -> backward -> Adam.

Each run is fully determined by the model seed, ``TrainConfig.seed``, and
the data. A checkpoint captures parameters, BN statistics, Adam moments, the
generator state, and the batch sampler position, so a resumed run continues
exactly where the uninterrupted one would be.
"""

from __future__ import annotations

import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from .archive import assign_state, read_archive, write_archive
from .augment import AUGMENTATIONS, AugmentConfig, augment
from .data import DatasetManifest, Sample, stack_batch
from .losses import bce_dice_loss
from .metrics import MetricsReport, evaluate
from .model import ModelConfig
from .optim import AdamConfig, OptimizerState, adam_step
from .tensor import Tensor

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 8
    max_steps: int = 500
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    augment: Sequence[str] = AUGMENTATIONS
    augment_p: float = 0.5
    bce_weight: float = 1.0
    dice_weight: float = 1.0
    checkpoint_every: int = 0
    val_every: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_steps < 0:
            raise ValueError(f"max_steps must be >= 0, got {self.max_steps}")
        AugmentConfig(enabled=frozenset(self.augment))
        self.augment = tuple(a for a in AUGMENTATIONS if a in set(self.augment))

    @property
    def adam(self) -> AdamConfig:
        return AdamConfig(self.learning_rate, self.beta1, self.beta2, self.eps)

    @property
    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(enabled=frozenset(self.augment), p=self.augment_p)

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["augment"] = list(self.augment)
        return d


@dataclass
class History:
    losses: List[float] = field(default_factory=list)
    validation: List[Dict[str, float]] = field(default_factory=list)

    def to_csv(self) -> str:
        rows = ["step,loss"] + [f"{i + 1},{v!r}" for i, v in enumerate(self.losses)]
        return "\n".join(rows) + "\n"

    def moving_average(self, window: int = 50) -> np.ndarray:
        x = np.asarray(self.losses)
        if len(x) < window:
            return np.array([x.mean()]) if len(x) else x
        return np.convolve(x, np.ones(window) / window, mode="valid")


@dataclass
class Checkpoint:
    model_state: Dict[str, np.ndarray]
    optimizer: OptimizerState
    step: int
    train_config: Dict[str, Any]
    model_config: Dict[str, Any]
    rng_state: Dict[str, Any]
    sampler: Dict[str, Any]
    history: History


class BatchSampler:
    """Shuffled mini-batches; a fresh permutation whenever the current one runs short."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator) -> None:
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = rng
        self.perm: List[int] = []
        self.cursor = 0

    def next(self) -> List[int]:
        if self.cursor + self.batch_size > len(self.perm):
            self.perm = [int(i) for i in self.rng.permutation(self.n)]
            self.cursor = 0
        idx = self.perm[self.cursor : self.cursor + self.batch_size]
        self.cursor += self.batch_size
        return idx

    def state(self) -> Dict[str, Any]:
        return {"perm": list(self.perm), "cursor": self.cursor}

    def restore(self, state: Dict[str, Any]) -> None:
        self.perm = [int(i) for i in state["perm"]]
        self.cursor = int(state["cursor"])


def _materialize(dataset, resolution) -> List[Sample]:
    if isinstance(dataset, DatasetManifest):
        return dataset.load(resolution)
    return list(dataset)


def save_checkpoint(path: str, model, state: OptimizerState, step: int, config: TrainConfig, rng: np.random.Generator, sampler: BatchSampler, history: History) -> None:
    tensors: Dict[str, np.ndarray] = {}
    for name, arr in model.state_dict().items():
        tensors[f"model/{name}"] = arr
    for name in state.m:
        tensors[f"adam/m/{name}"] = state.m[name]
    for name in state.v:
        tensors[f"adam/v/{name}"] = state.v[name]
    meta = {
        "kind": "checkpoint",
        "step": step,
        "adam_t": state.t,
        "train_config": config.to_dict(),
        "model_config": model.config.to_dict(),
        "rng_state": rng.bit_generator.state,
        "sampler": sampler.state(),
        "losses": list(history.losses),
        "validation": list(history.validation),
    }
    write_archive(path, tensors, meta)


def load_checkpoint(path: str) -> Checkpoint:
    tensors, meta = read_archive(path)
    if meta.get("kind") != "checkpoint":
        raise ValueError(f"{path} is a weight archive, not a training checkpoint")
    model_state = {k[len("model/") :]: v for k, v in tensors.items() if k.startswith("model/")}
    m = {k[len("adam/m/") :]: v for k, v in tensors.items() if k.startswith("adam/m/")}
    v = {k[len("adam/v/") :]: v for k, v in tensors.items() if k.startswith("adam/v/")}
    return Checkpoint(
        model_state=model_state,
        optimizer=OptimizerState(m, v, int(meta["adam_t"])),
        step=int(meta["step"]),
        train_config=meta["train_config"],
        model_config=meta["model_config"],
        rng_state=meta["rng_state"],
        sampler=meta["sampler"],
        history=History(list(meta["losses"]), list(meta.get("validation", []))),
    )


def restore_model(model, ckpt: Checkpoint) -> None:
    """Load checkpoint weights into ``model``; mismatches name the offending tensor."""
    assign_state(model, ckpt.model_state, strict=True)


def train(
    model,
    dataset: Union[DatasetManifest, Sequence[Sample]],
    config: TrainConfig,
    val_dataset=None,
    out_dir: Optional[str] = None,
    resume: Optional[Union[str, Checkpoint]] = None,
) -> History:
    """Optimize ``model`` in place and return the per-step loss history.

    Checkpoints go to ``out_dir/checkpoint_<step>.tnr`` every
    ``checkpoint_every`` steps and to ``out_dir/checkpoint_last.tnr`` at the
    end (when ``out_dir`` is given).
    """
    samples = _materialize(dataset, model.config.train_resolution)
    if not samples:
        raise TrainingError("training dataset is empty")
    res = tuple(model.config.train_resolution)
    for s in samples:
        if s.mask.shape != res:
            raise TrainingError(f"sample {s.id!r} has resolution {s.mask.shape}, model expects {res}")

    params = model.parameters()
    rng = np.random.default_rng(config.seed)
    sampler = BatchSampler(len(samples), config.batch_size, rng)
    state = OptimizerState.zeros_like(params)
    history = History()
    step = 0
    if resume is not None:
        ckpt = load_checkpoint(resume) if isinstance(resume, (str, os.PathLike)) else resume
        restore_model(model, ckpt)
        params = model.parameters()
        state = ckpt.optimizer
        rng.bit_generator.state = ckpt.rng_state
        sampler.restore(ckpt.sampler)
        history = ckpt.history
        step = ckpt.step
    aug = config.augment_config
    adam = config.adam
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    while step < config.max_steps:
        step += 1
        batch = [augment(samples[i], rng, aug) for i in sampler.next()]
        images, masks = stack_batch(batch)
        model.train()
        model.zero_grad()
        try:
            pred = model(Tensor(images))
            loss = bce_dice_loss(pred, Tensor(masks), config.bce_weight, config.dice_weight)
            loss.backward()
        except FloatingPointError as exc:
            raise TrainingError(f"non-finite values at step {step}: {exc}") from exc
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingError(f"non-finite loss at step {step}")
        adam_step(params, state, adam)
        history.losses.append(value)

        if config.val_every and val_dataset is not None and step % config.val_every == 0:
            agg = evaluate(model, val_dataset).overall
            history.validation.append({"step": step, **agg})
            log.info("step %d val mDSC %.4f", step, agg["dsc"])
        if out_dir and config.checkpoint_every and step % config.checkpoint_every == 0:
            save_checkpoint(os.path.join(out_dir, f"checkpoint_{step:06d}.tnr"), model, state, step, config, rng, sampler, history)
        if step % 50 == 0:
            log.info("step %d loss %.5f", step, value)

    if out_dir:
        save_checkpoint(os.path.join(out_dir, "checkpoint_last.tnr"), model, state, step, config, rng, sampler, history)
    model.eval()
    return history


def model_config_from_checkpoint(path: str) -> ModelConfig:
    _, meta = read_archive(path)
    return ModelConfig.from_dict(meta["model_config"])
