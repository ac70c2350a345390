"""Training loop: AdamW fine-tuning with on-the-fly augmentation.

Each epoch reshuffles the training set and draws a fresh augmentation plan
per image, both from counter-based RNG streams keyed by (seed, purpose,
epoch, index), so a run is reproducible end to end from its seed alone.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .augment import AugmentationSpec, RngStream, compose
from .checkpoint import save_checkpoint
from .data import EmptyDataset, LabeledImage, normalise
from .evaluation import EvalReport, evaluate
from .model import NonFiniteOutput

_SHUFFLE_KEY = 1002
_AUGMENT_KEY = 1001


class NonFiniteLoss(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-5
    weight_decay: float = 0.01
    batch_size: int = 128
    epochs: int = 15
    seed: int = 0
    augmentation: AugmentationSpec = field(default_factory=AugmentationSpec)
    augment_enabled: bool = True
    eval_every: int | None = None
    max_steps: int | None = None
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("learning_rate must be positive, weight_decay non-negative")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.eval_every is not None and self.eval_every < 1:
            raise ValueError("eval_every must be >= 1 when set")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be >= 1 when set")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
            "augment_enabled": self.augment_enabled,
            "augmentation": self.augmentation.to_dict(),
            "eval_every": self.eval_every,
            "max_steps": self.max_steps,
            "checkpoint_dir": self.checkpoint_dir,
        }


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    best_val_f1: float = float("-inf")
    best_path: Path | None = None
    history: list[dict] = field(default_factory=list)


def build_optimizer(model: nn.Module, config: TrainConfig) -> torch.optim.AdamW:
    """AdamW with weight decay on matrices and embeddings only.

    One-dimensional parameters (biases, norm scales) train without decay.
    """
    decay, no_decay = [], []
    for param in model.parameters():
        if not param.requires_grad:
            continue
        (decay if param.ndim >= 2 else no_decay).append(param)
    groups = [
        {"params": decay, "weight_decay": config.weight_decay},
        {"params": no_decay, "weight_decay": 0.0},
    ]
    return torch.optim.AdamW(groups, lr=config.learning_rate)


def train_step(model: nn.Module, optimizer: torch.optim.Optimizer,
               inputs: torch.Tensor, labels: torch.Tensor) -> float:
    model.train()
    try:
        logits = model(inputs)
    except NonFiniteOutput as exc:
        # Diverged weights surface as non-finite logits one op before the
        # loss; both are the same training failure.
        raise NonFiniteLoss(str(exc)) from exc
    loss = F.cross_entropy(logits, labels)
    if not torch.isfinite(loss):
        raise NonFiniteLoss(f"loss became non-finite at value {loss.item()!r}")
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    return float(loss.item())


def _prepare_batch(images: list[LabeledImage], indices: np.ndarray,
                   config: TrainConfig, epoch: int) -> tuple[torch.Tensor, torch.Tensor]:
    rasters = []
    labels = []
    for idx in indices:
        img = images[int(idx)]
        pixels = img.pixels
        if config.augment_enabled:
            stream = RngStream((config.seed, _AUGMENT_KEY, epoch, int(idx)))
            pixels = compose(pixels, config.augmentation, stream)
        rasters.append(normalise(pixels))
        labels.append(int(img.label))
    stack = np.ascontiguousarray(np.stack(rasters).transpose(0, 3, 1, 2))
    return torch.from_numpy(stack).float(), torch.tensor(labels, dtype=torch.long)


def fit(model: nn.Module, train_images: list[LabeledImage],
        val_images: list[LabeledImage], config: TrainConfig,
        out_dir: str | Path | None = None, quiet: bool = False) -> tuple[Path, TrainState]:
    """Train, checkpoint the best six-way validation F1, log history.

    Writes best.ckpt and history.jsonl under out_dir (default:
    config.checkpoint_dir) and returns the best checkpoint path with the
    final state. Validation runs every config.eval_every steps (if set)
    and at each epoch end.
    """
    if not train_images:
        raise EmptyDataset("training set is empty")
    if not val_images:
        raise EmptyDataset("validation set is empty")
    out_dir = Path(out_dir if out_dir is not None
                   else config.checkpoint_dir or "runs/train")
    out_dir.mkdir(parents=True, exist_ok=True)
    best_path = out_dir / "best.ckpt"
    history_path = out_dir / "history.jsonl"

    optimizer = build_optimizer(model, config)
    state = TrainState()
    batches_per_epoch = math.ceil(len(train_images) / config.batch_size)
    losses_since_eval: list[float] = []

    records = [{"record": "header",
                "train_config": config.to_dict(),
                "model_config": model.config.to_dict(),
                "n_train": len(train_images),
                "n_val": len(val_images)}]

    def run_eval(epoch: int) -> EvalReport:
        report = evaluate(model, val_images, batch_size=config.batch_size)
        mean_loss = (sum(losses_since_eval) / len(losses_since_eval)
                     if losses_since_eval else None)
        losses_since_eval.clear()
        records.append({
            "record": "eval",
            "step": state.step,
            "epoch": epoch,
            "train_loss": mean_loss,
            "val_f1_task_a": report.f1_task_a,
            "val_f1_task_b": report.f1_task_b,
        })
        if not quiet:
            loss_text = f"{mean_loss:.4f}" if mean_loss is not None else "n/a"
            print(f"step {state.step} epoch {epoch} loss {loss_text} "
                  f"val_f1_a {report.f1_task_a:.4f} val_f1_b {report.f1_task_b:.4f}")
        if report.f1_task_b > state.best_val_f1:
            state.best_val_f1 = report.f1_task_b
            save_checkpoint(model, model.config, best_path)
            state.best_path = best_path
        return report

    done = False
    for epoch in range(config.epochs):
        state.epoch = epoch
        order = RngStream((config.seed, _SHUFFLE_KEY, epoch)).generator.permutation(
            len(train_images))
        for b in range(batches_per_epoch):
            indices = order[b * config.batch_size:(b + 1) * config.batch_size]
            inputs, labels = _prepare_batch(train_images, indices, config, epoch)
            try:
                losses_since_eval.append(train_step(model, optimizer, inputs, labels))
            except NonFiniteLoss as exc:
                raise NonFiniteLoss(f"{exc}; last good step {state.step}") from exc
            state.step += 1
            if config.eval_every and state.step % config.eval_every == 0:
                run_eval(epoch)
            if config.max_steps and state.step >= config.max_steps:
                done = True
                break
        if losses_since_eval:
            run_eval(epoch)
        if done:
            break

    state.history = records
    with open(history_path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    if state.best_path is None:
        # no eval ever improved on -inf; cannot happen with non-empty val, but
        # keep the contract of returning a real checkpoint
        save_checkpoint(model, model.config, best_path)
        state.best_path = best_path
    return state.best_path, state
