"""Run configuration: YAML file plus command-line overrides (flags win)."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .augment import AugmentationSpec
from .model import ModelConfig, ModelVariant
from .perturb import PerturbationPlan
from .train import TrainConfig


@dataclass(frozen=True)
class DataConfig:
    manifest: str | None = None
    root: str | None = None
    fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)
    verify_files: bool = True

    def to_dict(self) -> dict:
        return {"manifest": self.manifest, "root": self.root,
                "fractions": list(self.fractions),
                "verify_files": self.verify_files}


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    perturb: PerturbationPlan = field(default_factory=PerturbationPlan)
    output_dir: str = "runs/default"
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "data": self.data.to_dict(),
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "perturb": self.perturb.to_dict(),
            "output_dir": self.output_dir,
            "seed": self.seed,
        }


def _build_model_config(raw: dict) -> ModelConfig:
    kwargs = dict(raw)
    if "variant" in kwargs:
        kwargs["variant"] = ModelVariant(kwargs["variant"])
    return ModelConfig(**kwargs)


def _build_train_config(raw: dict) -> TrainConfig:
    kwargs = dict(raw)
    if "augmentation" in kwargs:
        kwargs["augmentation"] = AugmentationSpec.from_dict(kwargs["augmentation"])
    return TrainConfig(**kwargs)


def load_config(path: str | Path | None) -> RunConfig:
    """Build a RunConfig from a YAML file; absent sections keep defaults."""
    if path is None:
        return RunConfig()
    raw = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: top level must be a mapping")
    data_raw = dict(raw.get("data", {}))
    if "fractions" in data_raw:
        data_raw["fractions"] = tuple(float(f) for f in data_raw["fractions"])
    known = {k: v for k, v in raw.items()
             if k in ("output_dir", "seed")}
    unknown = set(raw) - {"data", "model", "train", "perturb", "output_dir", "seed"}
    if unknown:
        raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
    return RunConfig(
        data=DataConfig(**data_raw),
        model=_build_model_config(raw.get("model", {})),
        train=_build_train_config(raw.get("train", {})),
        perturb=PerturbationPlan.from_dict(raw.get("perturb", {})) if raw.get("perturb")
        else PerturbationPlan(),
        **known,
    )


def apply_tiny(config: RunConfig) -> RunConfig:
    """Shrink the model for CPU smoke runs, keeping the chosen variant."""
    return replace(config, model=ModelConfig.tiny(variant=config.model.variant))


def with_seed(config: RunConfig, seed: int) -> RunConfig:
    """Re-root every stochastic component on one seed."""
    return replace(
        config,
        seed=seed,
        train=replace(config.train, seed=seed),
        perturb=replace(config.perturb, seed=seed),
    )
