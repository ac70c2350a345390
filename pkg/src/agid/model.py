"""Classifier variants: plain ViT, a small residual CNN, and two fusion hybrids.

Full-scale defaults mirror a base 224/16 transformer backbone; tiny mode keeps
the same topology laws at a size that trains on CPU in minutes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import torch
import torch.nn.functional as F
from torch import nn

from .data import NUM_CLASSES


class ModelVariant(Enum):
    VIT = "VIT"
    CNN = "CNN"
    CNN_TO_VIT = "CNN_TO_VIT"
    CNN_CONCAT_VIT = "CNN_CONCAT_VIT"


class ShapeMismatch(ValueError):
    pass


class NonFiniteOutput(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    variant: ModelVariant = ModelVariant.VIT
    image_side: int = 224
    patch_size: int = 16
    embed_dim: int = 768
    depth: int = 12
    heads: int = 12
    mlp_ratio: float = 4.0
    cnn_feature_dim: int = 64
    num_classes: int = NUM_CLASSES
    pretrained_checkpoint: str | None = None
    tiny_mode: bool = False

    def __post_init__(self):
        if self.image_side % self.patch_size != 0:
            raise ValueError(
                f"image_side {self.image_side} not divisible by patch_size {self.patch_size}")
        if self.embed_dim % self.heads != 0:
            raise ValueError(f"heads {self.heads} must divide embed_dim {self.embed_dim}")
        if self.cnn_feature_dim % 32 != 0:
            raise ValueError("cnn_feature_dim must be a multiple of 32")
        for name in ("image_side", "patch_size", "embed_dim", "depth", "heads", "num_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def token_count(self) -> int:
        # patch grid plus one class token
        return (self.image_side // self.patch_size) ** 2 + 1

    @classmethod
    def tiny(cls, variant: ModelVariant = ModelVariant.VIT, **overrides) -> "ModelConfig":
        base = cls(variant=variant, image_side=32, patch_size=16, embed_dim=64,
                   depth=2, heads=4, cnn_feature_dim=64, tiny_mode=True)
        return replace(base, **overrides) if overrides else base

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "image_side": self.image_side,
            "patch_size": self.patch_size,
            "embed_dim": self.embed_dim,
            "depth": self.depth,
            "heads": self.heads,
            "mlp_ratio": self.mlp_ratio,
            "cnn_feature_dim": self.cnn_feature_dim,
            "num_classes": self.num_classes,
            "tiny_mode": self.tiny_mode,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        kwargs = dict(raw)
        kwargs["variant"] = ModelVariant(kwargs["variant"])
        kwargs.pop("pretrained_checkpoint", None)
        return cls(**kwargs)


def _init_weights(module: nn.Module):
    if isinstance(module, (nn.Linear, nn.Conv2d)):
        nn.init.trunc_normal_(module.weight, std=0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, (nn.LayerNorm, nn.GroupNorm)):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


class TransformerBlock(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: float):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, hidden),
            nn.GELU(),
            nn.Linear(hidden, dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        a = self.norm1(x)
        x = x + self.attn(a, a, a, need_weights=False)[0]
        x = x + self.mlp(self.norm2(x))
        return x


class VitBackbone(nn.Module):
    """Patch embedding + class token + pre-norm transformer encoder."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.image_side = config.image_side
        self.patch_size = config.patch_size
        self.embed_dim = config.embed_dim
        self.patch_embed = nn.Conv2d(3, config.embed_dim,
                                     kernel_size=config.patch_size,
                                     stride=config.patch_size)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, config.embed_dim))
        self.pos_embed = nn.Parameter(torch.zeros(1, config.token_count, config.embed_dim))
        self.blocks = nn.ModuleList(
            TransformerBlock(config.embed_dim, config.heads, config.mlp_ratio)
            for _ in range(config.depth)
        )
        self.norm = nn.LayerNorm(config.embed_dim)
        self.apply(_init_weights)
        nn.init.trunc_normal_(self.cls_token, std=0.02)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)

    def patchify(self, x: torch.Tensor) -> torch.Tensor:
        """Embed image patches and prepend the class token: (B, N+1, D)."""
        expected = (3, self.image_side, self.image_side)
        if x.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise ShapeMismatch(f"expected (B, {expected[0]}, {expected[1]}, {expected[2]}), "
                                f"got {tuple(x.shape)}")
        tokens = self.patch_embed(x).flatten(2).transpose(1, 2)
        cls = self.cls_token.expand(x.shape[0], -1, -1)
        tokens = torch.cat([cls, tokens], dim=1)
        return tokens + self.pos_embed

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        tokens = self.patchify(x)
        for block in self.blocks:
            tokens = block(tokens)
        return self.norm(tokens)[:, 0]


class ResidualBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.gn1 = nn.GroupNorm(8, cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.gn2 = nn.GroupNorm(8, cout)
        if stride != 1 or cin != cout:
            self.shortcut = nn.Conv2d(cin, cout, 1, stride=stride, bias=False)
        else:
            self.shortcut = nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = F.relu(self.gn1(self.conv1(x)))
        out = self.gn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class CnnBackbone(nn.Module):
    """Three-block residual trunk, total stride 8, global-average pooled.

    GroupNorm keeps inference batch-independent and deterministic.
    """

    total_stride = 8

    def __init__(self, config: ModelConfig):
        super().__init__()
        f = config.cnn_feature_dim
        self.feature_dim = f
        self.stem = nn.Sequential(
            nn.Conv2d(3, f // 4, 3, padding=1, bias=False),
            nn.GroupNorm(8, f // 4),
            nn.ReLU(),
        )
        self.blocks = nn.Sequential(
            ResidualBlock(f // 4, f // 4, stride=2),
            ResidualBlock(f // 4, f // 2, stride=2),
            ResidualBlock(f // 2, f, stride=2),
        )
        self.apply(_init_weights)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeMismatch(f"expected (B, 3, H, W), got {tuple(x.shape)}")
        fmap = self.blocks(self.stem(x))
        pooled = fmap.mean(dim=(2, 3))
        return fmap, pooled


def _check_logits(logits: torch.Tensor) -> torch.Tensor:
    if not torch.isfinite(logits).all():
        raise NonFiniteOutput("non-finite values in classifier logits")
    return logits


class VitClassifier(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.vit = VitBackbone(config)
        self.head = nn.Linear(config.embed_dim, config.num_classes)
        nn.init.trunc_normal_(self.head.weight, std=0.02)
        nn.init.zeros_(self.head.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return _check_logits(self.head(self.vit(x)))


class CnnClassifier(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.cnn = CnnBackbone(config)
        self.head = nn.Linear(config.cnn_feature_dim, config.num_classes)
        nn.init.trunc_normal_(self.head.weight, std=0.02)
        nn.init.zeros_(self.head.bias)

    def forward_features(self, x: torch.Tensor):
        """Return (feature map, pooled vector, logits)."""
        fmap, pooled = self.cnn(x)
        return fmap, pooled, _check_logits(self.head(pooled))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.forward_features(x)[2]


class CnnToVitClassifier(nn.Module):
    """CNN feature map projected to 3 planes, upscaled, re-encoded by the ViT."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.cnn = CnnBackbone(config)
        self.to_planes = nn.Conv2d(config.cnn_feature_dim, 3, kernel_size=1)
        self.vit = VitBackbone(config)
        self.head = nn.Linear(config.embed_dim, config.num_classes)
        nn.init.trunc_normal_(self.to_planes.weight, std=0.02)
        nn.init.zeros_(self.to_planes.bias)
        nn.init.trunc_normal_(self.head.weight, std=0.02)
        nn.init.zeros_(self.head.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        fmap, _ = self.cnn(x)
        planes = self.to_planes(fmap)
        side = self.config.image_side
        upscaled = F.interpolate(planes, size=(side, side), mode="bilinear",
                                 align_corners=False)
        return _check_logits(self.head(self.vit(upscaled)))


class CnnConcatVitClassifier(nn.Module):
    """Class-token representation concatenated with the pooled CNN vector."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.vit = VitBackbone(config)
        self.cnn = CnnBackbone(config)
        self.head = nn.Linear(config.embed_dim + config.cnn_feature_dim,
                              config.num_classes)
        nn.init.trunc_normal_(self.head.weight, std=0.02)
        nn.init.zeros_(self.head.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        vit_repr = self.vit(x)
        _, pooled = self.cnn(x)
        return _check_logits(self.head(torch.cat([vit_repr, pooled], dim=1)))


_VARIANT_CLASSES = {
    ModelVariant.VIT: VitClassifier,
    ModelVariant.CNN: CnnClassifier,
    ModelVariant.CNN_TO_VIT: CnnToVitClassifier,
    ModelVariant.CNN_CONCAT_VIT: CnnConcatVitClassifier,
}


def build_model(config: ModelConfig, seed: int | None = None) -> nn.Module:
    """Construct the configured variant; seeding fixes the weight init."""
    if seed is not None:
        torch.manual_seed(seed)
    model = _VARIANT_CLASSES[config.variant](config)
    if config.pretrained_checkpoint:
        from .checkpoint import load_pretrained
        model = load_pretrained(config, config.pretrained_checkpoint, seed=seed)
    return model
