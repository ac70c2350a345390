"""Perturbed test set construction for robustness measurement.

A perturbed set replays the evaluation corpus under fixed corruptions:
horizontal flip, brightness reduction, additive Gaussian noise, and JPEG
recompression, next to an untouched CLEAN copy. Reports are broken out per
mode so robustness regressions are attributable to a specific corruption.
"""

from __future__ import annotations

import shutil
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .augment import RngStream, gaussian_noise, hflip, jpeg_compress
from .data import LabeledImage, Manifest, ManifestEntry, write_manifest
from .evaluation import EvalReport, evaluate

MODES = ("CLEAN", "HFLIP", "BRIGHTNESS", "NOISE", "JPEG")
POLICIES = ("ALL_MODES", "ONE_RANDOM")


@dataclass(frozen=True)
class PerturbationPlan:
    modes: tuple[str, ...] = MODES
    brightness_factor: float = 0.5
    noise_sigma: float = 0.1
    jpeg_quality: int = 50
    per_image_policy: str = "ALL_MODES"
    seed: int = 0

    def __post_init__(self):
        unknown = [m for m in self.modes if m not in MODES]
        if unknown:
            raise ValueError(f"unknown perturbation modes {unknown}")
        if not self.modes:
            raise ValueError("at least one mode is required")
        if len(set(self.modes)) != len(self.modes):
            raise ValueError("duplicate modes")
        if self.per_image_policy not in POLICIES:
            raise ValueError(f"per_image_policy must be one of {POLICIES}")
        if not 0.0 < self.brightness_factor <= 1.0:
            raise ValueError("brightness_factor must lie in (0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if not 1 <= self.jpeg_quality <= 100:
            raise ValueError("jpeg_quality must lie in [1, 100]")

    def to_dict(self) -> dict:
        return {
            "modes": list(self.modes),
            "brightness_factor": self.brightness_factor,
            "noise_sigma": self.noise_sigma,
            "jpeg_quality": self.jpeg_quality,
            "per_image_policy": self.per_image_policy,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "PerturbationPlan":
        kwargs = dict(raw)
        kwargs["modes"] = tuple(kwargs.get("modes", MODES))
        return cls(**kwargs)


def apply_mode(raster: np.ndarray, mode: str, plan: PerturbationPlan,
               rng: RngStream | None = None) -> np.ndarray:
    if mode == "CLEAN":
        return raster.copy()
    if mode == "HFLIP":
        return hflip(raster)
    if mode == "BRIGHTNESS":
        return np.clip(raster * np.float32(plan.brightness_factor),
                       0.0, 1.0).astype(np.float32)
    if mode == "NOISE":
        if rng is None:
            raise ValueError("NOISE mode needs an RngStream")
        return gaussian_noise(raster, plan.noise_sigma, rng)
    if mode == "JPEG":
        return jpeg_compress(raster, plan.jpeg_quality)
    raise ValueError(f"unknown perturbation mode {mode!r}")


def _mode_rng(plan: PerturbationPlan, image_index: int, mode: str) -> RngStream:
    return RngStream((plan.seed, image_index, MODES.index(mode)))


def build_perturbed_set(images: list[LabeledImage],
                        plan: PerturbationPlan) -> list[LabeledImage]:
    """Expand an image list into its perturbed counterpart, tagged by mode.

    ALL_MODES yields len(modes) variants per source image; ONE_RANDOM keeps
    the set size and assigns each image one mode drawn from (seed, index).
    """
    out = []
    for i, img in enumerate(images):
        if plan.per_image_policy == "ALL_MODES":
            chosen = plan.modes
        else:
            pick = np.random.default_rng((plan.seed, i)).integers(0, len(plan.modes))
            chosen = (plan.modes[int(pick)],)
        for mode in chosen:
            pixels = apply_mode(img.pixels, mode, plan, _mode_rng(plan, i, mode))
            out.append(replace(img, pixels=pixels, mode=mode))
    return out


def per_mode_report(model, images: list[LabeledImage],
                    batch_size: int = 64) -> dict[str, EvalReport]:
    """Evaluate a mode-tagged image list, overall and per mode."""
    reports = {"ALL": evaluate(model, images, batch_size=batch_size)}
    modes = sorted({img.mode for img in images if img.mode})
    for mode in modes:
        subset = [img for img in images if img.mode == mode]
        reports[mode] = evaluate(model, subset, batch_size=batch_size)
    return reports


def write_perturbed_set(manifest: Manifest, plan: PerturbationPlan,
                        out_dir: str | Path, side: int = 224) -> Path:
    """Materialise a perturbed copy of a manifest on disk.

    CLEAN entries are byte-for-byte copies of the source files. JPEG entries
    are actual JPEG files recompressed at the plan quality. Other modes are
    written as PNG. Returns the path of the new three-column manifest.
    """
    from .data import decode_and_resize

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, entry in enumerate(manifest.entries):
        src = manifest.root / entry.relative_path
        raster = None
        if plan.per_image_policy == "ALL_MODES":
            chosen = plan.modes
        else:
            pick = np.random.default_rng((plan.seed, i)).integers(0, len(plan.modes))
            chosen = (plan.modes[int(pick)],)
        for mode in chosen:
            stem = Path(entry.relative_path).stem
            if mode == "CLEAN":
                rel = f"{mode.lower()}/{i:05d}_{stem}{Path(entry.relative_path).suffix}"
                dest = out_dir / rel
                dest.parent.mkdir(parents=True, exist_ok=True)
                shutil.copyfile(src, dest)
            else:
                if raster is None:
                    raster = decode_and_resize(src, side=side)
                if mode == "JPEG":
                    rel = f"{mode.lower()}/{i:05d}_{stem}.jpg"
                    dest = out_dir / rel
                    dest.parent.mkdir(parents=True, exist_ok=True)
                    arr = (np.clip(raster, 0.0, 1.0) * 255.0).round().astype(np.uint8)
                    Image.fromarray(arr).save(dest, format="JPEG",
                                              quality=plan.jpeg_quality)
                else:
                    pixels = apply_mode(raster, mode, plan, _mode_rng(plan, i, mode))
                    rel = f"{mode.lower()}/{i:05d}_{stem}.png"
                    dest = out_dir / rel
                    dest.parent.mkdir(parents=True, exist_ok=True)
                    arr = (pixels * 255.0).round().astype(np.uint8)
                    Image.fromarray(arr).save(dest, format="PNG")
            entries.append(ManifestEntry(relative_path=rel,
                                         class_name=entry.class_name,
                                         mode=mode))
    manifest_path = out_dir / "manifest.tsv"
    write_manifest(entries, manifest_path)
    return manifest_path
