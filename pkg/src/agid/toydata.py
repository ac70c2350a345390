"""Synthetic corpus for smoke tests and the bundled end-to-end walkthrough.

The six classes form three hue groups (red, green, blue). Each group pairs a
bright class (smooth radial gradient, high mean intensity) with a dim class
(fine checkerboard, low mean intensity), so classes are separable by colour
and brightness on clean data while the texture family remains the cue that
survives photometric distortion. Per-image jitter in pattern placement,
frequency, and level keeps images within a class from repeating.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .data import CLASS_NAMES, ManifestEntry, write_manifest

_HUES = ((1.0, 0.2, 0.2), (0.2, 1.0, 0.2), (0.2, 0.2, 1.0))


def _grid(side: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:side, 0:side].astype(np.float64)
    denom = max(side - 1, 1)
    return ys / denom, xs / denom


def _pattern(class_id: int, side: int, rng: np.random.Generator) -> np.ndarray:
    ys, xs = _grid(side)
    hue_group, level = divmod(class_id, 2)
    hue = _HUES[hue_group]

    if level == 0:
        # bright class: smooth radial gradient around a jittered centre
        cy, cx = rng.uniform(0.3, 0.7, size=2)
        radius = np.hypot(ys - cy, xs - cx)
        tex = 1.0 - np.clip(radius / radius.max(), 0.0, 1.0)
        base = rng.uniform(0.92, 0.98)
        low = rng.uniform(0.52, 0.58)
    else:
        # dim class: fine checkerboard at roughly half the brightness
        freq = rng.uniform(6.0, 10.0)
        phase = rng.uniform(0.0, 1.0)
        tex = (np.floor(xs * freq + phase) + np.floor(ys * freq + phase)) % 2
        base = rng.uniform(0.47, 0.53)
        low = rng.uniform(0.06, 0.10)

    value = low + (base - low) * tex
    raster = np.stack([value * h for h in hue], axis=-1)
    raster += rng.normal(0.0, 0.02, size=raster.shape)
    return np.clip(raster, 0.0, 1.0).astype(np.float32)


def generate_toy_corpus(root: str | Path, per_class: int = 10, side: int = 32,
                        seed: int = 0) -> Path:
    """Write per-class PNGs plus a manifest.tsv under root; return the manifest path."""
    root = Path(root)
    entries = []
    for class_id, class_name in enumerate(CLASS_NAMES):
        class_dir = root / "images" / class_name.lower()
        class_dir.mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            rng = np.random.default_rng([seed, class_id, i])
            raster = _pattern(class_id, side, rng)
            img = Image.fromarray((raster * 255.0).round().astype(np.uint8))
            path = class_dir / f"img_{i:03d}.png"
            img.save(path)
            entries.append(ManifestEntry(
                relative_path=str(path.relative_to(root)),
                class_name=class_name))
    manifest_path = root / "manifest.tsv"
    write_manifest(entries, manifest_path)
    return manifest_path
