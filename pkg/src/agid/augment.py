"""Training-time perturbation kernels and their stochastic composer.

All kernels take a float32 (H, W, 3) raster with values in [0, 1] and return
one of the same shape and range. The same kernels back the perturbed-test-set
generator so train-time and test-set distortions cannot drift apart.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from PIL import Image
from scipy.ndimage import map_coordinates

# Fixed composition order: geometric ops first so noise and compression
# statistics are not resampled afterwards.
OPERATOR_ORDER = (
    "hflip",
    "vflip",
    "color_jitter",
    "rotate",
    "random_crop",
    "gaussian_noise",
    "jpeg_compress",
)


class RngStream:
    """Seeded random stream: identical seed gives identical draws everywhere.

    Child streams derived via `child(*keys)` are statistically independent,
    which keeps per-image augmentation reproducible under parallel decoding.
    """

    def __init__(self, seed):
        self.seed = tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, *keys: int) -> "RngStream":
        return RngStream(self.seed + tuple(int(k) for k in keys))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed})"


@dataclass(frozen=True)
class AugmentationSpec:
    """Parameter ranges and application probabilities for the perturbations.

    Ranges follow the training recipe: brightness factors 0.45-0.55, JPEG
    quality 30-70, rotation 0-90 degrees, additive noise sigma up to 0.3,
    with each operator applied independently (probability band 0.2-0.5).
    """

    brightness_range: tuple[float, float] = (0.45, 0.55)
    jpeg_quality_range: tuple[int, int] = (30, 70)
    rotation_range_deg: tuple[float, float] = (0.0, 90.0)
    noise_sigma_max: float = 0.3
    crop_scale_range: tuple[float, float] = (0.8, 1.0)
    apply_prob: float = 0.35
    per_op_prob: Mapping[str, float] = field(default_factory=dict)
    enabled: frozenset[str] = frozenset(OPERATOR_ORDER)

    def __post_init__(self):
        for name in ("brightness_range", "jpeg_quality_range",
                     "rotation_range_deg", "crop_scale_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: lo {lo} > hi {hi}")
        qlo, qhi = self.jpeg_quality_range
        if qlo < 1 or qhi > 100:
            raise ValueError(f"jpeg qualities must lie in [1, 100], got {self.jpeg_quality_range}")
        if self.noise_sigma_max < 0:
            raise ValueError("noise_sigma_max must be >= 0")
        probs = dict(self.per_op_prob)
        probs["apply_prob"] = self.apply_prob
        for key, p in probs.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {key}={p} outside [0, 1]")
        unknown = set(self.enabled) - set(OPERATOR_ORDER)
        unknown |= set(self.per_op_prob) - set(OPERATOR_ORDER)
        if unknown:
            raise ValueError(f"unknown operator names: {sorted(unknown)}")

    def prob(self, op: str) -> float:
        return self.per_op_prob.get(op, self.apply_prob)

    def to_dict(self) -> dict:
        return {
            "brightness_range": list(self.brightness_range),
            "jpeg_quality_range": list(self.jpeg_quality_range),
            "rotation_range_deg": list(self.rotation_range_deg),
            "noise_sigma_max": self.noise_sigma_max,
            "crop_scale_range": list(self.crop_scale_range),
            "apply_prob": self.apply_prob,
            "per_op_prob": dict(self.per_op_prob),
            "enabled": sorted(self.enabled),
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "AugmentationSpec":
        kwargs = {}
        for name in ("brightness_range", "rotation_range_deg", "crop_scale_range"):
            if name in raw:
                lo, hi = raw[name]
                kwargs[name] = (float(lo), float(hi))
        if "jpeg_quality_range" in raw:
            lo, hi = raw["jpeg_quality_range"]
            kwargs["jpeg_quality_range"] = (int(lo), int(hi))
        for name in ("noise_sigma_max", "apply_prob"):
            if name in raw:
                kwargs[name] = float(raw[name])
        if "per_op_prob" in raw:
            kwargs["per_op_prob"] = {k: float(v) for k, v in raw["per_op_prob"].items()}
        if "enabled" in raw:
            kwargs["enabled"] = frozenset(raw["enabled"])
        return cls(**kwargs)


def color_jitter(raster: np.ndarray, factor: float) -> np.ndarray:
    """Scale pixel intensities by `factor`, clamped back into [0, 1]."""
    return np.clip(raster * np.float32(factor), 0.0, 1.0)


def hflip(raster: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(raster[:, ::-1, :])


def vflip(raster: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(raster[::-1, :, :])


def jpeg_compress(raster: np.ndarray, quality: int) -> np.ndarray:
    """Round-trip through a baseline JPEG codec at the given quality.

    Values are quantised to 8 bits on the way in; that loss is inherent to
    the format.
    """
    if not 1 <= int(quality) <= 100:
        raise ValueError(f"quality must lie in [1, 100], got {quality}")
    as8 = np.round(np.clip(raster, 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(as8).save(buf, format="JPEG", quality=int(quality))
    buf.seek(0)
    with Image.open(buf) as img:
        out = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return out


def rotate(raster: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotate counter-clockwise about the raster center, bilinear, zero fill."""
    h, w = raster.shape[:2]
    a = np.deg2rad(angle_deg)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    cos, sin = np.cos(a), np.sin(a)
    # Snap coordinates to 9 decimals: exact multiples of 90 degrees otherwise
    # land epsilon outside the grid and get zero-filled.
    sy = np.round(cos * (yy - cy) + sin * (xx - cx) + cy, 9)
    sx = np.round(-sin * (yy - cy) + cos * (xx - cx) + cx, 9)
    out = np.empty_like(raster)
    for c in range(raster.shape[2]):
        out[:, :, c] = map_coordinates(raster[:, :, c], [sy, sx],
                                       order=1, mode="constant", cval=0.0)
    return out


def gaussian_noise(raster: np.ndarray, sigma: float, rng: RngStream) -> np.ndarray:
    """Add i.i.d. zero-mean Gaussian noise, clamped back into [0, 1]."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    noise = rng.generator.normal(0.0, float(sigma), size=raster.shape)
    return np.clip(raster.astype(np.float64) + noise, 0.0, 1.0).astype(np.float32)


def crop_resize(raster: np.ndarray, window, out_hw=None) -> np.ndarray:
    """Resize an integer crop window back to `out_hw` with bilinear sampling.

    Half-pixel sample centers, so the full-frame window is the identity.
    """
    h, w = raster.shape[:2]
    out_h, out_w = out_hw if out_hw is not None else (h, w)
    r0, c0, ch, cw = window
    ys = r0 + (np.arange(out_h) + 0.5) * ch / out_h - 0.5
    xs = c0 + (np.arange(out_w) + 0.5) * cw / out_w - 0.5
    sy, sx = np.meshgrid(ys, xs, indexing="ij")
    out = np.empty((out_h, out_w, raster.shape[2]), dtype=raster.dtype)
    for c in range(raster.shape[2]):
        out[:, :, c] = map_coordinates(raster[:, :, c], [sy, sx],
                                       order=1, mode="nearest")
    return out


def _sample_crop_window(h: int, w: int, scale: float, aspect: float, rng: RngStream):
    area = scale * h * w
    cw = min(w, max(1, int(round(np.sqrt(area * aspect)))))
    ch = min(h, max(1, int(round(np.sqrt(area / aspect)))))
    r0 = int(rng.generator.integers(0, h - ch + 1))
    c0 = int(rng.generator.integers(0, w - cw + 1))
    return (r0, c0, ch, cw)


def random_crop(raster: np.ndarray, scale: float, rng: RngStream) -> np.ndarray:
    """Crop a random window of ~scale×area (aspect in [3/4, 4/3]), resize back."""
    h, w = raster.shape[:2]
    aspect = float(rng.generator.uniform(3.0 / 4.0, 4.0 / 3.0))
    window = _sample_crop_window(h, w, scale, aspect, rng)
    return crop_resize(raster, window)


def sample_plan(spec: AugmentationSpec, rng: RngStream) -> list[tuple[str, dict]]:
    """Draw the apply/skip decisions and scalar parameters for one image.

    Operators are visited in OPERATOR_ORDER; each enabled one is applied with
    its configured probability, with parameters drawn uniformly from their
    ranges. Window placement and the noise field are drawn at apply time.
    """
    gen = rng.generator
    plan: list[tuple[str, dict]] = []
    for op in OPERATOR_ORDER:
        if op not in spec.enabled:
            continue
        if gen.uniform() >= spec.prob(op):
            continue
        params: dict = {}
        if op == "color_jitter":
            params["factor"] = float(gen.uniform(*spec.brightness_range))
        elif op == "rotate":
            params["angle_deg"] = float(gen.uniform(*spec.rotation_range_deg))
        elif op == "random_crop":
            params["scale"] = float(gen.uniform(*spec.crop_scale_range))
        elif op == "gaussian_noise":
            params["sigma"] = float(gen.uniform(0.0, spec.noise_sigma_max))
        elif op == "jpeg_compress":
            lo, hi = spec.jpeg_quality_range
            params["quality"] = int(gen.integers(lo, hi + 1))
        plan.append((op, params))
    return plan


def apply_plan(raster: np.ndarray, plan, rng: RngStream) -> np.ndarray:
    out = raster
    for op, params in plan:
        if op == "hflip":
            out = hflip(out)
        elif op == "vflip":
            out = vflip(out)
        elif op == "color_jitter":
            out = color_jitter(out, params["factor"])
        elif op == "rotate":
            out = rotate(out, params["angle_deg"])
        elif op == "random_crop":
            out = random_crop(out, params["scale"], rng)
        elif op == "gaussian_noise":
            out = gaussian_noise(out, params["sigma"], rng)
        elif op == "jpeg_compress":
            out = jpeg_compress(out, params["quality"])
        else:
            raise ValueError(f"unknown operator {op!r}")
    return out


def compose(raster: np.ndarray, spec: AugmentationSpec, rng: RngStream,
            trace: list | None = None) -> np.ndarray:
    """Apply the stochastic augmentation pipeline to one raster.

    Pure in (raster, spec, rng seed). When `trace` is given, the sampled
    (operator, params) pairs are appended to it.
    """
    plan = sample_plan(spec, rng)
    if trace is not None:
        trace.extend(plan)
    return apply_plan(raster, plan, rng)
