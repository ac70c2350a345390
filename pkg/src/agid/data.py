"""Corpus ingestion: class labels, manifests, preprocessing, and splits."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum, IntEnum
from pathlib import Path

import numpy as np
from PIL import Image

# Backbone-family preprocessing constants. Alternates can be supplied through
# the run config; these are the defaults recorded in every report digest.
NORM_MEAN = (0.5, 0.5, 0.5)
NORM_STD = (0.5, 0.5, 0.5)
DEFAULT_IMAGE_SIDE = 224


class ClassLabel(IntEnum):
    """The six corpus classes: real photos plus five generator families."""

    REAL = 0
    SD21 = 1
    SD3 = 2
    SDXL = 3
    DALLE3 = 4
    MIDJOURNEY6 = 5


NUM_CLASSES = len(ClassLabel)
CLASS_NAMES = tuple(label.name for label in ClassLabel)


class BinaryLabel(IntEnum):
    NOT_AI = 0
    AI = 1


class Split(Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class DataError(Exception):
    """Base for corpus ingestion failures."""


class MissingFile(DataError):
    def __init__(self, path):
        super().__init__(f"file not found: {path}")
        self.path = str(path)


class MalformedRecord(DataError):
    def __init__(self, line_no: int, line: str):
        super().__init__(f"malformed manifest record at line {line_no}: {line!r}")
        self.line_no = line_no


class UnknownClass(DataError):
    def __init__(self, name: str):
        super().__init__(f"unknown class name: {name!r}")
        self.name = name


class DecodeError(DataError):
    def __init__(self, path, reason: str = ""):
        detail = f": {reason}" if reason else ""
        super().__init__(f"cannot decode image {path}{detail}")
        self.path = str(path)


class BadFractions(DataError):
    pass


class EmptyDataset(DataError):
    pass


def class_from_name(name: str) -> ClassLabel:
    try:
        return ClassLabel[name]
    except KeyError:
        raise UnknownClass(name) from None


def binary_label(label: ClassLabel) -> BinaryLabel:
    return BinaryLabel.NOT_AI if label is ClassLabel.REAL else BinaryLabel.AI


@dataclass(frozen=True)
class ManifestEntry:
    relative_path: str
    class_name: str
    mode: str | None = None  # set only in perturbed-set manifests

    @property
    def label(self) -> ClassLabel:
        return class_from_name(self.class_name)


@dataclass(frozen=True)
class Manifest:
    entries: tuple[ManifestEntry, ...]
    root: Path

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class LabeledImage:
    """Decoded raster plus its six-way label.

    pixels: float32 array of shape (H, W, 3) with values in [0, 1].
    """

    pixels: np.ndarray
    label: ClassLabel
    source_path: str
    split: Split
    mode: str | None = None

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"pixels must be (H, W, 3), got {px.shape}")
        if float(px.min()) < 0.0 or float(px.max()) > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")

    @property
    def binary(self) -> BinaryLabel:
        return binary_label(self.label)


def load_manifest(path: str | Path, root: str | Path | None = None,
                  verify_files: bool = False) -> Manifest:
    """Parse a line-oriented manifest: `relative/path<TAB>CLASS[<TAB>MODE]`.

    `#`-prefixed and blank lines are ignored. The image root defaults to the
    manifest's own directory.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    root = Path(root) if root is not None else path.parent

    entries: list[ManifestEntry] = []
    with path.open("r", encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3) or not parts[0] or not parts[1]:
                raise MalformedRecord(line_no, line)
            rel, class_name = parts[0], parts[1]
            class_from_name(class_name)  # raises UnknownClass early
            mode = parts[2] if len(parts) == 3 else None
            if verify_files and not (root / rel).is_file():
                raise MissingFile(root / rel)
            entries.append(ManifestEntry(rel, class_name, mode))
    return Manifest(tuple(entries), root)


def write_manifest(entries, path: str | Path) -> Path:
    """Write manifest records; inverse of load_manifest."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for e in entries:
        cols = [e.relative_path, e.class_name]
        if e.mode is not None:
            cols.append(e.mode)
        lines.append("\t".join(cols))
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def decode_image(path: str | Path) -> np.ndarray:
    """Decode an image file to a float32 (H, W, 3) raster in [0, 1].

    Grayscale inputs are replicated to 3 channels; alpha is dropped.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float32) / 255.0
    except MissingFile:
        raise
    except Exception as exc:  # PIL raises several unrelated types here
        raise DecodeError(path, str(exc)) from exc
    return arr


def decode_and_resize(path: str | Path, side: int = DEFAULT_IMAGE_SIDE) -> np.ndarray:
    """Decode and bilinearly resize to a square side×side×3 raster in [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            if rgb.size != (side, side):
                rgb = rgb.resize((side, side), Image.BILINEAR)
            arr = np.asarray(rgb, dtype=np.float32) / 255.0
    except Exception as exc:
        raise DecodeError(path, str(exc)) from exc
    return arr


def normalise(raster: np.ndarray, mean=NORM_MEAN, std=NORM_STD) -> np.ndarray:
    """Per-channel affine map (x - mean_c) / std_c; expects values in [0, 1]."""
    mean_arr = np.asarray(mean, dtype=np.float32).reshape(1, 1, 3)
    std_arr = np.asarray(std, dtype=np.float32).reshape(1, 1, 3)
    return (raster - mean_arr) / std_arr


def _allocate(n: int, fractions) -> list[int]:
    # Floor each share, then hand out the remainder by largest fractional part
    # (ties resolved in train < val < test order).
    raw = [f * n for f in fractions]
    counts = [math.floor(r) for r in raw]
    remainder = n - sum(counts)
    order = sorted(range(len(fractions)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in range(remainder):
        counts[order[i]] += 1
    return counts


def split_entries(manifest: Manifest, fractions, seed: int):
    """Stratified per-class split of manifest entries; pure in (manifest, fractions, seed)."""
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise BadFractions(f"need three positive fractions, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise BadFractions(f"fractions must sum to 1, got {sum(fractions)}")

    rng = np.random.default_rng(seed)
    buckets: tuple[list[ManifestEntry], ...] = ([], [], [])
    for label in ClassLabel:
        members = [e for e in manifest.entries if e.label is label]
        if not members:
            continue
        counts = _allocate(len(members), fractions)
        perm = rng.permutation(len(members))
        shuffled = [members[i] for i in perm]
        start = 0
        for bucket, count in zip(buckets, counts):
            bucket.extend(shuffled[start:start + count])
            start += count
    return buckets


def split_dataset(manifest: Manifest, fractions, seed: int,
                  side: int = DEFAULT_IMAGE_SIDE):
    """Split into decoded train/val/test LabeledImage lists (stratified, seeded)."""
    parts = split_entries(manifest, fractions, seed)
    out = []
    for entries, split in zip(parts, Split):
        images = [
            LabeledImage(
                pixels=decode_and_resize(manifest.root / e.relative_path, side),
                label=e.label,
                source_path=str(manifest.root / e.relative_path),
                split=split,
                mode=e.mode,
            )
            for e in entries
        ]
        out.append(images)
    return tuple(out)


def load_labeled_images(manifest: Manifest, side: int = DEFAULT_IMAGE_SIDE,
                        split: Split = Split.TEST) -> list[LabeledImage]:
    """Decode every manifest entry under one split tag."""
    return [
        LabeledImage(
            pixels=decode_and_resize(manifest.root / e.relative_path, side),
            label=e.label,
            source_path=str(manifest.root / e.relative_path),
            split=split,
            mode=e.mode,
        )
        for e in manifest.entries
    ]
