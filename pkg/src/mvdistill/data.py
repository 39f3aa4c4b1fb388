"""Deterministic synthetic image classes for desk-scale experiments.

Classes are joint (shape, texture-frequency) combinations: the shape is a
brightness offset over a striped background, and the stripe frequency is
the texture.  The nuisance factors are deliberately low-frequency (smooth
Gaussian brightness blobs plus channel gains), so the sharpening view
boosts the stripe signal while passing the blobs nearly unchanged.  Shape
contrast is kept soft so the Canny overlay fires only on strong incidental
boundaries and the edge view stays close to raw RGB.  Per-sample jitter
(center, phase, blob placement, pixel noise) keeps a linear probe well
below 100%.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .views import ImageError, RgbImage, ViewGenConfig, make_views

SHAPES = ("disk", "diamond", "cross", "ring")
TEXTURES = (("coarse", 4.0), ("fine", 7.0))


@dataclass
class SyntheticDatasetSpec:
    n_classes: int = 4
    samples_per_class: int = 200
    image_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if not (2 <= self.n_classes <= len(SHAPES) * len(TEXTURES)):
            raise ImageError(f"n_classes must be in [2, 8], got {self.n_classes}")
        if self.image_size < 8:
            raise ImageError("image_size must be at least 8")

    def class_names(self) -> list[str]:
        names = []
        for s in SHAPES:
            for tex, _ in TEXTURES:
                names.append(f"{tex} {s}")
        return names[: self.n_classes]


def _shape_mask(shape: str, size: int, cx: float, cy: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    if shape == "disk":
        return dx * dx + dy * dy <= r * r
    if shape == "diamond":
        return np.abs(dx) + np.abs(dy) <= r
    if shape == "cross":
        arm = r / 2.2
        within = (np.abs(dx) <= r) & (np.abs(dy) <= r)
        return within & ((np.abs(dx) <= arm) | (np.abs(dy) <= arm))
    if shape == "ring":
        d2 = dx * dx + dy * dy
        return (d2 <= r * r) & (d2 >= (0.55 * r) ** 2)
    raise ImageError(f"unknown shape {shape!r}")


def _render_sample(cls_idx: int, size: int, rng: np.random.Generator) -> np.ndarray:
    shape = SHAPES[cls_idx // len(TEXTURES)]
    _, freq = TEXTURES[cls_idx % len(TEXTURES)]

    yy, xx2 = np.mgrid[0:size, 0:size].astype(np.float64)
    xx = np.arange(size, dtype=np.float64)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    stripes = 25.0 * np.sin(2.0 * np.pi * freq * xx / size + phase)
    grid = np.tile(stripes, (size, 1))
    if rng.uniform() < 0.5:
        grid = grid.T
    base = rng.uniform(65.0, 125.0) + grid

    for _ in range(4):
        bx, by = rng.uniform(0.0, size, size=2)
        bs = rng.uniform(0.25, 0.5) * size
        amp = rng.uniform(-70.0, 70.0)
        base = base + amp * np.exp(-((xx2 - bx) ** 2 + (yy - by) ** 2) / (2.0 * bs * bs))

    jitter = rng.uniform(-2.0, 2.0, size=2)
    cx = size / 2.0 + jitter[0]
    cy = size / 2.0 + jitter[1]
    radius = rng.uniform(0.26, 0.36) * size
    mask = _shape_mask(shape, size, cx, cy, radius)
    img = base + np.where(mask, rng.uniform(35.0, 55.0), 0.0)

    gains = rng.uniform(0.75, 1.25, size=3)
    out = img[:, :, None] * gains[None, None, :]
    out = out + rng.normal(0.0, 8.0, size=out.shape)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def generate_synthetic_dataset(
    spec: SyntheticDatasetSpec,
) -> tuple[list[tuple[RgbImage, int]], list[tuple[RgbImage, int]], list[str]]:
    """Deterministic class-balanced dataset with a stratified 80/20 split."""
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    train, test = [], []
    n_train = int(round(spec.samples_per_class * 0.8))
    for cls in range(spec.n_classes):
        for i in range(spec.samples_per_class):
            px = _render_sample(cls, spec.image_size, rng)
            img = RgbImage(spec.image_size, spec.image_size, px)
            (train if i < n_train else test).append((img, cls))
    return train, test, spec.class_names()


@dataclass
class ViewArrays:
    """Flattened float64 views for a whole split: kind -> (N, H*W*3)."""

    views: dict[str, np.ndarray]
    labels: np.ndarray

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def d_in(self) -> int:
        return self.views["rgb"].shape[1]


def build_view_arrays(samples: list[tuple[RgbImage, int]], cfg: ViewGenConfig) -> ViewArrays:
    stacks: dict[str, list[np.ndarray]] = {"rgb": [], "edge": [], "hf": []}
    labels = []
    for img, label in samples:
        for kind, view in make_views(img, cfg).items():
            stacks[kind].append(view.values.reshape(-1))
        labels.append(label)
    return ViewArrays(
        views={k: np.stack(v) for k, v in stacks.items()},
        labels=np.asarray(labels, dtype=np.int64),
    )
