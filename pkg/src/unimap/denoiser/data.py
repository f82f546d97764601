"""Procedural colored-shape images and a rule-based classifier for them.

Images are ``3 x 32 x 32`` in ``[0, 1]``: one anti-aliased circle, square or
upright triangle in red, green or blue on a flat neutral-gray background.
The diffusion models work on latents ``2 * image - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..errors import ArgumentError
from ..numerics.rng import Rng
from ..numerics.tensor import DTYPE
from .prompts import COLORS, SHAPES, Prompt

PALETTE = {
    "red": (0.88, 0.14, 0.12),
    "green": (0.14, 0.78, 0.20),
    "blue": (0.14, 0.24, 0.90),
}
SUPERSAMPLE = 4


@dataclass
class Sample:
    image: np.ndarray  # (3, H, W) in [0, 1]
    prompt: Prompt
    coverage: np.ndarray  # (H, W) shape coverage in [0, 1]


def shape_coverage(shape: str, cx: float, cy: float, r: float, size: int = 32) -> np.ndarray:
    """Fractional pixel coverage of a shape, by ``SUPERSAMPLE``^2 point sampling."""
    s = SUPERSAMPLE
    offs = (np.arange(s) + 0.5) / s
    coords = (np.arange(size)[:, None] + offs[None, :]).ravel()
    ys, xs = np.meshgrid(coords, coords, indexing="ij")
    dx, dy = xs - cx, ys - cy
    if shape == "circle":
        inside = dx * dx + dy * dy <= r * r
    elif shape == "square":
        half = r * 0.85
        inside = (np.abs(dx) <= half) & (np.abs(dy) <= half)
    elif shape == "triangle":
        # apex at (cx, cy - r), base at y = cy + r with half-width r
        frac = (dy + r) / (2 * r)
        inside = (frac >= 0) & (frac <= 1) & (np.abs(dx) <= frac * r)
    else:
        raise ArgumentError(f"unknown shape {shape!r}")
    return inside.reshape(size, s, size, s).mean(axis=(1, 3))


def render(color: str, shape: str, cx: float, cy: float, r: float, background: float, size: int = 32):
    cov = shape_coverage(shape, cx, cy, r, size)
    rgb = np.asarray(PALETTE[color], dtype=np.float64)[:, None, None]
    img = background * (1.0 - cov[None]) + rgb * cov[None]
    return np.clip(img, 0.0, 1.0).astype(DTYPE), cov.astype(DTYPE)


def random_sample(rng: Rng, prompt: Prompt | None = None, size: int = 32) -> Sample:
    g = rng.generator
    color = prompt.color if prompt is not None and prompt.color else COLORS[g.integers(3)]
    shape = prompt.shape if prompt is not None and prompt.shape else SHAPES[g.integers(3)]
    r = g.uniform(0.2, 0.34) * size
    cx = g.uniform(r + 1, size - r - 1)
    cy = g.uniform(r + 1, size - r - 1)
    background = g.uniform(0.42, 0.58)
    img, cov = render(color, shape, cx, cy, r, background, size)
    return Sample(img, Prompt.of(color, shape), cov)


def generate_samples(rng: Rng, count: int, size: int = 32) -> list[Sample]:
    if count < 1:
        raise ArgumentError(f"dataset size must be >= 1, got {count}")
    return [random_sample(rng.split(i), size=size) for i in range(count)]


def generate_dataset(rng: Rng, count: int, size: int = 32) -> list[tuple]:
    """``count`` pairs of ``(image, prompt)`` with prompts matching the content."""
    return [(s.image, s.prompt) for s in generate_samples(rng, count, size)]


def to_latent(image: np.ndarray) -> np.ndarray:
    return (np.asarray(image, dtype=DTYPE) * DTYPE(2.0) - DTYPE(1.0)).astype(DTYPE)


def to_image(latent: np.ndarray) -> np.ndarray:
    return np.clip((np.asarray(latent, dtype=DTYPE) + DTYPE(1.0)) * DTYPE(0.5), 0.0, 1.0).astype(DTYPE)


# --- classifier --------------------------------------------------------------


def saturation(image: np.ndarray) -> np.ndarray:
    return image.max(axis=0) - image.min(axis=0)


def dominant_color(image: np.ndarray, threshold: float = 0.3):
    """Color name whose channel dominates the saturated pixels, or ``None``."""
    sat = saturation(image)
    sel = sat > threshold
    if sel.sum() < 4:
        return None
    mean_rgb = image[:, sel].mean(axis=1)
    return COLORS[int(np.argmax(mean_rgb))]


def classify(image: np.ndarray, threshold: float = 0.3) -> tuple:
    """``(color, shape)`` from hue and the fill ratio of the shape's bounding box.

    The shape is the largest connected blob of saturated pixels in the
    dominant color, so isolated noisy pixels do not stretch the box.
    Fill ratios: square 1.0, circle pi/4, triangle 1/2.
    """
    color = dominant_color(image, threshold)
    if color is None:
        return None, None
    mask = (saturation(image) > threshold) & (np.argmax(image, axis=0) == COLORS.index(color))
    labels, count = ndimage.label(mask)
    if count == 0:
        return color, None
    sizes = np.bincount(labels.ravel())[1:]
    mask = labels == 1 + int(np.argmax(sizes))
    if mask.sum() < 4:
        return color, None
    ys, xs = np.nonzero(mask)
    area = (ys.max() - ys.min() + 1) * (xs.max() - xs.min() + 1)
    fill = mask.sum() / area
    if fill < 0.64:
        shape = "triangle"
    elif fill < 0.89:
        shape = "circle"
    else:
        shape = "square"
    return color, shape
