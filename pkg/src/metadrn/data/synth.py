"""Deterministic synthetic shapes dataset for desk-scale meta-training.

Each class is a (shape, fill texture) pair with its own hue; shapes are
placed at random position, scale and orientation on low-frequency noise.
"""
from __future__ import annotations

import colorsys
import math

import numpy as np
from scipy import ndimage

from .episodes import InMemoryDataset, SegSample, default_split, split_by_counts

SHAPES = ("disk", "square", "triangle", "ring", "cross", "bar")
TEXTURES = ("solid", "hstripe", "vstripe", "checker", "dots", "gradient")
FG_RANGE = (0.05, 0.6)


def class_names(num_classes: int) -> list[str]:
    names = []
    for i in range(num_classes):
        shape = SHAPES[i % len(SHAPES)]
        tex = TEXTURES[(i // len(SHAPES)) % len(TEXTURES)]
        rep = i // (len(SHAPES) * len(TEXTURES))
        names.append(f"{shape}_{tex}" + (f"_{rep}" if rep else ""))
    return names


def _shape_mask(kind: str, size: int, cy: float, cx: float, r: float, theta: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    # rotated frame
    u = dx * math.cos(theta) + dy * math.sin(theta)
    v = -dx * math.sin(theta) + dy * math.cos(theta)
    if kind == "disk":
        return dy * dy + dx * dx <= r * r
    if kind == "ring":
        d2 = dy * dy + dx * dx
        return (d2 <= r * r) & (d2 >= (0.55 * r) ** 2)
    if kind == "square":
        s = 0.8 * r
        return (np.abs(u) <= s) & (np.abs(v) <= s)
    if kind == "triangle":
        inside = np.ones_like(u, dtype=bool)
        for k in range(3):
            a = theta + k * 2.0 * math.pi / 3.0
            inside &= (dx * math.cos(a) + dy * math.sin(a)) <= 0.5 * r
        return inside
    if kind == "cross":
        w = 0.3 * r
        return ((np.abs(u) <= r) & (np.abs(v) <= w)) | ((np.abs(v) <= r) & (np.abs(u) <= w))
    if kind == "bar":
        return (np.abs(u) <= r) & (np.abs(v) <= 0.4 * r)
    raise ValueError(f"unknown shape {kind!r}")


def _texture(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    period = max(2, size // 8)
    phase = rng.integers(period)
    if kind == "solid":
        return np.ones((size, size))
    if kind == "hstripe":
        return ((yy + phase) // (period / 2) % 2).astype(np.float64)
    if kind == "vstripe":
        return ((xx + phase) // (period / 2) % 2).astype(np.float64)
    if kind == "checker":
        return (((yy + phase) // (period / 2) + (xx + phase) // (period / 2)) % 2).astype(np.float64)
    if kind == "dots":
        cy = (yy + phase) % period - period / 2
        cx = (xx + phase) % period - period / 2
        return (cy * cy + cx * cx > (period / 3) ** 2).astype(np.float64)
    if kind == "gradient":
        a = rng.uniform(0, 2 * math.pi)
        g = (xx * math.cos(a) + yy * math.sin(a)) / size
        return (g - g.min()) / max(g.max() - g.min(), 1e-9)
    raise ValueError(f"unknown texture {kind!r}")


def _background(size: int, rng: np.random.Generator) -> np.ndarray:
    cells = 5
    base = rng.uniform(0.2, 0.5)
    low = rng.uniform(-0.12, 0.12, size=(3, cells, cells))
    smooth = np.stack([ndimage.zoom(ch, size / cells, order=1, mode="nearest")[:size, :size] for ch in low])
    lum = rng.uniform(-0.1, 0.1, size=(cells, cells))
    smooth += ndimage.zoom(lum, size / cells, order=1, mode="nearest")[None, :size, :size]
    return base + smooth + rng.normal(0.0, 0.03, size=(3, size, size))


def _class_colour(index: int) -> np.ndarray:
    hue = (index * 0.618033988749895) % 1.0
    return np.array(colorsys.hsv_to_rgb(hue, 0.85, 0.95))


def render_sample(kind: str, texture: str, colour: np.ndarray, size: int, rng: np.random.Generator):
    """Returns (uint8 image (3,H,W), uint8 mask (H,W)); foreground fraction kept in FG_RANGE."""
    while True:
        r = rng.uniform(0.15, 0.38) * size
        margin = r + 1.0
        cy = rng.uniform(margin, size - 1 - margin) if size - 1 - 2 * margin > 0 else (size - 1) / 2
        cx = rng.uniform(margin, size - 1 - margin) if size - 1 - 2 * margin > 0 else (size - 1) / 2
        theta = rng.uniform(0, math.pi)
        mask = _shape_mask(kind, size, cy, cx, r, theta)
        frac = mask.mean()
        if FG_RANGE[0] <= frac <= FG_RANGE[1]:
            break
    tex = _texture(texture, size, rng)
    fg = colour[:, None, None] * (0.55 + 0.45 * tex[None])
    img = np.where(mask[None], fg + rng.normal(0.0, 0.02, size=(3, size, size)), _background(size, rng))
    img8 = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    return img8, mask.astype(np.uint8)


def synth_generate(num_classes: int = 12, samples_per_class: int = 10, size: int = 32, seed: int = 0,
                   split_counts: tuple[int, int, int] | None = None) -> InMemoryDataset:
    if size % 4:
        raise ValueError("image size must be divisible by 4")
    rng = np.random.default_rng(seed)
    names = class_names(num_classes)
    samples: dict[str, dict[int, SegSample]] = {}
    for i, name in enumerate(names):
        kind = SHAPES[i % len(SHAPES)]
        tex = TEXTURES[(i // len(SHAPES)) % len(TEXTURES)]
        colour = _class_colour(i)
        per_class = {}
        for k in range(1, samples_per_class + 1):
            img8, mask = render_sample(kind, tex, colour, size, rng)
            per_class[k] = SegSample(img8.astype(np.float32) / np.float32(255.0), mask, name, k)
        samples[name] = per_class
    if split_counts is not None:
        split = split_by_counts(names, split_counts, seed=seed)
    else:
        split = default_split(names, seed=seed)
    return InMemoryDataset(samples, split)
