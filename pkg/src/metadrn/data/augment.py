"""Training-time augmentations: flip, rotate, zoom, shear (warp) and lighting."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .episodes import SegSample


@dataclass(frozen=True)
class AugmentPolicy:
    p: float = 0.5
    max_rotate_deg: float = 30.0
    zoom_range: tuple[float, float] = (0.8, 1.2)
    max_shear_deg: float = 10.0
    lighting: float = 0.2


def _affine_matrix(angle_deg: float, zoom: float, shear_deg: float) -> np.ndarray:
    """Forward 2x2 transform in (row, col) coordinates."""
    a = math.radians(angle_deg)
    rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    shear = np.array([[1.0, 0.0], [math.tan(math.radians(shear_deg)), 1.0]])
    return zoom * rot @ shear


def affine(sample: SegSample, angle_deg: float = 0.0, zoom: float = 1.0, shear_deg: float = 0.0) -> SegSample:
    """Rotate/zoom/shear about the image centre; bilinear for the image, nearest for the mask."""
    fwd = _affine_matrix(angle_deg, zoom, shear_deg)
    if np.allclose(fwd, np.eye(2), rtol=0, atol=1e-12):
        return sample
    inv = np.linalg.inv(fwd)
    h, w = sample.mask.shape
    centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    offset = centre - inv @ centre
    image = np.stack([
        ndimage.affine_transform(ch, inv, offset=offset, order=1, mode="constant", cval=0.0)
        for ch in sample.image.astype(np.float64)
    ])
    mask = ndimage.affine_transform(sample.mask.astype(np.float64), inv, offset=offset, order=0,
                                    mode="constant", cval=0.0)
    return SegSample(np.clip(image, 0.0, 1.0).astype(np.float32), (mask > 0.5).astype(np.uint8),
                     sample.class_id, sample.sample_id)


def hflip(sample: SegSample) -> SegSample:
    return SegSample(np.ascontiguousarray(sample.image[:, :, ::-1]), np.ascontiguousarray(sample.mask[:, ::-1]),
                     sample.class_id, sample.sample_id)


def adjust_lighting(sample: SegSample, brightness: float, contrast: float) -> SegSample:
    img = sample.image.astype(np.float64)
    m = img.mean()
    img = (img - m) * (1.0 + contrast) + m + brightness
    return SegSample(np.clip(img, 0.0, 1.0).astype(np.float32), sample.mask, sample.class_id, sample.sample_id)


def augment(sample: SegSample, rng: np.random.Generator, policy: AugmentPolicy | None = None) -> SegSample:
    """Apply each transform independently with probability ``policy.p``."""
    policy = policy or AugmentPolicy()
    u = rng.random(5)
    angle = rng.uniform(-policy.max_rotate_deg, policy.max_rotate_deg)
    zoom = rng.uniform(*policy.zoom_range)
    shear = rng.uniform(-policy.max_shear_deg, policy.max_shear_deg)
    bright, contrast = rng.uniform(-policy.lighting, policy.lighting, size=2)

    out = hflip(sample) if u[0] < policy.p else sample
    out = affine(out,
                 angle if u[1] < policy.p else 0.0,
                 zoom if u[2] < policy.p else 1.0,
                 shear if u[3] < policy.p else 0.0)
    if u[4] < policy.p:
        out = adjust_lighting(out, bright, contrast)
    return out
