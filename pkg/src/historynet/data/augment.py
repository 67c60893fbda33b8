from __future__ import annotations

import numpy as np
from scipy import ndimage

DEFAULT_BLUR_SIGMA = 1.0


def mirror(img: np.ndarray) -> np.ndarray:
    """Horizontal flip (last spatial axis before channels)."""
    return np.ascontiguousarray(np.asarray(img)[:, ::-1])


def gaussian_blur(img: np.ndarray, sigma: float = DEFAULT_BLUR_SIGMA) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    sigmas = (sigma, sigma, 0.0) if img.ndim == 3 else sigma
    # 'reflect' (half-sample symmetric) keeps the image mean unchanged
    return ndimage.gaussian_filter(img, sigma=sigmas, mode="reflect")


def augment(img: np.ndarray, sigma: float = DEFAULT_BLUR_SIGMA) -> list[np.ndarray]:
    return [mirror(img), gaussian_blur(img, sigma)]
