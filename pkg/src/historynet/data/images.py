from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def resize_center_crop(im: Image.Image, size: int, resample=Image.BICUBIC) -> Image.Image:
    """Aspect-preserving resize so the short side equals ``size``, then centre crop."""
    w, h = im.size
    scale = size / min(w, h)
    nw, nh = max(size, round(w * scale)), max(size, round(h * scale))
    if (nw, nh) != (w, h):
        im = im.resize((nw, nh), resample)
    left, top = (nw - size) // 2, (nh - size) // 2
    return im.crop((left, top, left + size, top + size))


def load_image(path: str | Path, size: int | None = None) -> np.ndarray:
    """RGB float image in [0, 1], optionally resized and centre-cropped to ``size``."""
    with Image.open(path) as im:
        im = im.convert("RGB")
        if size is not None:
            im = resize_center_crop(im, size)
        return np.asarray(im, dtype=np.float64) / 255.0


def load_index_map(path: str | Path, palette, size: int | None = None) -> np.ndarray:
    from .parsing import read_parsing_map

    idx = read_parsing_map(path, palette)
    if size is not None:
        im = resize_center_crop(Image.fromarray(idx.astype(np.uint8)), size, resample=Image.NEAREST)
        idx = np.asarray(im, dtype=np.int64)
    return idx
