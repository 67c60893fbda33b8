from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoint import read_checkpoint, restore_into
from .config import ABLATIONS
from .colorspace import AB_SCALE, fit_chroma_to_gamut, lab_to_rgb, normalize_l, rgb_to_lab
from .model import Generator, ModelConfig, build_critic, build_generator


def load_generator(checkpoint: str | Path) -> tuple[Generator, dict]:
    """Rebuild the generator stored in a checkpoint directory, in eval mode."""
    meta, tensors = read_checkpoint(checkpoint)
    cfg = ModelConfig.from_dict(meta["model_config"])
    gen, critic = build_generator(cfg), build_critic(cfg)
    restore_into(meta, tensors, generator=gen, critic=critic)
    tc = meta["train_config"]
    gen.use_parsing, gen.use_info = ABLATIONS[tc.get("ablation", "full")]
    return gen.eval(), meta


@torch.no_grad()
def predict_ab(gen: Generator, L: np.ndarray) -> np.ndarray:
    """Chroma (H, W, 2) in Lab units for a luminance plane of any size.

    The plane is resized to the network input, and the prediction resized
    back, so the caller keeps the original full-resolution L.
    """
    L = np.asarray(L, dtype=np.float64)
    x = torch.as_tensor(normalize_l(L), dtype=torch.float32)[None, None]
    size = tuple(gen.cfg.input_size)
    if x.shape[-2:] != size:
        x = F.interpolate(x, size=size, mode="bilinear", align_corners=False, antialias=True)
    ab = gen(x).ab
    if ab.shape[-2:] != L.shape:
        ab = F.interpolate(ab, size=L.shape, mode="bilinear", align_corners=False)
    return ab[0].permute(1, 2, 0).double().numpy() * AB_SCALE


def colorize(gen: Generator, rgb_or_gray: np.ndarray) -> np.ndarray:
    """Colourise an image, keeping its own L plane.

    Accepts (H, W) grey in [0, 1] or (H, W, 3) RGB. Chroma is reduced where
    needed so the result is displayable without altering L.
    """
    img = np.asarray(rgb_or_gray, dtype=np.float64)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=-1)
    L = rgb_to_lab(img)[..., 0]
    lab = np.concatenate([L[..., None], predict_ab(gen, L)], axis=-1)
    return lab_to_rgb(fit_chroma_to_gamut(lab), validate=False)
