"""Synthetic figure scenes with parsing maps and composite labels.

Each scene is a stylised person on a low-chroma background: hat, face,
upper garment and trousers. The label fixes the garment hue; garments share
one lightness across labels, so a grey image reveals the label only through
a label-specific stripe pattern on the garment. Parsing maps use the
indices of the shipped palette.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .colorspace import lab_to_rgb, save_rgb, to_uint8
from .data.parsing import Palette
from .data.taxonomy import CompositeLabel, LabelTaxonomy

BACKGROUND, HAT, UPPER, PANTS, FACE = 0, 1, 5, 9, 13

# (a, b) of the garment per label, all at L = 50
GARMENT_AB = np.array([[-20.0, 30.0], [0.0, -35.0], [35.0, 20.0], [-30.0, -5.0],
                       [20.0, -25.0], [10.0, 35.0], [-35.0, 15.0], [30.0, -5.0]])
FACE_LAB = np.array([70.0, 15.0, 20.0])

FIXTURE_TAXONOMY = LabelTaxonomy((
    CompositeLabel(0, "during-WWII", "American", "military"),
    CompositeLabel(1, "during-WWII", "German", "military"),
    CompositeLabel(2, "after-WWII", "English", "formal"),
    CompositeLabel(3, "before-WWII", "Chinese-KMT", "informal"),
))


@dataclass
class SyntheticSet:
    images: np.ndarray  # (N, S, S, 3) float RGB
    parsing: np.ndarray  # (N, S, S) palette indices
    labels: np.ndarray  # (N,)


def _stripes(label: int, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    kind = label % 4
    if kind == 0:
        return np.zeros_like(yy, dtype=np.float64)
    if kind == 1:
        return np.where((yy // 2) % 2 == 0, 1.0, -1.0)
    if kind == 2:
        return np.where((xx // 2) % 2 == 0, 1.0, -1.0)
    return np.where(((yy // 2) + (xx // 2)) % 2 == 0, 1.0, -1.0)


def make_scene(rng: np.random.Generator, size: int, label: int) -> tuple[np.ndarray, np.ndarray]:
    """Return (RGB float image, parsing index map) for one scene."""
    yy, xx = np.mgrid[0:size, 0:size]
    s = size / 32.0
    cx = size / 2 + rng.uniform(-4, 4) * s
    top = rng.uniform(2, 5) * s
    scale = rng.uniform(0.85, 1.1)

    parse = np.full((size, size), BACKGROUND, dtype=np.int64)
    head_r = 4.0 * s * scale
    head_cy = top + 3 * s * scale + head_r
    body_top = head_cy + head_r
    body_bot = body_top + 11 * s * scale
    half_w = 6.5 * s * scale
    legs_bot = min(size, body_bot + 9 * s * scale)

    face = (xx - cx) ** 2 + (yy - head_cy) ** 2 <= head_r**2
    hat = (np.abs(xx - cx) <= head_r * 1.2) & (yy >= top) & (yy < head_cy - head_r * 0.4)
    upper = (np.abs(xx - cx) <= half_w) & (yy >= body_top) & (yy < body_bot)
    pants = (np.abs(xx - cx) <= half_w * 0.8) & (yy >= body_bot) & (yy < legs_bot) & (np.abs(xx - cx) >= 0.8 * s)
    parse[face] = FACE
    parse[hat] = HAT
    parse[upper] = UPPER
    parse[pants] = PANTS

    bg_ab = rng.uniform(-12, 12, size=2)
    lab = np.empty((size, size, 3))
    lab[..., 0] = rng.uniform(55, 85) + (yy / size) * rng.uniform(-10, 10)
    lab[..., 1], lab[..., 2] = bg_ab
    g_ab = GARMENT_AB[label % len(GARMENT_AB)]
    lab[upper] = [50.0, *g_ab]
    lab[..., 0] += np.where(upper, 8.0 * _stripes(label, yy, xx), 0.0)
    lab[hat] = [38.0, *(0.8 * g_ab)]
    lab[pants] = [32.0, *(0.5 * g_ab)]
    lab[face] = FACE_LAB
    lab[..., 0] += rng.normal(0, 1.0, size=(size, size))
    lab[..., 0] = np.clip(lab[..., 0], 0, 100)
    return lab_to_rgb(lab), parse


def make_dataset(n: int, size: int = 32, seed: int = 0, num_classes: int = 4,
                 balanced: bool = True) -> SyntheticSet:
    rng = np.random.default_rng(seed)
    if balanced:
        labels = np.arange(n) % num_classes
        rng.shuffle(labels)
    else:
        labels = rng.integers(0, num_classes, size=n)
    images, parses = zip(*(make_scene(rng, size, int(k)) for k in labels))
    return SyntheticSet(np.stack(images), np.stack(parses), labels.astype(np.int64))


def write_fixture(root: str | Path, n_color: int = 24, n_gray: int = 4, size: int = 32, seed: int = 0) -> Path:
    """Write a small frame directory: images/, parsing/, labels.csv, taxonomy.tsv."""
    root = Path(root)
    img_dir, par_dir = root / "images", root / "parsing"
    img_dir.mkdir(parents=True, exist_ok=True)
    par_dir.mkdir(parents=True, exist_ok=True)
    data = make_dataset(n_color + n_gray, size, seed, num_classes=len(FIXTURE_TAXONOMY))
    palette = Palette.load()
    rows = []
    for i, (img, par, lab) in enumerate(zip(data.images, data.parsing, data.labels)):
        name = f"frame_{i:04d}.png"
        if i >= n_color:  # black-and-white frames the dataset builder must reject
            gray = to_uint8(img) @ np.array([0.299, 0.587, 0.114])
            Image.fromarray(np.round(gray).astype(np.uint8)).save(img_dir / name)
            continue
        save_rgb(img_dir / name, img)
        Image.fromarray(palette.colors[par]).save(par_dir / name)
        rows.append(f"{name},{int(lab)}")
    (img_dir / "labels.csv").write_text("filename,label\n" + "\n".join(rows) + "\n")
    FIXTURE_TAXONOMY.save(root / "taxonomy.tsv")
    return root
