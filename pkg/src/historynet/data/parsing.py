"""Human-parsing palettes and ground-truth parsing maps.

A parsing map is stored either as a single-channel image of class indices or
as an RGB rendering using the palette colours. The network target is always
the RGB rendering scaled to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .manifest import DatasetManifest

DEFAULT_PALETTE = Path(__file__).resolve().parent.parent / "assets" / "palette.txt"
PARSING_SUFFIXES = (".png", ".bmp", ".tif", ".tiff")


class ParsingValidationError(ValueError):
    def __init__(self, message: str, files: list[str]):
        super().__init__(f"{message}: {', '.join(files)}")
        self.files = files


@dataclass(frozen=True)
class Palette:
    names: tuple[str, ...]
    colors: np.ndarray  # (P, 3) uint8

    def __post_init__(self):
        if len(self.names) != len(self.colors):
            raise ValueError("palette names and colours differ in length")
        if len({tuple(c) for c in self.colors.tolist()}) != len(self.colors):
            raise ValueError("palette colours must be distinct")

    def __len__(self) -> int:
        return len(self.names)

    def color_of(self, name: str) -> np.ndarray:
        return self.colors[self.names.index(name)]

    @classmethod
    def load(cls, path: str | Path = DEFAULT_PALETTE) -> "Palette":
        names, colors = [], []
        for line in Path(path).read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            name, r, g, b = line.split()
            names.append(name)
            colors.append((int(r), int(g), int(b)))
        return cls(tuple(names), np.array(colors, dtype=np.uint8))

    def subset(self, n: int) -> "Palette":
        return replace(self, names=self.names[:n], colors=self.colors[:n])


def render_parsing(index_map: np.ndarray, palette: Palette) -> np.ndarray:
    """Class indices (H, W) -> uint8 RGB rendering (H, W, 3)."""
    index_map = np.asarray(index_map)
    if index_map.min(initial=0) < 0 or index_map.max(initial=0) >= len(palette):
        raise ValueError(f"class index outside palette of {len(palette)} classes")
    return palette.colors[index_map]


def decode_parsing(rgb: np.ndarray, palette: Palette) -> np.ndarray:
    """uint8 RGB rendering -> class indices. Raises ValueError on foreign colours."""
    rgb = np.asarray(rgb, dtype=np.uint8)
    keys = (rgb[..., 0].astype(np.int32) << 16) | (rgb[..., 1].astype(np.int32) << 8) | rgb[..., 2]
    pal = palette.colors.astype(np.int32)
    pal_keys = (pal[:, 0] << 16) | (pal[:, 1] << 8) | pal[:, 2]
    order = np.argsort(pal_keys)
    pos = np.clip(np.searchsorted(pal_keys[order], keys), 0, len(pal_keys) - 1)
    found = pal_keys[order][pos] == keys
    if not found.all():
        bad = np.unique(keys[~found])[:5]
        raise ValueError("colours not in palette: " + ", ".join(f"#{k:06x}" for k in bad))
    return order[pos]


def read_parsing_map(path: str | Path, palette: Palette) -> np.ndarray:
    """Read a parsing file as class indices, validating against ``palette``."""
    with Image.open(path) as im:
        if im.mode in ("L", "I", "I;16"):
            idx = np.asarray(im, dtype=np.int64)
            if idx.max(initial=0) >= len(palette):
                raise ValueError(f"class index {idx.max()} outside palette of {len(palette)} classes")
            return idx
        return decode_parsing(np.asarray(im.convert("RGB")), palette)


def parsing_target(index_map: np.ndarray, palette: Palette) -> np.ndarray:
    """Float rendering in [0, 1], the regression target of the parsing branch."""
    return render_parsing(index_map, palette).astype(np.float64) / 255.0


def find_parsing_file(parsing_dir: Path, stem: str) -> Path | None:
    for suffix in PARSING_SUFFIXES:
        p = parsing_dir / f"{stem}{suffix}"
        if p.exists():
            return p
    return None


def ingest_parsing_targets(manifest: DatasetManifest, parsing_dir: str | Path,
                           palette: Palette) -> DatasetManifest:
    """Attach ground-truth parsing maps (matched by image file stem) to records.

    Every matched file is decoded against the palette; any file containing a
    foreign colour or index aborts the ingest with the offending file names.
    Records without a matching file keep ``parsing_path=None``.
    """
    parsing_dir = Path(parsing_dir)
    rejected, records = [], []
    for rec in manifest.records:
        found = find_parsing_file(parsing_dir, Path(rec.image_path).stem)
        if found is None:
            records.append(rec)
            continue
        try:
            read_parsing_map(found, palette)
        except (ValueError, OSError):
            rejected.append(found.name)
            continue
        path = str(found)
        if manifest.root is not None:
            try:
                path = str(found.resolve().relative_to(Path(manifest.root).resolve()))
            except ValueError:
                path = str(found.resolve())
        records.append(replace(rec, parsing_path=path))
    if rejected:
        raise ParsingValidationError("parsing maps not conformant with palette", rejected)
    return manifest.with_records(records, note=f"parsing targets ingested from {parsing_dir.name}")
