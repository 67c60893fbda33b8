"""Directory of still frames -> filtered, labelled manifest."""

from __future__ import annotations

import csv
import hashlib
import logging
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .filters import DEFAULT_MAX_PERSONS, PersonDetector, filter_near_grayscale, filter_person_present, filter_sharp
from .images import load_image
from .manifest import DatasetManifest, SampleRecord
from .parsing import Palette, ingest_parsing_targets
from .taxonomy import LabelTaxonomy

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
LABELS_FILENAME = "labels.csv"


@dataclass
class FilterConfig:
    saturation_threshold: float = 0.1
    max_persons: int = DEFAULT_MAX_PERSONS
    min_laplacian_variance: float | None = None  # blur gate off by default
    analysis_size: int | None = 128


@dataclass
class BuildLog:
    decisions: dict[str, str] = field(default_factory=dict)  # file -> kept / rejected-* / unknown-*

    def counts(self) -> dict[str, int]:
        return dict(sorted(Counter(self.decisions.values()).items()))

    def to_dict(self) -> dict:
        return {"counts": self.counts(), "decisions": dict(sorted(self.decisions.items()))}


def list_images(image_dir: Path) -> list[Path]:
    return sorted(p for p in image_dir.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def read_labels(path: Path, taxonomy: LabelTaxonomy) -> dict[str, int]:
    """``filename,label`` rows; label is a composite id or an ``era/nationality/garment`` name."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#") or row[0] == "filename":
                continue
            name, label = row[0].strip(), row[1].strip()
            out[name] = int(label) if label.isdigit() else taxonomy.id_of(label)
    return out


def assign_split(key: str, test_fraction: float, seed: int) -> str:
    h = hashlib.sha256(f"{seed}:{key}".encode()).digest()
    u = int.from_bytes(h[:8], "big") / 2**64
    return "test" if u < test_fraction else "train"


def build_manifest(image_dir: str | Path, taxonomy: LabelTaxonomy, *, relative_to: str | Path,
                   filters: FilterConfig | None = None, detector: PersonDetector | None = None,
                   labels: dict[str, int] | None = None, parsing_dir: str | Path | None = None,
                   palette: Palette | None = None, test_fraction: float = 0.1,
                   seed: int = 0) -> tuple[DatasetManifest, BuildLog]:
    """Filter the frames in ``image_dir`` and emit one record per kept frame.

    Frames listed in ``labels`` (default: ``labels.csv`` inside the image
    directory, if present) become manual records; the rest are unlabelled.
    Without a detector the person check is skipped.
    """
    image_dir = Path(image_dir)
    filters = filters or FilterConfig()
    if labels is None and (image_dir / LABELS_FILENAME).exists():
        labels = read_labels(image_dir / LABELS_FILENAME, taxonomy)
    labels = labels or {}
    relative_to = Path(relative_to).resolve()
    build_log = BuildLog()
    records = []
    for path in list_images(image_dir):
        try:
            img = load_image(path, filters.analysis_size)
        except OSError as exc:
            log.warning("unreadable image %s: %s", path, exc)
            build_log.decisions[path.name] = "unknown-unreadable"
            continue
        if not filter_near_grayscale(img, filters.saturation_threshold):
            build_log.decisions[path.name] = "rejected-grayscale"
            continue
        if filters.min_laplacian_variance is not None and not filter_sharp(img, filters.min_laplacian_variance):
            build_log.decisions[path.name] = "rejected-blur"
            continue
        if detector is not None:
            person = filter_person_present(path, detector, filters.max_persons)
            if person is None:
                build_log.decisions[path.name] = "unknown-detector"
                continue
            if not person:
                build_log.decisions[path.name] = "rejected-persons"
                continue
        build_log.decisions[path.name] = "kept"
        label = labels.get(path.name)
        records.append(SampleRecord(
            record_id=path.stem,
            image_path=os.path.relpath(path.resolve(), relative_to),
            composite_label_id=label,
            label_source="manual" if label is not None else "unknown",
            split=assign_split(path.name, test_fraction, seed),
        ))
    manifest = DatasetManifest(taxonomy, tuple(records), (f"built from {image_dir.name}",), root=str(relative_to))
    if parsing_dir is not None:
        manifest = ingest_parsing_targets(manifest, parsing_dir, palette or Palette.load())
    return manifest, build_log
