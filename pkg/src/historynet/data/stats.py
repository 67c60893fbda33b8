from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Callable

from ..colorspace import HueHistogram, hue_histogram
from .images import load_image
from .manifest import SPLITS, DatasetManifest
from .taxonomy import ERAS, GARMENTS, NATIONALITIES

# Reference counts published for the full movie-frame corpus. Documentation
# only; the era and garment rows each sum to the total, the nationality row
# does not (its entries sum to 1,949,397).
PUBLISHED_ERA_COUNTS = {"before-WWII": 66_900, "during-WWII": 547_318, "after-WWII": 738_948}
PUBLISHED_NATIONALITY_COUNTS = {
    "Chinese": 753_473, "American": 934_415, "Russian": 45_291,
    "German": 59_015, "Japanese": 110_562, "English": 46_641,
}
PUBLISHED_GARMENT_COUNTS = {"military": 707_771, "formal": 104_763, "informal": 540_632}
PUBLISHED_TOTAL = 1_353_166


@dataclass
class DatasetStats:
    total: int = 0
    split_sizes: dict[str, int] = field(default_factory=dict)
    by_era: dict[str, int] = field(default_factory=dict)
    by_nationality: dict[str, int] = field(default_factory=dict)
    by_garment: dict[str, int] = field(default_factory=dict)
    by_label: dict[int, int] = field(default_factory=dict)
    by_source: dict[str, int] = field(default_factory=dict)
    unlabeled: int = 0
    hue_histogram: Callable[..., HueHistogram] | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "total": self.total, "split_sizes": self.split_sizes, "by_era": self.by_era,
            "by_nationality": self.by_nationality, "by_garment": self.by_garment,
            "by_label": {str(k): v for k, v in self.by_label.items()},
            "by_source": self.by_source, "unlabeled": self.unlabeled,
        }


def dataset_stats(manifest: DatasetManifest, image_size: int | None = 64) -> DatasetStats:
    """Counts per category, composite label, split and label source.

    ``hue_histogram`` on the result is a lazy handle: calling it (optionally
    with ``bin_count``) reads the images and returns their hue distribution.
    """
    tax = manifest.taxonomy
    era, nat, gar, lab = Counter(), Counter(), Counter(), Counter()
    for rec in manifest.records:
        if rec.composite_label_id is None:
            continue
        c = tax[rec.composite_label_id]
        era[c.era] += 1
        nat[c.nationality] += 1
        gar[c.garment] += 1
        lab[c.id] += 1

    def handle(bin_count: int = 36, split: str | None = None) -> HueHistogram:
        recs = manifest.records if split is None else manifest.split(split)
        return hue_histogram((load_image(manifest.resolve(r.image_path), image_size) for r in recs), bin_count)

    sources = Counter(r.label_source for r in manifest.records)
    return DatasetStats(
        total=len(manifest),
        split_sizes=manifest.split_sizes(),
        by_era={e: era.get(e, 0) for e in ERAS},
        by_nationality={n: nat.get(n, 0) for n in NATIONALITIES},
        by_garment={g: gar.get(g, 0) for g in GARMENTS},
        by_label={i: lab.get(i, 0) for i in range(len(tax))},
        by_source={s: sources.get(s, 0) for s in ("manual", "pseudo", "unknown")},
        unlabeled=sum(1 for r in manifest.records if r.composite_label_id is None),
        hue_histogram=handle,
    )


def format_stats(stats: DatasetStats) -> str:
    lines = [f"total records: {stats.total}"]
    lines.append("splits: " + ", ".join(f"{s}={stats.split_sizes.get(s, 0)}" for s in SPLITS))
    for title, table in (("era", stats.by_era), ("nationality", stats.by_nationality), ("garment", stats.by_garment)):
        lines.append(f"{title}:")
        lines += [f"  {k:<14}{v:>10}" for k, v in table.items()]
    lines.append("label sources: " + ", ".join(f"{k}={v}" for k, v in stats.by_source.items()))
    return "\n".join(lines)
