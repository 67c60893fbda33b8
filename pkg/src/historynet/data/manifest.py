"""Dataset manifests: JSON lines, a header object followed by one record per line."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable

from .taxonomy import LabelTaxonomy

FORMAT = "historynet-manifest"
VERSION = 1
LABEL_SOURCES = ("manual", "pseudo", "unknown")
SPLITS = ("train", "test")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class SampleRecord:
    record_id: str
    image_path: str
    composite_label_id: int | None = None
    label_source: str = "unknown"
    confidence: float | None = None
    parsing_path: str | None = None
    split: str = "train"

    def __post_init__(self):
        if self.label_source not in LABEL_SOURCES:
            raise ManifestError(f"{self.record_id}: bad label_source {self.label_source!r}")
        if self.split not in SPLITS:
            raise ManifestError(f"{self.record_id}: bad split {self.split!r}")
        if self.label_source == "pseudo" and not (self.confidence is not None and 0 < self.confidence <= 1):
            raise ManifestError(f"{self.record_id}: pseudo label needs a confidence in (0, 1]")
        if self.label_source != "unknown" and self.composite_label_id is None:
            raise ManifestError(f"{self.record_id}: {self.label_source} record without a label")

    @property
    def labeled(self) -> bool:
        return self.composite_label_id is not None


@dataclass(frozen=True)
class DatasetManifest:
    taxonomy: LabelTaxonomy
    records: tuple[SampleRecord, ...] = ()
    provenance: tuple[str, ...] = ()
    root: str | None = field(default=None, compare=False)

    def __post_init__(self):
        ids = Counter(r.record_id for r in self.records)
        dup = [k for k, n in ids.items() if n > 1]
        if dup:
            raise ManifestError(f"duplicate record ids: {', '.join(sorted(dup)[:10])}")
        n = len(self.taxonomy)
        bad = [r.record_id for r in self.records if r.labeled and not 0 <= r.composite_label_id < n]
        if bad:
            raise ManifestError(f"label id outside taxonomy for: {', '.join(bad[:10])}")

    def __len__(self) -> int:
        return len(self.records)

    def split(self, name: str) -> list[SampleRecord]:
        return [r for r in self.records if r.split == name]

    def split_sizes(self) -> dict[str, int]:
        c = Counter(r.split for r in self.records)
        return {s: c.get(s, 0) for s in SPLITS}

    def with_records(self, records: Iterable[SampleRecord], note: str | None = None) -> "DatasetManifest":
        prov = self.provenance + ((note,) if note else ())
        return replace(self, records=tuple(records), provenance=prov)

    def resolve(self, path: str | None) -> Path | None:
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() or self.root is None else Path(self.root) / p

    def validate_paths(self) -> None:
        missing = [r.image_path for r in self.records if not self.resolve(r.image_path).exists()]
        missing += [r.parsing_path for r in self.records
                    if r.parsing_path is not None and not self.resolve(r.parsing_path).exists()]
        if missing:
            raise ManifestError(f"{len(missing)} missing file(s): {', '.join(missing[:10])}")

    # --- serialisation ---

    def to_jsonl(self) -> str:
        header = {
            "format": FORMAT,
            "version": VERSION,
            "taxonomy_hash": self.taxonomy.hash,
            "taxonomy": self.taxonomy.to_text(),
            "provenance": list(self.provenance),
        }
        lines = [json.dumps(header, sort_keys=True)]
        lines += [json.dumps(asdict(r), sort_keys=True) for r in self.records]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str, root: str | None = None) -> "DatasetManifest":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ManifestError("empty manifest file")
        header = json.loads(lines[0])
        if header.get("format") != FORMAT:
            raise ManifestError("not a historynet manifest (bad header)")
        if header.get("version") != VERSION:
            raise ManifestError(f"unsupported manifest version {header.get('version')}")
        taxonomy = LabelTaxonomy.from_text(header["taxonomy"])
        if taxonomy.hash != header["taxonomy_hash"]:
            raise ManifestError("taxonomy hash mismatch in manifest header")
        records = tuple(SampleRecord(**json.loads(ln)) for ln in lines[1:])
        return cls(taxonomy, records, tuple(header.get("provenance", ())), root=root)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def load(cls, path: str | Path, root: str | Path | None = None) -> "DatasetManifest":
        """Load a manifest. Relative record paths resolve against ``root``
        (default: the manifest's own directory)."""
        path = Path(path)
        root = str(root if root is not None else path.resolve().parent)
        return cls.from_jsonl(path.read_text(), root=root)
