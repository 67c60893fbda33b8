from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

ERAS = ("before-WWII", "during-WWII", "after-WWII")
NATIONALITIES = ("Chinese-CPC", "Chinese-KMT", "Japanese", "American", "German", "English", "Russian")
GARMENTS = ("military", "formal", "informal")

DEFAULT_TAXONOMY = Path(__file__).resolve().parent.parent / "assets" / "taxonomy.tsv"


class TaxonomyError(ValueError):
    pass


@dataclass(frozen=True)
class CompositeLabel:
    id: int
    era: str
    nationality: str
    garment: str

    @property
    def name(self) -> str:
        return f"{self.era}/{self.nationality}/{self.garment}"


@dataclass(frozen=True)
class LabelTaxonomy:
    labels: tuple[CompositeLabel, ...]

    def __post_init__(self):
        ids = [lab.id for lab in self.labels]
        if ids != list(range(len(ids))):
            raise TaxonomyError(f"label ids must be dense 0..{len(ids) - 1} in order, got {ids}")
        if len({lab.name for lab in self.labels}) != len(self.labels):
            raise TaxonomyError("duplicate composite label")
        for lab in self.labels:
            if lab.era not in ERAS or lab.nationality not in NATIONALITIES or lab.garment not in GARMENTS:
                raise TaxonomyError(f"label {lab.id} uses an unknown category: {lab.name}")

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> CompositeLabel:
        return self.labels[i]

    def id_of(self, name: str) -> int:
        for lab in self.labels:
            if lab.name == name:
                return lab.id
        raise KeyError(name)

    def to_text(self) -> str:
        return "".join(f"{l.id}\t{l.era}\t{l.nationality}\t{l.garment}\n" for l in self.labels)

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    @classmethod
    def from_text(cls, text: str) -> "LabelTaxonomy":
        labels = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise TaxonomyError(f"line {lineno}: expected 'id era nationality garment', got {line!r}")
            labels.append(CompositeLabel(int(parts[0]), *parts[1:]))
        return cls(tuple(labels))

    @classmethod
    def load(cls, path: str | Path = DEFAULT_TAXONOMY) -> "LabelTaxonomy":
        return cls.from_text(Path(path).read_text())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())
