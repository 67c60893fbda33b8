"""Dataset construction: filtering, taxonomy, manifests, label bootstrap, parsing targets."""

from .augment import augment, gaussian_blur, mirror
from .bootstrap import ClassifierTrainer, MissingClassError, ResNetTrainer, bootstrap_labels, select_manual_subset
from .filters import (
    Detection,
    DetectorError,
    ExternalProcessDetector,
    PersonDetector,
    StubDetector,
    filter_near_grayscale,
    filter_person_present,
    filter_sharp,
)
from .images import load_image, resize_center_crop
from .manifest import DatasetManifest, ManifestError, SampleRecord
from .parsing import (
    Palette,
    ParsingValidationError,
    decode_parsing,
    ingest_parsing_targets,
    read_parsing_map,
    render_parsing,
)
from .stats import DatasetStats, dataset_stats
from .taxonomy import LabelTaxonomy

__all__ = [
    "ClassifierTrainer", "DatasetManifest", "DatasetStats", "Detection", "DetectorError",
    "ExternalProcessDetector", "LabelTaxonomy", "ManifestError", "MissingClassError", "Palette",
    "ParsingValidationError", "PersonDetector", "ResNetTrainer", "SampleRecord", "StubDetector",
    "augment", "bootstrap_labels", "select_manual_subset", "dataset_stats", "decode_parsing", "filter_near_grayscale",
    "filter_person_present", "filter_sharp", "gaussian_blur", "ingest_parsing_targets", "load_image",
    "mirror", "read_parsing_map", "render_parsing", "resize_center_crop",
]
