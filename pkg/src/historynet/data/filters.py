"""Frame filters: near-greyscale rejection, person presence, optional blur gate."""

from __future__ import annotations

import json
import logging
import shlex
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from scipy import ndimage

from ..colorspace import rgb_to_hsv

log = logging.getLogger(__name__)

DEFAULT_MAX_PERSONS = 6
PERSON_CONFIDENCE = 0.5


def mean_saturation(img: np.ndarray) -> float:
    return float(rgb_to_hsv(img).saturation.mean())


def filter_near_grayscale(img: np.ndarray, saturation_threshold: float = 0.1) -> bool:
    """Keep iff the mean HSV saturation exceeds ``saturation_threshold``."""
    if not 0 < saturation_threshold < 1:
        raise ValueError("saturation_threshold must lie in (0, 1)")
    return mean_saturation(img) > saturation_threshold


def laplacian_variance(img: np.ndarray) -> float:
    gray = np.asarray(img, dtype=np.float64)
    if gray.ndim == 3:
        gray = gray @ np.array([0.299, 0.587, 0.114])
    return float(ndimage.laplace(gray, mode="reflect").var())


def filter_sharp(img: np.ndarray, min_laplacian_variance: float) -> bool:
    """Blur gate; disabled unless a threshold is configured by the caller."""
    return laplacian_variance(img) >= min_laplacian_variance


@dataclass(frozen=True)
class Detection:
    box: tuple[float, float, float, float]  # x0, y0, x1, y1
    confidence: float
    label: str = "person"


class DetectorError(RuntimeError):
    pass


class PersonDetector(Protocol):
    def detect(self, image_path: str | Path) -> Sequence[Detection]: ...


class StubDetector:
    """Returns a fixed detection list (one confident person by default)."""

    def __init__(self, detections: Sequence[Detection] | None = None):
        if detections is None:
            detections = [Detection((0.0, 0.0, 1.0, 1.0), 1.0)]
        self.detections = list(detections)

    def detect(self, image_path):
        return list(self.detections)


class ExternalProcessDetector:
    """Talks to a long-running child process, one request per line.

    Request: the image path followed by a newline. Response: one line of JSON,
    a list of ``{"box": [x0, y0, x1, y1], "confidence": c, "label": "person"}``
    objects (``label`` optional, defaults to person). Any other response, or
    the process exiting, raises :class:`DetectorError`.
    """

    def __init__(self, command: str | Sequence[str], timeout: float = 30.0):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout
        self._proc: subprocess.Popen | None = None

    def _ensure(self):
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
            )
        return self._proc

    def detect(self, image_path):
        proc = self._ensure()
        try:
            proc.stdin.write(f"{image_path}\n")
            proc.stdin.flush()
            line = proc.stdout.readline()
        except (BrokenPipeError, OSError) as exc:
            raise DetectorError(f"detector process failed: {exc}") from exc
        if not line:
            raise DetectorError("detector process closed its output")
        try:
            items = json.loads(line)
            return [Detection(tuple(map(float, d["box"])), float(d["confidence"]), d.get("label", "person"))
                    for d in items]
        except (ValueError, KeyError, TypeError) as exc:
            raise DetectorError(f"malformed detector response: {line.strip()!r}") from exc

    def close(self):
        if self._proc is not None:
            if self._proc.stdin:
                self._proc.stdin.close()
            self._proc.wait(timeout=self.timeout)
            self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def filter_person_present(image_path, detector: PersonDetector, max_persons: int = DEFAULT_MAX_PERSONS,
                          min_confidence: float = PERSON_CONFIDENCE) -> bool | None:
    """Keep iff 1 <= confident person detections <= ``max_persons``.

    Returns ``None`` when the detector fails, so the caller can record the
    sample as undecided instead of dropping it silently.
    """
    try:
        detections = detector.detect(image_path)
    except DetectorError as exc:
        log.warning("person detector failed on %s: %s", image_path, exc)
        return None
    n = sum(1 for d in detections if d.label == "person" and d.confidence >= min_confidence)
    return 1 <= n <= max_persons
