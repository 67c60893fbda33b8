"""Image-quality metrics and the evaluation harness.

PSNR is computed on RGB in [0, 1]. SSIM is single-scale on the L* plane
(scaled to [0, 1]) with an 11x11 Gaussian window, sigma 1.5, K1 = 0.01,
K2 = 0.03, averaged over the valid (unpadded) window positions. The
perceptual distance takes a pluggable backend; the built-in fallback is a
deterministic random-projection feature distance, not a learned metric.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from scipy import ndimage

from .colorspace import rgb_to_lab

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03

# Published reference values (LPIPS, PSNR, SSIM). Full-corpus, 8-epoch numbers;
# a desk-scale run is not expected to approach them.
PUBLISHED_COMPARISON = {
    "Iizuka et al.": (0.134, 25.779, 0.956),
    "Larsson et al.": (0.147, 24.527, 0.946),
    "Deoldify": (0.127, 26.321, 0.957),
    "ChromaGAN": (0.118, 29.487, 0.951),
    "Su et al.": (0.132, 25.951, 0.941),
    "HistoryNet": (0.101, 30.638, 0.962),
}
PUBLISHED_ABLATION = {
    "baseline": (0.123, 27.093, 0.946),
    "baseline+parsing": (0.121, 28.992, 0.948),
    "baseline+classifier": (0.119, 29.828, 0.951),
    "full": (0.107, 30.585, 0.959),
}


class BackendUnavailableError(RuntimeError):
    pass


class CheckpointMismatchError(ValueError):
    pass


def _pair(a, b, what: str) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)``, capped at :data:`PSNR_CAP_DB` (identical images)."""
    a, b = _pair(a, b, "psnr")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(peak**2 / mse))


def luminance(img: np.ndarray) -> np.ndarray:
    """L* / 100 for RGB input; 2-D input is taken to be a luminance plane already."""
    img = np.asarray(img, dtype=np.float64)
    return img if img.ndim == 2 else rgb_to_lab(img)[..., 0] / 100.0


def _gaussian_window() -> np.ndarray:
    r = SSIM_WINDOW // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    w = np.exp(-(x**2) / (2 * SSIM_SIGMA**2))
    return w / w.sum()


def _filter_valid(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    r = len(w) // 2
    y = ndimage.correlate1d(x, w, axis=0, mode="constant")
    y = ndimage.correlate1d(y, w, axis=1, mode="constant")
    return y[r:-r, r:-r]


def ssim(a, b, data_range: float = 1.0) -> float:
    a, b = _pair(luminance(a), luminance(b), "ssim")
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    if np.array_equal(a, b):
        return 1.0
    w = _gaussian_window()
    mu_a, mu_b = _filter_valid(a, w), _filter_valid(b, w)
    var_a = _filter_valid(a * a, w) - mu_a**2
    var_b = _filter_valid(b * b, w) - mu_b**2
    cov = _filter_valid(a * b, w) - mu_a * mu_b
    c1, c2 = (SSIM_K1 * data_range) ** 2, (SSIM_K2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


class PerceptualBackend(Protocol):
    name: str

    def distance(self, a: np.ndarray, b: np.ndarray) -> float: ...


class RandomProjectionBackend:
    """Deterministic stand-in for a learned perceptual metric.

    At each scale (2x average-pool pyramid) every 3x3 RGB patch is projected
    by a fixed seeded Gaussian matrix, the feature vectors are unit-normalised
    per position, and the squared feature difference is averaged over
    positions. Scale contributions are summed.
    """

    name = "fallback"

    def __init__(self, seed: int = 0, scales: Sequence[int] = (1, 2, 4), patch: int = 3, features: int = 32):
        rng = np.random.default_rng(seed)
        self.scales = tuple(scales)
        self.patch = patch
        dim = 3 * patch * patch
        self.proj = [rng.normal(size=(dim, features)) / math.sqrt(dim) for _ in self.scales]

    def _features(self, img: np.ndarray, scale: int, proj: np.ndarray) -> np.ndarray:
        x = np.asarray(img, dtype=np.float64) * 2 - 1
        if scale > 1:
            h, w = (x.shape[0] // scale) * scale, (x.shape[1] // scale) * scale
            x = x[:h, :w].reshape(h // scale, scale, w // scale, scale, 3).mean(axis=(1, 3))
        if min(x.shape[:2]) < self.patch:
            return np.zeros((0, proj.shape[1]))
        win = np.lib.stride_tricks.sliding_window_view(x, (self.patch, self.patch), axis=(0, 1))
        f = win.reshape(*win.shape[:2], -1) @ proj
        return f / (np.linalg.norm(f, axis=-1, keepdims=True) + 1e-10)

    def distance(self, a, b) -> float:
        a, b = _pair(a, b, "perceptual_distance")
        total = 0.0
        for scale, proj in zip(self.scales, self.proj):
            fa, fb = self._features(a, scale, proj), self._features(b, scale, proj)
            if fa.size:
                total += float(np.mean(np.sum((fa - fb) ** 2, axis=-1)))
        return total


class LPIPSBackend:
    """Adapter for the external ``lpips`` package and its pretrained weights."""

    name = "lpips"

    def __init__(self, net: str = "alex"):
        try:
            import lpips  # type: ignore
            import torch
        except ImportError as exc:
            raise BackendUnavailableError(
                "LPIPS weights are not installed (pip install lpips); "
                "use the deterministic fallback backend instead (--perceptual-backend fallback)"
            ) from exc
        self._torch = torch
        self._model = lpips.LPIPS(net=net, verbose=False).eval()

    def distance(self, a, b) -> float:
        a, b = _pair(a, b, "perceptual_distance")
        t = self._torch

        def prep(x):
            return t.as_tensor(x * 2 - 1, dtype=t.float32).permute(2, 0, 1)[None]

        with t.no_grad():
            return float(self._model(prep(a), prep(b)))


def make_backend(name: str = "fallback", seed: int = 0) -> PerceptualBackend:
    if name == "fallback":
        return RandomProjectionBackend(seed=seed)
    if name == "lpips":
        return LPIPSBackend()
    raise ValueError(f"unknown perceptual backend {name!r}")


def perceptual_distance(a, b, backend: PerceptualBackend | None = None) -> float:
    return (backend or RandomProjectionBackend()).distance(a, b)


@dataclass
class MetricReport:
    lpips: float
    psnr: float
    ssim: float
    sample_count: int
    per_image: dict[str, list[float]] = field(default_factory=dict)
    ids: list[str] = field(default_factory=list)
    backend: str = "fallback"
    label: str = "HistoryNet"

    @classmethod
    def from_values(cls, lp: list[float], ps: list[float], ss: list[float], ids=None,
                    backend: str = "fallback", label: str = "HistoryNet") -> "MetricReport":
        if not lp:
            raise ValueError("no samples evaluated")
        return cls(float(np.mean(lp)), float(np.mean(ps)), float(np.mean(ss)), len(lp),
                   {"lpips": list(lp), "psnr": list(ps), "ssim": list(ss)},
                   list(ids or range(len(lp))), backend, label)

    def to_table(self, rows: dict[str, tuple[float, float, float]] | None = None) -> str:
        header = f"{'Method':<30}{'LPIPS↓':>10}{'PSNR↑':>10}{'SSIM↑':>10}"
        lines = [header, "-" * len(header)]
        for name, (lp, ps, ss) in (rows or {}).items():
            lines.append(f"{name:<30}{lp:>10.3f}{ps:>10.3f}{ss:>10.3f}")
        lines.append(f"{self.label:<30}{self.lpips:>10.3f}{self.psnr:>10.3f}{self.ssim:>10.3f}")
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)


def evaluate_pairs(preds: Sequence[np.ndarray], truths: Sequence[np.ndarray],
                   backend: PerceptualBackend | None = None, ids=None, label: str = "HistoryNet") -> MetricReport:
    backend = backend or RandomProjectionBackend()
    lp, ps, ss = [], [], []
    for p, t in zip(preds, truths, strict=True):
        lp.append(backend.distance(p, t))
        ps.append(psnr(p, t))
        ss.append(ssim(p, t))
    return MetricReport.from_values(lp, ps, ss, ids, backend.name, label)


def evaluate(checkpoint, manifest, split: str = "test", backend: PerceptualBackend | None = None,
             label: str = "HistoryNet") -> MetricReport:
    """Colourise every record of ``split`` from its L plane and score it against the original.

    ``checkpoint`` is a checkpoint directory or an already loaded generator.
    """
    from .data.images import load_image
    from .inference import colorize, load_generator

    if isinstance(checkpoint, (str, Path)):
        gen, meta = load_generator(checkpoint)
        want = meta.get("extra", {}).get("taxonomy_hash")
        if want is not None and want != manifest.taxonomy.hash:
            raise CheckpointMismatchError("checkpoint was trained on a different label taxonomy")
    else:
        gen = checkpoint
    if gen.cfg.label_count != len(manifest.taxonomy):
        raise CheckpointMismatchError(
            f"model predicts {gen.cfg.label_count} labels, manifest taxonomy has {len(manifest.taxonomy)}"
        )
    records = manifest.split(split)
    if not records:
        raise ValueError(f"manifest has no {split!r} records to evaluate")
    size = gen.cfg.input_size[0]
    truths = [load_image(manifest.resolve(r.image_path), size) for r in records]
    preds = [colorize(gen, t) for t in truths]
    return evaluate_pairs(preds, truths, backend, [r.record_id for r in records], label)
