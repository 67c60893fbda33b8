"""Semi-supervised label bootstrap.

A classifier is fitted on the manually labelled subset (plus mirrored and
blurred copies of it) and then assigns pseudo labels, with confidences, to
every unlabelled record. Manual labels are never touched.
"""

from __future__ import annotations

import logging
from dataclasses import replace
from typing import Callable, Protocol, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .augment import DEFAULT_BLUR_SIGMA, augment
from .images import load_image
from .manifest import DatasetManifest, SampleRecord

log = logging.getLogger(__name__)


class MissingClassError(ValueError):
    def __init__(self, missing: Sequence[int]):
        super().__init__(f"no manually labelled examples for class(es): {', '.join(map(str, missing))}")
        self.missing = list(missing)


class Predictor(Protocol):
    def predict_proba(self, images: np.ndarray) -> np.ndarray: ...


class ClassifierTrainer(Protocol):
    def fit(self, images: np.ndarray, labels: np.ndarray, num_classes: int) -> Predictor: ...


class _Block(nn.Module):
    def __init__(self, cin, cout, stride):
        super().__init__()
        self.c1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.b1 = nn.BatchNorm2d(cout)
        self.c2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.b2 = nn.BatchNorm2d(cout)
        self.skip = nn.Sequential()
        if stride != 1 or cin != cout:
            self.skip = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        y = F.relu(self.b1(self.c1(x)))
        return F.relu(self.b2(self.c2(y)) + self.skip(x))


class SmallResNet(nn.Module):
    def __init__(self, num_classes: int, width: int = 16):
        super().__init__()
        self.stem = nn.Sequential(nn.Conv2d(3, width, 3, 1, 1, bias=False), nn.BatchNorm2d(width), nn.ReLU())
        self.layers = nn.Sequential(_Block(width, width, 1), _Block(width, 2 * width, 2), _Block(2 * width, 4 * width, 2))
        self.fc = nn.Linear(4 * width, num_classes)

    def forward(self, x):
        return self.fc(self.layers(self.stem(x)).mean(dim=(2, 3)))


class _TorchPredictor:
    def __init__(self, net: nn.Module, batch_size: int):
        self.net = net.eval()
        self.batch_size = batch_size

    @torch.no_grad()
    def predict_proba(self, images: np.ndarray) -> np.ndarray:
        out = []
        for i in range(0, len(images), self.batch_size):
            x = torch.as_tensor(np.asarray(images[i:i + self.batch_size]), dtype=torch.float32).permute(0, 3, 1, 2)
            out.append(torch.softmax(self.net(x * 2 - 1), dim=1).numpy())
        return np.concatenate(out) if out else np.zeros((0, self.net.fc.out_features))


class ResNetTrainer:
    """Desk-scale residual CNN classifier, trained full-batch with Adam."""

    def __init__(self, epochs: int = 150, lr: float = 3e-3, width: int = 32, seed: int = 0, batch_size: int = 256):
        self.epochs = epochs
        self.lr = lr
        self.width = width
        self.seed = seed
        self.batch_size = batch_size

    def fit(self, images: np.ndarray, labels: np.ndarray, num_classes: int) -> Predictor:
        torch.manual_seed(self.seed)
        net = SmallResNet(num_classes, self.width)
        opt = torch.optim.Adam(net.parameters(), lr=self.lr)
        x = torch.as_tensor(np.asarray(images), dtype=torch.float32).permute(0, 3, 1, 2) * 2 - 1
        y = torch.as_tensor(labels, dtype=torch.long)
        gen = torch.Generator().manual_seed(self.seed)
        net.train()
        for _ in range(self.epochs):
            order = torch.randperm(len(x), generator=gen)
            for i in range(0, len(x), self.batch_size):
                idx = order[i:i + self.batch_size]
                opt.zero_grad()
                F.cross_entropy(net(x[idx]), y[idx]).backward()
                opt.step()
        return _TorchPredictor(net, self.batch_size)


def select_manual_subset(labels: Sequence[int], fraction: float, seed: int = 0) -> np.ndarray:
    """Indices of a stratified random ``fraction`` of ``labels`` to label by hand.

    Every class gets at least one pick so the classifier sees all of them;
    the rest of the budget follows the class proportions.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    budget = max(int(round(fraction * len(labels))), len(np.unique(labels)))
    picks = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        k = max(1, int(round(budget * len(members) / len(labels))))
        picks.append(rng.choice(members, size=min(k, len(members)), replace=False))
    return np.sort(np.concatenate(picks))


def bootstrap_labels(manifest: DatasetManifest, trainer: ClassifierTrainer | None = None,
                     image_size: int = 32, blur_sigma: float = DEFAULT_BLUR_SIGMA,
                     loader: Callable[[SampleRecord], np.ndarray] | None = None) -> DatasetManifest:
    """Pseudo-label every record that has no manual label.

    ``loader`` maps a record to an (H, W, 3) float image; by default the
    record's image is read and centre-cropped to ``image_size``.
    """
    manual = [r for r in manifest.records if r.label_source == "manual"]
    todo = [r for r in manifest.records if r.label_source != "manual"]
    if not todo:
        return manifest
    num_classes = len(manifest.taxonomy)
    present = {r.composite_label_id for r in manual}
    missing = [c for c in range(num_classes) if c not in present]
    if missing:
        raise MissingClassError(missing)

    if loader is None:
        def loader(rec):
            return load_image(manifest.resolve(rec.image_path), image_size)

    train_x, train_y = [], []
    for rec in manual:
        img = loader(rec)
        for variant in [img, *augment(img, blur_sigma)]:
            train_x.append(variant)
            train_y.append(rec.composite_label_id)
    trainer = trainer or ResNetTrainer()
    predictor = trainer.fit(np.stack(train_x), np.asarray(train_y), num_classes)
    log.info("bootstrap: fitted on %d manual records (%d with augmentation)", len(manual), len(train_x))

    probs = predictor.predict_proba(np.stack([loader(r) for r in todo]))
    pseudo = {}
    for rec, p in zip(todo, probs):
        k = int(np.argmax(p))
        pseudo[rec.record_id] = replace(
            rec, composite_label_id=k, label_source="pseudo", confidence=float(min(max(p[k], 1e-12), 1.0))
        )
    records = [pseudo.get(r.record_id, r) for r in manifest.records]
    return manifest.with_records(records, note=f"pseudo-labelled {len(todo)} records from {len(manual)} manual")
