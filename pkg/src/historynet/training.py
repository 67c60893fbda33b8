"""Alternating critic / generator optimisation.

Each batch runs ``critic_steps_per_gen_step`` critic updates followed by one
generator update. The critic step trains D1 on the WGAN-GP objective and, when
the classifier branch is enabled, D2 to recover the generator's info code
from the (detached) generated chroma. The generator step descends the
weighted total loss with the critic frozen.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
import torch

from .checkpoint import read_checkpoint, restore_into, save_checkpoint
from .colorspace import normalize_ab, normalize_l, rgb_to_lab
from .config import TrainConfig
from .data.images import load_image, load_index_map
from .data.manifest import DatasetManifest
from .data.parsing import Palette, parsing_target
from .losses import (
    LossReport,
    critic_loss,
    info_loss,
    sample_interpolates,
    smoothed_one_hot,
    total_generator_loss,
)
from .model import Critic, Generator, ModelConfig, build_critic, build_generator, read_backbone_map

log = logging.getLogger(__name__)

__all__ = [
    "Batch", "TrainState", "NonFiniteLossError", "TrainingDataError", "CriticReport",
    "build_state", "train_step_critic", "train_step_generator", "train", "resume",
    "sample_interpolates", "load_training_data", "batches_for_epoch",
]


class NonFiniteLossError(RuntimeError):
    pass


class TrainingDataError(ValueError):
    pass


class Batch(NamedTuple):
    L: torch.Tensor  # (N, 1, H, W), L / 50 - 1
    ab: torch.Tensor  # (N, 2, H, W), ab / 110
    label_dist: torch.Tensor  # (N, label_count)
    label_mask: torch.Tensor  # (N,) bool
    parsing: torch.Tensor  # (N, 3, H, W) in [0, 1]
    parsing_mask: torch.Tensor  # (N,) bool

    @property
    def lab(self) -> torch.Tensor:
        return torch.cat([self.L, self.ab], dim=1)

    def index(self, idx) -> "Batch":
        return Batch(*(t[idx] for t in self))


@dataclass
class CriticReport:
    loss: float
    gap: float
    penalty: float
    l_info_d: float


@dataclass
class TrainState:
    config: TrainConfig
    model_config: ModelConfig
    generator: Generator
    critic: Critic
    opt_g: torch.optim.Optimizer
    opt_c: torch.optim.Optimizer
    rng: torch.Generator
    step: int = 0  # generator steps taken
    epoch: int = 0
    batch_in_epoch: int = 0
    extra: dict = field(default_factory=dict)


def build_state(config: TrainConfig, model_config: ModelConfig | None = None, label_count: int | None = None) -> TrainState:
    if model_config is None:
        model_config = config.model_config(label_count or 42)
    torch.manual_seed(config.seed)
    backbone = config.backbone_weights or None
    mapping = read_backbone_map(config.backbone_map) if config.backbone_map else None
    gen = build_generator(model_config, backbone, mapping)
    critic = build_critic(model_config)
    gen.use_parsing = config.parsing_enabled
    gen.use_info = config.classifier_enabled
    betas = (config.beta1, config.beta2)
    opt_g = torch.optim.Adam(gen.parameters(), lr=config.learning_rate, betas=betas)
    opt_c = torch.optim.Adam(critic.parameters(), lr=config.learning_rate, betas=betas)
    rng = torch.Generator().manual_seed(config.seed + 1)
    return TrainState(config, model_config, gen, critic, opt_g, opt_c, rng)


def _batch_stats(batch: Batch) -> str:
    parts = []
    for name, t in zip(batch._fields, batch):
        if t.is_floating_point():
            parts.append(f"{name}: min={t.min():.4g} max={t.max():.4g} mean={t.mean():.4g} "
                         f"finite={bool(torch.isfinite(t).all())}")
    return "; ".join(parts)


def _require_finite(value: torch.Tensor, what: str, batch: Batch) -> None:
    if not torch.isfinite(value).all():
        raise NonFiniteLossError(f"non-finite {what} loss ({float(value.detach())}); batch stats: {_batch_stats(batch)}")


def train_step_critic(state: TrainState, batch: Batch) -> CriticReport:
    """One optimiser update of the critic; the generator is only evaluated."""
    cfg = state.config
    with torch.no_grad():
        out = state.generator(batch.L)
    state.critic.train()
    terms = critic_loss(state.critic.score, batch.lab, out.ab, batch.L, gp_weight=cfg.gp_weight,
                        penalty_sign=cfg.penalty_sign, generator=state.rng)
    loss = terms.loss
    l_info_d = torch.zeros(())
    if cfg.classifier_enabled:
        info_d = torch.softmax(state.critic.info(out.ab), dim=-1)
        l_info_d = info_loss(torch.softmax(out.info_g, dim=-1), info_d, reverse=cfg.info_kl_reverse)
        loss = loss + l_info_d
    _require_finite(loss, "critic", batch)
    state.opt_c.zero_grad(set_to_none=True)
    loss.backward()
    state.opt_c.step()
    return CriticReport(float(loss.detach()), float(terms.gap), float(terms.penalty), float(l_info_d.detach()))


def train_step_generator(state: TrainState, batch: Batch) -> LossReport:
    """One optimiser update of the generator with the critic frozen."""
    cfg = state.config
    state.generator.train()
    state.critic.requires_grad_(False)
    try:
        out = state.generator(batch.L)
        total, report = total_generator_loss(out, batch, state.critic, cfg.loss_weights,
                                             cls_reverse=cfg.cls_kl_reverse, info_reverse=cfg.info_kl_reverse)
        _require_finite(total, "generator", batch)
        state.opt_g.zero_grad(set_to_none=True)
        total.backward()
        state.opt_g.step()
    finally:
        state.critic.requires_grad_(True)
    return report


# --- data ---------------------------------------------------------------------

Teacher = Callable[[np.ndarray], np.ndarray]


def arrays_to_batch(images: np.ndarray, labels, parsing: np.ndarray | None, label_count: int,
                    smoothing: float = 0.05, teacher: Teacher | None = None,
                    parsing_mask=None) -> Batch:
    """Float RGB images (N, H, W, 3) plus annotations -> tensors in network units.

    ``labels`` holds composite ids, -1 for unlabelled. ``parsing`` holds
    renderings in [0, 1] (N, H, W, 3) or ``None``.
    """
    images = np.asarray(images, dtype=np.float64)
    n = len(images)
    lab = rgb_to_lab(images)
    L = torch.as_tensor(normalize_l(lab[..., 0]), dtype=torch.float32)[:, None]
    ab = torch.as_tensor(normalize_ab(lab[..., 1:]), dtype=torch.float32).permute(0, 3, 1, 2)
    labels = torch.as_tensor(np.asarray(labels, dtype=np.int64))
    if teacher is not None:
        label_dist = torch.as_tensor(teacher(images), dtype=torch.float32)
        label_mask = torch.ones(n, dtype=torch.bool)
    else:
        label_mask = labels >= 0
        label_dist = smoothed_one_hot(labels.clamp_min(0), label_count, smoothing).float()
    if parsing is None:
        par = torch.zeros(n, 3, *images.shape[1:3])
        pmask = torch.zeros(n, dtype=torch.bool)
    else:
        par = torch.as_tensor(np.asarray(parsing), dtype=torch.float32).permute(0, 3, 1, 2)
        pmask = torch.ones(n, dtype=torch.bool) if parsing_mask is None else torch.as_tensor(parsing_mask)
    return Batch(L, ab.contiguous(), label_dist, label_mask, par.contiguous(), pmask)


def load_training_data(manifest: DatasetManifest, config: TrainConfig, split: str = "train",
                       palette: Palette | None = None, teacher: Teacher | None = None) -> tuple[Batch, int]:
    """Load every record of ``split`` into one in-memory batch.

    Unreadable samples are skipped with a warning; more than
    ``config.max_skip_fraction`` of them aborts. Returns (data, skipped).
    """
    records = manifest.split(split)
    if not records:
        raise TrainingDataError(f"manifest has no {split!r} records")
    palette = palette or Palette.load()
    size = config.image_size
    images, labels, parses, pmask, skipped = [], [], [], [], 0
    for rec in records:
        try:
            img = load_image(manifest.resolve(rec.image_path), size)
            par = None
            if rec.parsing_path is not None:
                par = parsing_target(load_index_map(manifest.resolve(rec.parsing_path), palette, size), palette)
        except (OSError, ValueError) as exc:
            log.warning("skipping unreadable sample %s: %s", rec.record_id, exc)
            skipped += 1
            continue
        images.append(img)
        labels.append(-1 if rec.composite_label_id is None else rec.composite_label_id)
        parses.append(par if par is not None else np.zeros_like(img))
        pmask.append(par is not None)
    if skipped > config.max_skip_fraction * len(records):
        raise TrainingDataError(f"{skipped} of {len(records)} samples unreadable "
                                f"(limit {config.max_skip_fraction:.1%})")
    if not images:
        raise TrainingDataError("no readable samples")
    batch = arrays_to_batch(np.stack(images), labels, np.stack(parses), len(manifest.taxonomy),
                            config.label_smoothing, teacher, parsing_mask=pmask)
    return batch, skipped


def batches_for_epoch(n: int, batch_size: int, seed: int, epoch: int) -> list[torch.Tensor]:
    """Deterministic shuffled index batches; the last one may be short."""
    gen = torch.Generator().manual_seed(seed * 1_000_003 + epoch)
    order = torch.randperm(n, generator=gen)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


# --- loop ---------------------------------------------------------------------

def _checkpoint(state: TrainState, directory: Path) -> Path:
    return save_checkpoint(
        directory, generator=state.generator, critic=state.critic, opt_g=state.opt_g, opt_c=state.opt_c,
        rng=state.rng, step=state.step, epoch=state.epoch, batch_in_epoch=state.batch_in_epoch,
        train_config=state.config.to_dict(), model_config=state.model_config.to_dict(), extra=state.extra,
    )


def resume(directory: str | Path) -> TrainState:
    meta, tensors = read_checkpoint(directory)
    config = TrainConfig(**meta["train_config"])
    model_config = ModelConfig.from_dict(meta["model_config"])
    # weights come from the checkpoint, never from the backbone file
    state = build_state(replace(config, backbone_weights=""), model_config)
    state.config = config
    restore_into(meta, tensors, generator=state.generator, critic=state.critic,
                 opt_g=state.opt_g, opt_c=state.opt_c, rng=state.rng)
    state.step, state.epoch, state.batch_in_epoch = meta["step"], meta["epoch"], meta["batch_in_epoch"]
    state.extra = meta.get("extra", {})
    return state


def run_epochs(state: TrainState, data: Batch, out_dir: Path | None = None, log_fh=None,
               max_steps: int | None = None) -> TrainState:
    """Continue training ``state`` on in-memory ``data`` until the configured epochs end.

    ``max_steps`` stops early after that many generator steps in this call.
    """
    cfg = state.config
    n = data.L.shape[0]
    taken = 0
    while state.epoch < cfg.epochs:
        batches = batches_for_epoch(n, cfg.batch_size, cfg.seed, state.epoch)
        while state.batch_in_epoch < len(batches):
            if max_steps is not None and taken >= max_steps:
                return state
            batch = data.index(batches[state.batch_in_epoch])
            for _ in range(cfg.critic_steps_per_gen_step):
                c = train_step_critic(state, batch)
                if log_fh is not None:
                    log_fh.write(json.dumps({"kind": "critic", "step": state.step, "epoch": state.epoch,
                                             **asdict(c)}, sort_keys=True) + "\n")
            report = train_step_generator(state, batch)
            state.step += 1
            state.batch_in_epoch += 1
            taken += 1
            if log_fh is not None:
                log_fh.write(json.dumps({"kind": "generator", "step": state.step, "epoch": state.epoch,
                                         **asdict(report)}, sort_keys=True) + "\n")
                log_fh.flush()
            if out_dir is not None and cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
                _checkpoint(state, out_dir / "checkpoints" / f"step-{state.step:07d}")
        state.epoch += 1
        state.batch_in_epoch = 0
        if out_dir is not None and not cfg.checkpoint_every:
            _checkpoint(state, out_dir / "checkpoints" / f"epoch-{state.epoch:03d}")
    return state


@dataclass
class TrainResult:
    state: TrainState
    checkpoint: Path | None
    log_path: Path | None
    skipped: int


def train(config: TrainConfig, manifest: DatasetManifest, out_dir: str | Path | None = None,
          resume_from: str | Path | None = None, teacher: Teacher | None = None,
          palette: Palette | None = None) -> TrainResult:
    """Train from a manifest, writing ``train_log.jsonl`` and checkpoints under ``out_dir``.

    The final checkpoint is written to ``<out_dir>/checkpoint``.
    """
    if len(manifest) == 0:
        raise TrainingDataError("manifest is empty")
    data, skipped = load_training_data(manifest, config, "train", palette, teacher)
    if resume_from is not None:
        state = resume(resume_from)
        if state.model_config.label_count != len(manifest.taxonomy):
            raise TrainingDataError("checkpoint label count does not match the manifest taxonomy")
        # only the epoch budget may change on resume
        state.config = replace(state.config, epochs=config.epochs)
    else:
        state = build_state(config, label_count=len(manifest.taxonomy))
    state.extra = {"taxonomy_hash": manifest.taxonomy.hash, "skipped_samples": skipped}
    out = Path(out_dir) if out_dir is not None else None
    log_path = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "train_log.jsonl"
        with open(log_path, "a" if resume_from else "w") as fh:
            if skipped:
                fh.write(json.dumps({"kind": "data", "skipped_samples": skipped}) + "\n")
            run_epochs(state, data, out, fh)
        final = _checkpoint(state, out / "checkpoint")
    else:
        run_epochs(state, data)
        final = None
    log.info("training finished after %d generator steps", state.step)
    return TrainResult(state, final, log_path, skipped)


def steps_per_epoch(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)
