"""Loss terms for colorisation training.

Every term is a pure function of tensors so it can be checked in isolation:

    total = l_r + lambda_cls * l_cls + lambda_par * l_par
            + lambda_g * adversarial + lambda_info * l_info

Chroma and parsing renderings are compared in normalised units (ab / 110,
palette colours / 255). Squared Euclidean terms are summed per image and
averaged over the batch.

Critic orientation
------------------
The critic maximises ``mean D(real) - mean D(fake)`` under a gradient penalty
pulling ``||grad D||`` to 1. :func:`critic_loss` returns the quantity the
critic *descends*::

    standard:  mean D(fake) - mean D(real) + gp_weight * penalty
    literal:   mean D(fake) - mean D(real) - gp_weight * penalty

``literal`` subtracts the penalty from the descended objective, which rewards
steep critics; it exists for ablation only.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from typing import Callable, NamedTuple

import torch
import torch.nn.functional as F

KL_EPS = 1e-8
NORMALIZATION_TOL = 1e-6

CriticFn = Callable[[torch.Tensor], torch.Tensor]


@dataclass(frozen=True)
class LossWeights:
    lambda_cls: float = 0.003
    lambda_par: float = 0.003
    lambda_g: float = 0.1
    lambda_info: float = 0.003

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v >= 0:
                raise ValueError(f"{k} must be >= 0, got {v}")

    def scaled(self, **factors: float) -> "LossWeights":
        return replace(self, **{k: getattr(self, k) * f for k, f in factors.items()})


@dataclass
class LossReport:
    l_r: float
    l_par: float
    l_cls: float
    l_info: float
    l_g_generator_term: float
    weighted_cls: float
    weighted_par: float
    weighted_g: float
    weighted_info: float
    total: float

    @classmethod
    def from_terms(cls, weights: LossWeights, l_r, l_par, l_cls, l_info, adv) -> "LossReport":
        w_cls = weights.lambda_cls * l_cls
        w_par = weights.lambda_par * l_par
        w_g = weights.lambda_g * adv
        w_info = weights.lambda_info * l_info
        return cls(
            l_r=l_r, l_par=l_par, l_cls=l_cls, l_info=l_info, l_g_generator_term=adv,
            weighted_cls=w_cls, weighted_par=w_par, weighted_g=w_g, weighted_info=w_info,
            total=l_r + w_cls + w_par + w_g + w_info,
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def _batch_sq_l2(pred: torch.Tensor, true: torch.Tensor) -> torch.Tensor:
    diff = pred - true
    if diff.ndim <= 3:  # single unbatched image
        return diff.pow(2).sum()
    return diff.pow(2).flatten(1).sum(dim=1).mean()


def reconstruction_loss(ab_pred: torch.Tensor, ab_true: torch.Tensor) -> torch.Tensor:
    """Per-image ``||pred - true||^2``, averaged over the batch."""
    _check_same_shape(ab_pred, ab_true, "reconstruction_loss")
    return _batch_sq_l2(ab_pred, ab_true)


def parsing_loss(parse_pred: torch.Tensor, parse_true: torch.Tensor) -> torch.Tensor:
    """Same squared-Euclidean form as :func:`reconstruction_loss`, on parsing renderings."""
    _check_same_shape(parse_pred, parse_true, "parsing_loss")
    return _batch_sq_l2(parse_pred, parse_true)


def _check_distribution(p: torch.Tensor, name: str) -> None:
    sums = p.sum(dim=-1)
    # float32 softmax over a few hundred bins can miss 1 by a few ulp
    tol = max(NORMALIZATION_TOL, 32 * torch.finfo(p.dtype).eps)
    if (sums - 1).abs().max() > tol or (p < 0).any():
        raise ValueError(f"{name} is not a probability vector (sums range {sums.min():.6g}..{sums.max():.6g})")


def kl_divergence(target: torch.Tensor, approx: torch.Tensor, eps: float = KL_EPS) -> torch.Tensor:
    """Batch mean of KL(target || approx) over the last axis, with an eps floor on both logs."""
    _check_same_shape(target, approx, "kl_divergence")
    _check_distribution(target, "target")
    _check_distribution(approx, "approx")
    terms = target * (torch.log(target.clamp_min(eps)) - torch.log(approx.clamp_min(eps)))
    kl = terms.sum(dim=-1)
    return kl.mean() if kl.ndim else kl


def classification_loss(pred_dist: torch.Tensor, y_v: torch.Tensor, reverse: bool = False) -> torch.Tensor:
    """KL(y_v || pred_dist); ``reverse=True`` gives KL(pred_dist || y_v)."""
    return kl_divergence(pred_dist, y_v) if reverse else kl_divergence(y_v, pred_dist)


def info_loss(info_g: torch.Tensor, info_d: torch.Tensor, reverse: bool = False) -> torch.Tensor:
    """KL(info_d || info_g): the critic-recovered code is the reference."""
    return kl_divergence(info_g, info_d) if reverse else kl_divergence(info_d, info_g)


def smoothed_one_hot(labels: torch.Tensor, num_classes: int, smoothing: float = 0.05) -> torch.Tensor:
    one_hot = F.one_hot(labels.long(), num_classes).to(torch.get_default_dtype())
    return one_hot * (1.0 - smoothing) + smoothing / num_classes


def sample_interpolates(real: torch.Tensor, fake: torch.Tensor,
                        generator: torch.Generator | None = None,
                        eps: torch.Tensor | None = None) -> torch.Tensor:
    """``eps * real + (1 - eps) * fake`` with one ``eps ~ U(0, 1)`` per sample."""
    _check_same_shape(real, fake, "sample_interpolates")
    if eps is None:
        eps = torch.rand(real.shape[0], generator=generator, dtype=real.dtype)
    eps = torch.as_tensor(eps, dtype=real.dtype).reshape(-1, *([1] * (real.ndim - 1)))
    return eps * real + (1 - eps) * fake


def per_sample_score(critic: CriticFn, x: torch.Tensor) -> torch.Tensor:
    """Critic output reduced to one scalar per sample (mean over the patch grid)."""
    scores = critic(x)
    return scores.reshape(scores.shape[0], -1).mean(dim=1) if scores.ndim > 1 else scores


def gradient_penalty(critic: CriticFn, real: torch.Tensor, fake: torch.Tensor,
                     generator: torch.Generator | None = None,
                     eps: torch.Tensor | None = None) -> torch.Tensor:
    """Mean of ``(||grad_x D(x)||_2 - 1)^2`` at random interpolates of real and fake."""
    x_hat = sample_interpolates(real.detach(), fake.detach(), generator=generator, eps=eps)
    x_hat.requires_grad_(True)
    score = per_sample_score(critic, x_hat)
    if score.requires_grad:
        (grad,) = torch.autograd.grad(score.sum(), x_hat, create_graph=True)
    else:  # critic does not depend on its input at all
        grad = torch.zeros_like(x_hat)
    norms = grad.reshape(grad.shape[0], -1).norm(2, dim=1)
    return (norms - 1).pow(2).mean()


class CriticTerms(NamedTuple):
    loss: torch.Tensor
    gap: torch.Tensor  # mean D(real) - mean D(fake)
    penalty: torch.Tensor


def critic_loss(critic: CriticFn, real_lab: torch.Tensor, fake_ab: torch.Tensor, l_plane: torch.Tensor,
                gp_weight: float = 1.0, penalty_sign: str = "standard",
                generator: torch.Generator | None = None,
                eps: torch.Tensor | None = None) -> CriticTerms:
    """Objective the critic descends; see the module docstring for orientation."""
    if penalty_sign not in ("standard", "literal"):
        raise ValueError(f"penalty_sign must be 'standard' or 'literal', got {penalty_sign!r}")
    fake_lab = torch.cat([l_plane, fake_ab.detach()], dim=1)
    _check_same_shape(real_lab, fake_lab, "critic_loss")
    gap = per_sample_score(critic, real_lab).mean() - per_sample_score(critic, fake_lab).mean()
    penalty = gradient_penalty(critic, real_lab, fake_lab, generator=generator, eps=eps)
    sign = 1.0 if penalty_sign == "standard" else -1.0
    return CriticTerms(-gap + sign * gp_weight * penalty, gap.detach(), penalty.detach())


def generator_adversarial_term(critic: CriticFn, l_plane: torch.Tensor, ab_pred: torch.Tensor) -> torch.Tensor:
    """``-mean D(L, ab_pred)``; the real-data half is constant for the generator."""
    return -per_sample_score(critic, torch.cat([l_plane, ab_pred], dim=1)).mean()


def _masked_mean(fn, pred, true, mask):
    if mask is None:
        return fn(pred, true)
    mask = mask.bool()
    if not mask.any():
        return pred.sum() * 0.0
    return fn(pred[mask], true[mask])


def total_generator_loss(outputs, targets, critic, weights: LossWeights,
                         cls_reverse: bool = False, info_reverse: bool = False):
    """Weighted generator objective.

    ``outputs`` is a :class:`~historynet.model.GeneratorOutput`; ``targets``
    needs ``L``, ``ab``, ``label_dist`` and ``parsing`` tensors, plus optional
    ``label_mask`` / ``parsing_mask`` marking samples that carry those
    annotations. ``critic`` is a :class:`~historynet.model.Critic`.

    Returns ``(total_tensor, LossReport)``.
    """
    l_r = reconstruction_loss(outputs.ab, targets.ab)
    l_par = _masked_mean(parsing_loss, outputs.parsing_pred, targets.parsing, getattr(targets, "parsing_mask", None))
    pred_dist = torch.softmax(outputs.label_logits, dim=-1)
    l_cls = _masked_mean(lambda p, y: classification_loss(p, y, reverse=cls_reverse),
                         pred_dist, targets.label_dist, getattr(targets, "label_mask", None))
    info_d = torch.softmax(critic.info(outputs.ab), dim=-1)
    l_info = info_loss(torch.softmax(outputs.info_g, dim=-1), info_d, reverse=info_reverse)
    adv = generator_adversarial_term(critic.score, targets.L, outputs.ab)

    total = (l_r + weights.lambda_cls * l_cls + weights.lambda_par * l_par
             + weights.lambda_g * adv + weights.lambda_info * l_info)
    report = LossReport.from_terms(
        weights, *(float(t.detach()) for t in (l_r, l_par, l_cls, l_info, adv))
    )
    return total, report
