import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from historynet.data.parsing import parsing_target
from historynet.losses import (
    LossReport, LossWeights, classification_loss, critic_loss, generator_adversarial_term,
    gradient_penalty, info_loss, kl_divergence, parsing_loss, reconstruction_loss, sample_interpolates,
    smoothed_one_hot, total_generator_loss,
)
from historynet.model import GeneratorOutput
from oracles import KL_HALF_VS_QUARTER, KL_ONEHOT_VS_UNIFORM, kl

T = torch.tensor


def linear_critic(w):
    w = torch.as_tensor(w, dtype=torch.float64)
    return lambda x: (x.reshape(x.shape[0], -1) * w).sum(dim=1)


def test_reconstruction_examples():
    pred = T([[[[0.5]], [[-0.5]]]], dtype=torch.float64)
    true = torch.zeros_like(pred)
    assert reconstruction_loss(pred, true).item() == pytest.approx(0.5, abs=1e-12)
    assert reconstruction_loss(pred, pred).item() == 0
    assert reconstruction_loss(2 * pred, true).item() == pytest.approx(4 * 0.5)


def test_reconstruction_is_batch_mean_of_image_sums():
    a, b = torch.rand(3, 2, 4, 4, dtype=torch.float64), torch.rand(3, 2, 4, 4, dtype=torch.float64)
    want = ((a - b) ** 2).sum(dim=(1, 2, 3)).mean()
    assert reconstruction_loss(a, b).item() == pytest.approx(want.item(), rel=1e-12)
    with pytest.raises(ValueError):
        reconstruction_loss(a, b[:, :1])


def test_parsing_loss_palette_distance(palette):
    idx = np.zeros((1, 4, 4), dtype=np.int64)
    true = parsing_target(idx[0], palette)
    idx[0, 2, 1] = palette.names.index("face")
    pred = parsing_target(idx[0], palette)
    d = (palette.color_of("face").astype(float) - palette.color_of("background").astype(float)) / 255
    to_t = lambda x: torch.as_tensor(x).permute(2, 0, 1)[None]  # noqa: E731
    got = parsing_loss(to_t(pred), to_t(true)).item()
    assert got == pytest.approx(float((d**2).sum()), abs=1e-12)
    assert parsing_loss(to_t(true), to_t(pred)).item() == got
    assert parsing_loss(to_t(true), to_t(true)).item() == 0


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10))
def test_quadratic_homogeneity(k):
    g = torch.Generator().manual_seed(0)
    a = torch.rand(2, 3, 4, 4, generator=g, dtype=torch.float64)
    b = torch.rand(2, 3, 4, 4, generator=g, dtype=torch.float64)
    base = parsing_loss(a, b).item()
    assert parsing_loss(b + k * (a - b), b).item() == pytest.approx(k * k * base, rel=1e-9)
    assert reconstruction_loss(b + k * (a - b), b).item() == pytest.approx(k * k * base, rel=1e-9)


def test_kl_closed_forms():
    assert classification_loss(T([0.5, 0.5]), T([1.0, 0.0])).item() == pytest.approx(KL_ONEHOT_VS_UNIFORM, abs=1e-6)
    assert KL_ONEHOT_VS_UNIFORM == pytest.approx(0.6931, abs=1e-4)
    assert classification_loss(T([0.25, 0.75]), T([0.5, 0.5])).item() == pytest.approx(KL_HALF_VS_QUARTER, abs=1e-6)
    assert KL_HALF_VS_QUARTER == pytest.approx(0.1438, abs=1e-4)
    assert classification_loss(T([0.3, 0.7]), T([0.3, 0.7])).item() == pytest.approx(0, abs=1e-7)
    # info: KL(info_d || info_g)
    assert info_loss(T([0.5, 0.5]), T([1.0, 0.0])).item() == pytest.approx(math.log(2), abs=1e-6)
    assert info_loss(T([0.2, 0.8]), T([0.2, 0.8])).item() == pytest.approx(0, abs=1e-7)


def test_kl_directions():
    p, q = T([0.5, 0.5], dtype=torch.float64), T([0.25, 0.75], dtype=torch.float64)
    fwd = classification_loss(q, p).item()
    rev = classification_loss(q, p, reverse=True).item()
    assert fwd == pytest.approx(kl([0.5, 0.5], [0.25, 0.75]), abs=1e-9)
    assert rev == pytest.approx(kl([0.25, 0.75], [0.5, 0.5]), abs=1e-9)
    assert info_loss(p, q).item() == pytest.approx(kl([0.25, 0.75], [0.5, 0.5]), abs=1e-9)
    assert info_loss(p, q, reverse=True).item() == pytest.approx(kl([0.5, 0.5], [0.25, 0.75]), abs=1e-9)


def test_kl_rejects_unnormalised():
    with pytest.raises(ValueError):
        classification_loss(T([0.5, 0.6]), T([1.0, 0.0]))
    with pytest.raises(ValueError):
        info_loss(T([0.5, 0.5]), T([-0.5, 1.5]))


def test_kl_nonnegative_random_pairs():
    g = torch.Generator().manual_seed(0)
    p = torch.softmax(torch.randn(1000, 8, generator=g, dtype=torch.float64) * 3, dim=-1)
    q = torch.softmax(torch.randn(1000, 8, generator=g, dtype=torch.float64) * 3, dim=-1)
    per_pair = torch.stack([kl_divergence(p[i], q[i]) for i in range(1000)])
    assert (per_pair >= 0).all()
    assert torch.stack([kl_divergence(p[i], p[i]) for i in range(1000)]).abs().max() < 1e-7


def test_smoothed_one_hot():
    y = smoothed_one_hot(T([1, 0]), 4, 0.05)
    assert torch.allclose(y.sum(-1), torch.ones(2, dtype=y.dtype))
    assert y[0, 1].item() == pytest.approx(0.95 + 0.0125)


def test_gradient_penalty_linear_and_constant():
    real = torch.randn(5, 2, 3, 3, dtype=torch.float64)
    fake = torch.randn(5, 2, 3, 3, dtype=torch.float64)
    w = torch.randn(18, dtype=torch.float64)
    unit = linear_critic(w / w.norm())
    three = linear_critic(3 * w / w.norm())
    const = lambda x: torch.full((x.shape[0],), 0.7, dtype=x.dtype)  # noqa: E731
    assert gradient_penalty(unit, real, fake).item() == pytest.approx(0, abs=1e-10)
    assert gradient_penalty(three, real, fake).item() == pytest.approx(4, abs=1e-6)
    assert gradient_penalty(const, real, fake).item() == pytest.approx(1, abs=1e-6)


def test_interpolates():
    real, fake = torch.zeros(4, 3), torch.ones(4, 3)
    assert torch.equal(sample_interpolates(real, real), real)
    assert torch.equal(sample_interpolates(real, fake, eps=torch.ones(4)), real)
    assert torch.equal(sample_interpolates(real, fake, eps=torch.zeros(4)), fake)
    g = torch.Generator().manual_seed(0)
    x = sample_interpolates(torch.zeros(10_000, 1), torch.ones(10_000, 1), generator=g)
    assert x.mean().item() == pytest.approx(0.5, abs=0.02)
    rows = sample_interpolates(torch.zeros(3, 4), torch.ones(3, 4), generator=g)
    assert torch.equal(rows, rows[:, :1].expand(-1, 4))  # one eps per sample
    with pytest.raises(ValueError):
        sample_interpolates(torch.zeros(3, 4), torch.ones(3, 5))


def _lab_pair(n=3, hw=4):
    g = torch.Generator().manual_seed(1)
    L = torch.rand(n, 1, hw, hw, generator=g, dtype=torch.float64)
    real = torch.cat([L, torch.rand(n, 2, hw, hw, generator=g, dtype=torch.float64)], dim=1)
    return real, torch.rand(n, 2, hw, hw, generator=g, dtype=torch.float64), L


def test_critic_loss_constant_and_unit_critics():
    real, fake_ab, L = _lab_pair()
    const = lambda x: torch.full((x.shape[0],), 2.0, dtype=x.dtype)  # noqa: E731
    for coef in (1.0, 10.0):
        terms = critic_loss(const, real, fake_ab, L, gp_weight=coef)
        assert terms.gap.item() == 0
        assert terms.penalty.item() == pytest.approx(1.0)
        assert terms.loss.item() == pytest.approx(coef)
    # a unit-gradient critic that scores real and fake alike: only the (zero) penalty remains
    w = torch.zeros(3, 4, 4, dtype=torch.float64)
    w[0, 0, 0] = 1.0  # looks at L only, which real and fake share
    terms = critic_loss(linear_critic(w.flatten()), real, fake_ab, L)
    assert terms.loss.item() == pytest.approx(0, abs=1e-10)


def test_critic_loss_prefers_higher_real_scores():
    real, fake_ab, L = _lab_pair()
    real_ids = set(map(float, real.sum(dim=(1, 2, 3))))

    def offset_critic(delta):
        def critic(x):
            base = x.mean(dim=(1, 2, 3))
            is_real = torch.tensor([float(s) in real_ids for s in x.detach().sum(dim=(1, 2, 3))])
            return base + delta * is_real
        return critic

    eps = torch.full((3,), 0.5, dtype=torch.float64)
    values = [critic_loss(offset_critic(d), real, fake_ab, L, eps=eps).loss.item() for d in (0.0, 0.5, 1.0)]
    assert values[0] > values[1] > values[2]


def test_penalty_sign_option():
    real, fake_ab, L = _lab_pair()
    const = lambda x: torch.zeros(x.shape[0], dtype=x.dtype)  # noqa: E731
    assert critic_loss(const, real, fake_ab, L, penalty_sign="standard").loss.item() == pytest.approx(1.0)
    assert critic_loss(const, real, fake_ab, L, penalty_sign="literal").loss.item() == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        critic_loss(const, real, fake_ab, L, penalty_sign="other")


def test_generator_adversarial_term():
    _, fake_ab, L = _lab_pair()
    score = lambda x: x.mean(dim=(1, 2, 3))  # noqa: E731
    want = -torch.cat([L, fake_ab], dim=1).mean(dim=(1, 2, 3)).mean()
    assert generator_adversarial_term(score, L, fake_ab).item() == pytest.approx(want.item())


def test_report_arithmetic():
    r = LossReport.from_terms(LossWeights(), 1, 1, 1, 1, 1)
    assert r.total == pytest.approx(1.109, abs=1e-12)
    r0 = LossReport.from_terms(LossWeights(), 0, 0, 0, 0, 0)
    assert r0.total == 0
    r2 = LossReport.from_terms(LossWeights().scaled(lambda_g=2), 1, 1, 1, 1, 1)
    assert r2.weighted_g == pytest.approx(2 * r.weighted_g)
    assert (r2.weighted_cls, r2.weighted_par, r2.weighted_info) == (r.weighted_cls, r.weighted_par, r.weighted_info)


def test_weights_validation():
    assert (LossWeights().lambda_cls, LossWeights().lambda_par, LossWeights().lambda_g,
            LossWeights().lambda_info) == (0.003, 0.003, 0.1, 0.003)
    with pytest.raises(ValueError):
        LossWeights(lambda_g=-0.1)


class _Targets:
    def __init__(self, L, ab, label_dist, parsing):
        self.L, self.ab, self.label_dist, self.parsing = L, ab, label_dist, parsing


class _StubCritic:
    def __init__(self, info_logits):
        self._info = info_logits

    def score(self, lab):
        return torch.zeros(lab.shape[0], 2, 2, dtype=lab.dtype)

    def info(self, ab):
        return self._info


def test_total_generator_loss_exact_sum():
    g = torch.Generator().manual_seed(2)
    n = 2
    r = lambda *s: torch.rand(*s, generator=g, dtype=torch.float64)  # noqa: E731
    out = GeneratorOutput(r(n, 2, 4, 4), torch.randn(n, 3, generator=g, dtype=torch.float64),
                          torch.randn(n, 5, generator=g, dtype=torch.float64), r(n, 3, 4, 4))
    tgt = _Targets(r(n, 1, 4, 4), r(n, 2, 4, 4), torch.softmax(r(n, 3), -1), r(n, 3, 4, 4))
    critic = _StubCritic(torch.randn(n, 5, generator=g, dtype=torch.float64))
    total, rep = total_generator_loss(out, tgt, critic, LossWeights())
    recomputed = (rep.l_r + 0.003 * rep.l_cls + 0.003 * rep.l_par + 0.1 * rep.l_g_generator_term
                  + 0.003 * rep.l_info)
    assert rep.total == pytest.approx(recomputed, abs=1e-12)
    assert total.item() == pytest.approx(rep.total, abs=1e-12)
    # all-zero case
    zero = GeneratorOutput(tgt.ab, torch.log(tgt.label_dist), torch.zeros(n, 5, dtype=torch.float64), tgt.parsing)
    total0, rep0 = total_generator_loss(zero, tgt, _StubCritic(torch.zeros(n, 5, dtype=torch.float64)),
                                        LossWeights())
    assert abs(total0.item()) < 1e-12 and abs(rep0.total) < 1e-12
