"""Acceptance suite: one test per criterion, each printing a [PASS]/[FAIL] line."""

import math
import subprocess
import sys
import time

import numpy as np
import pytest
import torch

from historynet.colorspace import hue_histogram, lab_to_rgb, rgb_to_lab
from historynet.config import TrainConfig, load_config
from historynet.data.bootstrap import ResNetTrainer, bootstrap_labels, select_manual_subset
from historynet.data.build import build_manifest
from historynet.data.manifest import DatasetManifest, SampleRecord
from historynet.data.parsing import Palette, parsing_target
from historynet.evaluation import PSNR_CAP_DB, RandomProjectionBackend, evaluate, evaluate_pairs, luminance, psnr, ssim
from historynet.inference import colorize
from historynet.losses import LossWeights, classification_loss, gradient_penalty, reconstruction_loss, total_generator_loss
from historynet.model import ModelConfig, build_critic, build_generator
from historynet.synthetic import FIXTURE_TAXONOMY, make_dataset, write_fixture
from historynet.training import (
    Batch, arrays_to_batch, build_state, load_training_data, run_epochs, train, train_step_critic,
    train_step_generator,
)

from conftest import FIXTURE, synthetic_batch
from oracles import KL_ONEHOT_VS_UNIFORM, PSNR_HALF_OFFSET, PSNR_MSE_001, lab_of_rgb, ssim_oracle

L_STEP = 100 / 255  # one 8-bit grey level in L* units


@pytest.fixture
def verdict(capsys):
    def report(n, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
        assert ok, detail
    return report


# --- 1: loss closed forms -------------------------------------------------------------

def _linear(w):
    return lambda x: (x.flatten(1) * w).sum(dim=1)


def test_criterion_01_loss_closed_forms(verdict):
    t = torch.tensor
    kl = classification_loss(t([0.5, 0.5], dtype=torch.float64), t([1.0, 0.0], dtype=torch.float64)).item()
    rec = reconstruction_loss(t([[[[0.5]], [[-0.5]]]], dtype=torch.float64), torch.zeros(1, 2, 1, 1, dtype=torch.float64)).item()
    g = torch.Generator().manual_seed(0)
    real = torch.rand(4, 3, 4, 4, generator=g, dtype=torch.float64)
    fake = torch.rand(4, 3, 4, 4, generator=g, dtype=torch.float64)
    w = torch.randn(48, generator=g, dtype=torch.float64)
    gps = [gradient_penalty(c, real, fake, generator=g).item()
           for c in (_linear(w / w.norm()), lambda x: torch.full((x.shape[0],), 3.0, dtype=x.dtype),
                     _linear(3 * w / w.norm()))]
    errs = [abs(kl - KL_ONEHOT_VS_UNIFORM), abs(kl - math.log(2)), abs(rec - 0.5),
            abs(gps[0]), abs(gps[1] - 1), abs(gps[2] - 4)]
    verdict(1, max(errs) < 1e-6, f"KL={kl:.9f} L_r={rec:.9f} GP={gps[0]:.2e}/{gps[1]:.9f}/{gps[2]:.9f} "
                                 f"max err {max(errs):.1e} (tol 1e-6)")


# --- 2: finite-difference gradient check ------------------------------------------------

def _gradcheck_setup():
    torch.manual_seed(0)
    cfg = ModelConfig.test(input_size=(8, 8))
    gen, critic = build_generator(cfg).double(), build_critic(cfg).double()
    g = torch.Generator().manual_seed(1)
    n, dt = 2, torch.float64
    labels = torch.tensor([1, 3])
    dist = torch.full((n, cfg.label_count), 0.05 / cfg.label_count, dtype=dt)
    dist[torch.arange(n), labels] += 0.95
    batch = Batch(
        L=torch.rand(n, 1, 8, 8, generator=g, dtype=dt) * 2 - 1,
        ab=(torch.rand(n, 2, 8, 8, generator=g, dtype=dt) - 0.5),
        label_dist=dist, label_mask=torch.ones(n, dtype=torch.bool),
        parsing=torch.rand(n, 3, 8, 8, generator=g, dtype=dt), parsing_mask=torch.ones(n, dtype=torch.bool),
    )
    weights = LossWeights(1.0, 1.0, 1.0, 1.0)  # unit weights keep every term resolvable

    def loss():
        return total_generator_loss(gen(batch.L), batch, critic, weights)

    return gen, critic, loss


def _activation_pattern(gen, critic):
    """Hooks recording every piecewise-linear switch: ReLU signs and 2x2 max-pool winners.

    A central difference is only valid when no switch flips along the probe
    segment, so probes that cross one are replaced.
    """
    pattern = []

    def on_relu(module, args, out):
        pattern.append(args[0] > 0)

    def on_stage(module, args, out):  # G0 max-pools each stage output except the last
        pattern.append(torch.nn.functional.max_pool2d(out, 2, return_indices=True)[1])

    for m in [*gen.modules(), *critic.modules()]:
        if isinstance(m, (torch.nn.ReLU, torch.nn.LeakyReLU)):
            m.register_forward_hook(on_relu)
    gen.g0.stage1.register_forward_hook(on_stage)
    gen.g0.stage2.register_forward_hook(on_stage)
    return pattern


def _same(a, b):
    return len(a) == len(b) and all(torch.equal(x, y) for x, y in zip(a, b))


def test_criterion_02_gradient_check(verdict):
    start = time.perf_counter()
    gen, critic, loss = _gradcheck_setup()
    pattern = _activation_pattern(gen, critic)
    total, report = loss()
    base = list(pattern)
    terms = (report.l_r, report.l_par, report.l_cls, report.l_info, report.l_g_generator_term)
    gen.zero_grad()
    critic.zero_grad()
    total.backward()
    rng = np.random.default_rng(0)
    h, probes, worst, crossed = 1e-4, 20, {}, {}
    for name, module in {**gen.branches(), **critic.branches()}.items():
        params = list(module.parameters())
        theta = torch.nn.utils.parameters_to_vector(params).detach().clone()
        grad = torch.cat([p.grad.reshape(-1) for p in params])
        errs, crossed[name] = [], 0
        while len(errs) < probes:
            v = torch.as_tensor(rng.standard_normal(theta.numel()))
            v /= v.norm()
            values, smooth = [], True
            with torch.no_grad():
                for sign in (1, -1):
                    torch.nn.utils.vector_to_parameters(theta + sign * h * v, params)
                    pattern.clear()
                    values.append(loss()[0].item())
                    smooth &= _same(pattern, base)
                torch.nn.utils.vector_to_parameters(theta, params)
            if not smooth:
                crossed[name] += 1
                continue
            fd, an = (values[0] - values[1]) / (2 * h), float(grad @ v)
            errs.append(abs(fd - an) / max(abs(fd), abs(an), 1e-12))
        worst[name] = max(errs)
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) < 1e-4 and all(t > 0 for t in terms[:4]) and terms[4] != 0 and elapsed < 300
    detail = " ".join(f"{k}={v:.1e}" for k, v in worst.items())
    skipped = sum(crossed.values())
    verdict(2, ok, f"worst rel err over {probes} probes/branch: {detail} (tol 1e-4); "
                   f"terms {['%.3g' % t for t in terms]}; {skipped} kink-crossing probes replaced; {elapsed:.1f}s")


# --- 3: ablations starve the disabled branch ----------------------------------------------

def _grads_zero(params):
    return all(p.grad is None or not p.grad.any() for p in params)


@pytest.mark.parametrize("preset", ["baseline", "baseline+parsing", "baseline+classifier"])
def test_criterion_03_disabled_branch_gets_no_gradient(preset, verdict):
    state = build_state(TrainConfig.test(ablation=preset), label_count=4)
    batch = synthetic_batch(8, 32, seed=11)
    cfg = state.config
    disabled = []
    if not cfg.parsing_enabled:
        disabled.append(("G3", list(state.generator.g3.parameters()), "gen"))
    if not cfg.classifier_enabled:
        disabled.append(("D2", list(state.critic.d2.parameters()), "critic"))
        disabled.append(("G2.info_head", list(state.generator.g2.info_head.parameters()), "gen"))
    before = [[p.detach().clone() for p in params] for _, params, _ in disabled]
    clean = True
    for _ in range(10):
        train_step_critic(state, batch)
        clean &= all(_grads_zero(params) for _, params, side in disabled if side == "critic")
        train_step_generator(state, batch)
        clean &= all(_grads_zero(params) for _, params, side in disabled if side == "gen")
    frozen = all(torch.equal(a, p) for snap, (_, params, _) in zip(before, disabled) for a, p in zip(snap, params))
    names = ", ".join(n for n, _, _ in disabled)
    verdict(3, clean and frozen, f"{preset}: {names} zero gradient for 10 steps={clean}, unchanged={frozen}")


# --- 4: overfit smoke ------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_04_overfit_smoke(tmp_path, verdict):
    start = time.perf_counter()
    write_fixture(tmp_path, n_color=8, n_gray=0, size=32, seed=3)
    manifest, _ = build_manifest(tmp_path / "images", FIXTURE_TAXONOMY, relative_to=tmp_path,
                                 parsing_dir=tmp_path / "parsing", test_fraction=0.0)
    cfg = TrainConfig.test(batch_size=8, epochs=500)
    data, _ = load_training_data(manifest, cfg)
    state = build_state(cfg, label_count=len(FIXTURE_TAXONOMY))
    backend = RandomProjectionBackend(0)
    before = evaluate(state.generator, manifest, "train", backend).psnr
    l_r = []
    for _ in range(500):
        train_step_critic(state, data)
        l_r.append(train_step_generator(state, data).l_r)
    after = evaluate(state.generator, manifest, "train", backend).psnr
    elapsed = time.perf_counter() - start
    ok = len(manifest) == 8 and min(l_r) < 0.5 * l_r[9] and after > before and elapsed < 900
    verdict(4, ok, f"L_r step10={l_r[9]:.3f} best={min(l_r):.3f} final={l_r[-1]:.3f}; "
                   f"PSNR {before:.3f} -> {after:.3f} dB; {elapsed:.0f}s")


# --- 5: full model beats the baseline on the fallback distance ----------------------------------

@pytest.mark.slow
def test_criterion_05_full_vs_baseline(verdict):
    palette = Palette.load()

    def as_batch(d):
        parsing = np.stack([parsing_target(p, palette) for p in d.parsing])
        return arrays_to_batch(d.images, d.labels, parsing, 4)

    train_set, test_set = make_dataset(256, 32, seed=100), make_dataset(64, 32, seed=200)
    data = as_batch(train_set)
    backend = RandomProjectionBackend(0)
    scores = {"full": [], "baseline": []}
    for seed in (0, 1, 2):
        for preset in scores:
            state = run_epochs(build_state(TrainConfig.test(ablation=preset, seed=seed, epochs=20, batch_size=16),
                                           label_count=4), data)
            preds = [colorize(state.generator.eval(), img) for img in test_set.images]
            scores[preset].append(evaluate_pairs(preds, list(test_set.images), backend).lpips)
    full, base = np.mean(scores["full"]), np.mean(scores["baseline"])
    verdict(5, full <= base, f"fallback distance over seeds 0-2: full {full:.4f} "
                             f"{np.round(scores['full'], 4).tolist()} vs baseline {base:.4f} "
                             f"{np.round(scores['baseline'], 4).tolist()}")


# --- 6: metric oracles ---------------------------------------------------------------------------

def test_criterion_06_metric_oracles(verdict):
    rng = np.random.default_rng(6)
    ssim_err = 0.0
    for _ in range(20):
        a = rng.uniform(size=(32, 32, 3))
        b = np.clip(a + rng.normal(0, rng.uniform(0.01, 0.3), size=a.shape), 0, 1)
        ssim_err = max(ssim_err, abs(ssim(a, b) - ssim_oracle(luminance(a), luminance(b))))
    zero = np.zeros((16, 16, 3))
    mse_001 = zero.copy()
    mse_001[..., 0] = np.sqrt(0.03)
    p_half, p_01 = psnr(zero, zero + 0.5), psnr(zero, mse_001)
    img = rng.uniform(size=(16, 16, 3))
    identity = (ssim(img, img) == 1.0 and RandomProjectionBackend(0).distance(img, img) == 0
                and psnr(img, img) == PSNR_CAP_DB)
    psnr_err = max(abs(p_half - PSNR_HALF_OFFSET), abs(p_01 - PSNR_MSE_001), abs(p_01 - 20.0))
    ok = ssim_err < 1e-4 and psnr_err < 1e-6 and round(p_half, 4) == 6.0206 and identity
    verdict(6, ok, f"SSIM max err {ssim_err:.1e} over 20 pairs; PSNR {p_half:.6f}/{p_01:.6f} dB "
                   f"(err {psnr_err:.1e}); identities exact={identity}")


# --- 7: colour space suite ------------------------------------------------------------------------

def test_criterion_07_color_space(verdict):
    rng = np.random.default_rng(7)
    rgb = rng.uniform(size=(1000, 3))
    lab = rgb_to_lab(rgb)
    rt = np.abs(lab_to_rgb(lab) - rgb).max()
    oracle = max(np.abs(np.array(lab_of_rgb(*px)) - lab[i]).max() for i, px in enumerate(rgb[:50]))
    grey = np.repeat(np.linspace(0, 1, 101)[:, None], 3, axis=1)
    achrom = np.abs(rgb_to_lab(grey)[:, 1:]).max()
    # fixtures: pure red and blue land in known HSV hue bins; achromatic pixels are excluded
    fixture = np.concatenate([np.tile([[1.0, 0, 0]], (30, 1)), np.tile([[0, 0, 1.0]], (10, 1)), grey[:20]])
    h = hue_histogram([fixture[None]], bin_count=12)
    expected = np.zeros(12)
    expected[0], expected[8] = 0.75, 0.25  # hue 0 and 240 degrees
    hist_err = np.abs(h.frequencies - expected).max()
    ok = rt < 1e-3 and achrom < 1e-3 and hist_err <= 0.01 and oracle < 1e-6 and h.sample_count == 40
    verdict(7, ok, f"round trip max err {rt:.1e}; achromatic |a|,|b| max {achrom:.1e}; "
                   f"hue histogram max err {hist_err:.3f}; scalar oracle err {oracle:.1e}")


# --- 8: label bootstrap ---------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_08_bootstrap(verdict):
    results = []
    for data_seed, trainer_seed in ((1, 0), (2, 1), (3, 2)):
        start = time.perf_counter()
        data = make_dataset(4000, 32, seed=data_seed)
        manual = set(select_manual_subset(data.labels, 0.01, seed=data_seed).tolist())
        recs = tuple(SampleRecord(f"s{i:05d}", f"s{i:05d}.png", int(data.labels[i]) if i in manual else None,
                                  "manual" if i in manual else "unknown") for i in range(len(data.labels)))
        index = {r.record_id: i for i, r in enumerate(recs)}
        out = bootstrap_labels(DatasetManifest(FIXTURE_TAXONOMY, recs), ResNetTrainer(seed=trainer_seed),
                               loader=lambda r: data.images[index[r.record_id]])
        pseudo = [r for r in out.records if r.label_source == "pseudo"]
        acc = np.mean([r.composite_label_id == data.labels[index[r.record_id]] for r in pseudo])
        results.append((len(manual), acc, time.perf_counter() - start))
    ok = all(acc >= 0.98 and t < 600 for _, acc, t in results)
    verdict(8, ok, "; ".join(f"{m} manual of 4000, pseudo-label accuracy {a:.4f} in {t:.0f}s"
                             for m, a, t in results))


# --- 9: determinism -------------------------------------------------------------------------------

def test_criterion_09_deterministic_logs(tmp_path, verdict):
    manifest, _ = build_manifest(FIXTURE / "images", FIXTURE_TAXONOMY, relative_to=tmp_path,
                                 parsing_dir=FIXTURE / "parsing", test_fraction=0.25)
    cfg = load_config(FIXTURE / "test_preset.cfg")
    logs = [train(cfg, manifest, tmp_path / f"run{i}").log_path.read_bytes() for i in range(2)]
    lines = logs[0].count(b"\n")
    verdict(9, logs[0] == logs[1] and lines > 0, f"two seeded runs, {lines} log lines each, identical={logs[0] == logs[1]}")


# --- 10: pipeline end to end ----------------------------------------------------------------------

def _cli(*args):
    return subprocess.run([sys.executable, "-m", "historynet.cli", *map(str, args)], capture_output=True, text=True)


def test_criterion_10_pipeline(tmp_path, verdict):
    from PIL import Image

    start = time.perf_counter()
    steps = {
        "dataset-build": _cli("dataset-build", "--images", FIXTURE / "images", "--out", tmp_path / "data",
                              "--taxonomy", FIXTURE / "taxonomy.tsv", "--parsing-dir", FIXTURE / "parsing",
                              "--test-fraction", 0.25),
        "train": _cli("train", "--manifest", tmp_path / "data" / "manifest.jsonl", "--out", tmp_path / "run",
                      "--config", FIXTURE / "test_preset.cfg"),
        "colorize": _cli("colorize", "--checkpoint", tmp_path / "run" / "checkpoint", "--out", tmp_path / "color",
                         FIXTURE / "images"),
        "evaluate": _cli("evaluate", "--checkpoint", tmp_path / "run" / "checkpoint",
                         "--manifest", tmp_path / "data" / "manifest.jsonl", "--out", tmp_path / "eval"),
    }
    codes = {k: v.returncode for k, v in steps.items()}
    worst_l, count = 0.0, 0
    for src in sorted((FIXTURE / "images").glob("*.png")):
        out = tmp_path / "color" / src.name
        if not out.exists():
            worst_l = float("inf")
            continue
        a = np.asarray(Image.open(src).convert("RGB"), dtype=np.float64) / 255
        b = np.asarray(Image.open(out).convert("RGB"), dtype=np.float64) / 255
        worst_l = max(worst_l, np.abs(rgb_to_lab(a)[..., 0] - rgb_to_lab(b)[..., 0]).max())
        count += 1
    elapsed = time.perf_counter() - start
    ok = all(c == 0 for c in codes.values()) and count > 0 and worst_l <= L_STEP and elapsed < 1800
    errors = "".join(v.stderr for v in steps.values() if v.returncode)
    verdict(10, ok, f"exit codes {codes}; L* drift max {worst_l:.3f} <= {L_STEP:.3f} over {count} images; "
                    f"{elapsed:.0f}s{'; ' + errors.strip() if errors else ''}")
