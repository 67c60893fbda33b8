import json

import numpy as np
import pytest

from historynet.evaluation import (
    PSNR_CAP_DB, PUBLISHED_COMPARISON, PUBLISHED_ABLATION, BackendUnavailableError, LPIPSBackend, MetricReport,
    RandomProjectionBackend, evaluate_pairs, luminance, perceptual_distance, psnr, ssim,
)
from oracles import PSNR_HALF_OFFSET, PSNR_MSE_001, ssim_oracle


@pytest.fixture
def images():
    rng = np.random.default_rng(0)
    return [rng.uniform(size=(24, 24, 3)) for _ in range(4)]


def test_psnr_closed_forms():
    a = np.zeros((8, 8, 3))
    assert psnr(a, a + 0.5) == pytest.approx(PSNR_HALF_OFFSET, abs=1e-6)
    assert PSNR_HALF_OFFSET == pytest.approx(6.0206, abs=1e-4)
    b = a.copy()
    b[..., 0] = np.sqrt(0.03)  # MSE 0.01
    assert psnr(a, b) == pytest.approx(PSNR_MSE_001, abs=1e-6) and PSNR_MSE_001 == pytest.approx(20.0)
    assert psnr(a, a) == PSNR_CAP_DB
    with pytest.raises(ValueError):
        psnr(a, a[:4])


def test_psnr_translation_consistent(images):
    a, b = images[0] * 0.5, images[1] * 0.5
    assert psnr(a + 0.3, b + 0.3) == pytest.approx(psnr(a, b), abs=1e-9)


def test_ssim_matches_reference_on_20_pairs():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a = rng.uniform(size=(32, 32, 3))
        b = np.clip(a + rng.normal(0, rng.uniform(0.01, 0.3), size=a.shape), 0, 1)
        assert abs(ssim(a, b) - ssim_oracle(luminance(a), luminance(b))) < 1e-4


def test_ssim_identity_symmetry_and_inverse():
    rng = np.random.default_rng(2)
    a, b = rng.uniform(size=(20, 20)), rng.uniform(size=(20, 20))
    assert ssim(a, a) == 1.0
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-12
    checker = (np.indices((32, 32)).sum(0) // 4 % 2).astype(float)
    value = ssim(checker, 1 - checker)
    assert value < 0.5
    assert value == pytest.approx(ssim_oracle(checker, 1 - checker), abs=1e-4)
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_fallback_distance_properties(images):
    backend = RandomProjectionBackend(seed=0)
    a, b = images[0], images[1]
    assert backend.distance(a, a) == 0
    assert abs(backend.distance(a, b) - backend.distance(b, a)) < 1e-9
    assert backend.distance(a, b) >= 0
    rng = np.random.default_rng(3)
    for img in images:
        noise = rng.normal(size=img.shape)
        d = [backend.distance(img, np.clip(img + s * noise, 0, 1)) for s in (0.05, 0.1, 0.2)]
        assert d[0] < d[1] < d[2]
    assert RandomProjectionBackend(seed=0).distance(a, b) == backend.distance(a, b)
    assert perceptual_distance(a, a) == 0


def test_lpips_backend_reports_fallback():
    try:
        import lpips  # noqa: F401
    except ImportError:
        with pytest.raises(BackendUnavailableError, match="fallback"):
            LPIPSBackend()
    else:
        pytest.skip("lpips installed")


def test_report_aggregates_and_table(images):
    report = evaluate_pairs(images, images[::-1])
    assert report.sample_count == 4
    assert report.lpips == pytest.approx(np.mean(report.per_image["lpips"]))
    assert report.psnr == pytest.approx(np.mean(report.per_image["psnr"]))
    assert report.ssim == pytest.approx(np.mean(report.per_image["ssim"]))
    lines = report.to_table(PUBLISHED_COMPARISON).splitlines()
    assert lines[0].split()[1:] == ["LPIPS↓", "PSNR↑", "SSIM↑"]
    assert len(lines) == 2 + len(PUBLISHED_COMPARISON) + 1
    data = json.loads(report.to_json())
    assert data["psnr"] == report.psnr and data["per_image"]["ssim"] == report.per_image["ssim"]


def test_ground_truth_against_itself(images):
    report = evaluate_pairs(images, images)
    assert report.lpips == 0 and report.psnr == PSNR_CAP_DB and report.ssim == 1.0


def test_empty_report_rejected():
    with pytest.raises(ValueError):
        MetricReport.from_values([], [], [])


def test_reference_constants():
    assert PUBLISHED_COMPARISON["HistoryNet"] == (0.101, 30.638, 0.962)
    assert [v[0] for v in PUBLISHED_ABLATION.values()] == [0.123, 0.121, 0.119, 0.107]
