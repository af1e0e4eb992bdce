import json
import math

import numpy as np
import pytest
import torch

from scenerelight.metrics import (
    MetricReport,
    latent_distances,
    mse,
    psnr,
    psnr_from_mse,
    score_l2,
    ssim,
    summarize,
)
from scenerelight.relightnet import IdentityBaseline, RelightNet, VariantConfig
from scenerelight.trainer import evaluate_model


def test_mse_psnr():
    a = np.zeros((3, 8, 8))
    b = np.full((3, 8, 8), 0.5)
    assert mse(a, b) == 0.25
    assert psnr(a, b) == pytest.approx(10 * math.log10(4), abs=1e-12)  # 6.02 dB
    assert psnr(a, a) == math.inf
    assert psnr_from_mse(0.01) == pytest.approx(20.0)
    with pytest.raises(ValueError):
        mse(a, b[:2])


def test_ssim_matches_skimage():
    metrics = pytest.importorskip("skimage.metrics")
    rng = np.random.default_rng(0)
    for _ in range(5):
        a = rng.uniform(0, 1, (3, 40, 48))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        expected = metrics.structural_similarity(
            a, b, data_range=1.0, channel_axis=0, gaussian_weights=True, sigma=1.5, use_sample_covariance=False
        )
        assert ssim(a, b) == pytest.approx(expected, abs=1e-6)


def test_ssim_properties():
    rng = np.random.default_rng(1)
    a = rng.uniform(0, 1, (3, 32, 32))
    b = rng.uniform(0, 1, (3, 32, 32))
    assert ssim(a, a) == pytest.approx(1.0)
    assert ssim(a, b) == pytest.approx(ssim(b, a))
    assert ssim(a, b) < 0.2
    assert ssim(a[None], b[None]) == pytest.approx(ssim(a, b))


def test_score_closed_forms():
    i = np.zeros((3, 4, 4))
    g = np.ones((3, 4, 4))
    assert score_l2(i, g, i) == 1.0
    assert score_l2(i, g, g) == 0.0
    assert score_l2(i, g, np.full_like(g, 0.5)) == 0.5
    assert score_l2(g, g, i) is None


def test_latent_distances():
    codes = {"I": torch.zeros(4), "T": torch.ones(4), "G": torch.zeros(4), "G_hat": 2 * torch.ones(4)}
    d = latent_distances(codes)
    assert len(d) == 6
    assert d["I-G"] == 0.0 and d["I-T"] == 2.0 and d["T-G_hat"] == 2.0 and d["I-G_hat"] == 4.0


def test_summarize_psnr_from_mean_mse():
    rows = [{"mse": 0.01, "ssim": 0.5, "score_l2": 1.0}, {"mse": 0.03, "ssim": 0.7, "score_l2": None}]
    s = summarize(rows)
    assert s["psnr_db"] == pytest.approx(psnr_from_mse(0.02))
    assert s["score_l2"] == 1.0 and s["score_pairs"] == 1 and s["score_reciprocal"] == 1.0
    assert "lpips" not in s


def test_report_json_and_table():
    r = MetricReport("envmap_only", subsets={"Eval": {"pairs": 2, "psnr_db": math.inf, "mse": 0.0}})
    assert json.loads(r.to_json())["subsets"]["Eval"]["psnr_db"] == "inf"
    table = r.table()
    assert "lpips" not in table and "inf" in table


@pytest.fixture(scope="module")
def tiny_model():
    torch.manual_seed(0)
    return RelightNet(VariantConfig(variant="envmap_scene", image_size=64, base_channels=4))


def test_identity_baseline_scores_one(tiny_model, toy_index):
    report = evaluate_model(IdentityBaseline(tiny_model), toy_index, list(toy_index.scenes), 12, 0, 64)
    assert set(report.subsets) == {"Eval", "Eval_c_I=c_T", "Eval_d_I=d_T"}
    for stats in report.subsets.values():
        assert stats["pairs"] == 12
        assert abs(stats["score_l2"] - 1.0) < 1e-9
        assert stats["scene_distances"]["I-G_hat"] == 0.0


def test_evaluation_deterministic(tiny_model, toy_index):
    a = evaluate_model(tiny_model, toy_index, ["scene_0", "scene_1"], 6, 3, 64).to_json()
    b = evaluate_model(tiny_model, toy_index, ["scene_0", "scene_1"], 6, 3, 64).to_json()
    assert a == b
    report = json.loads(a)
    assert "latent_light_loss" in report["subsets"]["Eval"]
    assert report["reference"]["values"]["envmap_scene"]["psnr_db"] == 18.10
