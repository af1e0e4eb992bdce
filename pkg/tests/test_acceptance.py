"""Acceptance criteria, one test per criterion.

The terminal summary prints a PASS/FAIL line for each (see conftest.py).
"""

import math
import time

import numpy as np
import pytest
import torch
from torch import nn

from scenerelight.checkpoint import load_checkpoint, save_checkpoint
from scenerelight.data import TEMPERATURES, all_illuminations, enumerate_pairs, parse_manifest
from scenerelight.envmap import (
    compact_to_rgb,
    direction_profile,
    generate_envmap_hsl,
    generate_envmap_rgb,
    kelvin_to_rgb,
)
from scenerelight.objectives import cosine_loss, envmap_loss, hsl_envmap_loss, temperature_loss
from scenerelight.relightnet import (
    IdentityBaseline,
    LatentCode,
    RelightNet,
    VariantConfig,
    swap_latent,
    weighted_pool,
)
from scenerelight.trainer import evaluate_model, illumination_fit, preset, read_log, train

from conftest import synthetic_index
from oracles import brute_force_pairs, gradient_relative_error, pool_oracle

# pinned from a 400-step pilot (inference-mode L_c 0.024, L_d 0.053, score 0.71)
OVERFIT_STEPS = 600
OVERFIT_MODEL = {"image_size": 128, "base_channels": 8}


def test_01_pairing_oracle():
    for n in range(2, 6):
        index = synthetic_index(n)
        for restricted in (False, True):
            assert list(enumerate_pairs(index, restricted=restricted)) == brute_force_pairs(index, restricted)
    t0 = time.perf_counter()
    assert 12120**2 == 146_894_400 and 1880**2 == 3_534_400
    assert len(enumerate_pairs(synthetic_index(303))) == 146_894_400
    assert len(enumerate_pairs(synthetic_index(47))) == 3_534_400
    assert time.perf_counter() - t0 < 1.0


def test_02_loss_closed_forms():
    t0 = time.perf_counter()
    assert cosine_loss(123.0, 123.0).item() == 0.0
    assert cosine_loss(10.0, 190.0).item() == pytest.approx(2.0, abs=1e-12)
    rng = np.random.default_rng(0)
    pred = torch.as_tensor(rng.uniform(0, 360, 100_000))
    assert abs(cosine_loss(torch.zeros_like(pred), pred).item() - 1.0) < 0.02
    assert temperature_loss(2500.0, 4500.0).item() == pytest.approx(1.0, abs=1e-12)
    expected = 512 * math.log(2) ** 2
    got = envmap_loss(torch.zeros(512, dtype=torch.float64), torch.ones(512, dtype=torch.float64)).item()
    assert abs(got - expected) / expected < 1e-6
    assert time.perf_counter() - t0 < 10


def test_03_gradient_checks():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        e_truth = torch.as_tensor(rng.uniform(0, 2, 32))
        worst = max(worst, gradient_relative_error(lambda x: envmap_loss(x, e_truth),
                                                   torch.as_tensor(rng.uniform(0.01, 2, 32))))
        d_truth = torch.as_tensor(rng.uniform(0, 360, 4))
        worst = max(worst, gradient_relative_error(lambda x: cosine_loss(d_truth, x),
                                                   torch.as_tensor(rng.uniform(0, 360, 4))))
        c_truth = torch.as_tensor(rng.uniform(2500, 6500, 4))
        worst = max(worst, gradient_relative_error(lambda x: temperature_loss(c_truth, x),
                                                   torch.as_tensor(rng.uniform(2000, 7000, 4))))
        h_truth = torch.as_tensor(np.concatenate([rng.uniform(0, 1, 2), rng.uniform(0, 2, 512)]))
        h_point = torch.as_tensor(np.concatenate([rng.uniform(0, 1, 2), rng.uniform(0.01, 2, 512)]))
        coords = [0, 1] + list(rng.choice(np.arange(2, 514), 24, replace=False))
        worst = max(worst, gradient_relative_error(lambda x: hsl_envmap_loss(x, h_truth), h_point, coords=coords))
    print(f"worst relative gradient error {worst:.2e}")
    assert worst < 1e-3
    assert time.perf_counter() - t0 < 30


def test_04_shape_contracts():
    t0 = time.perf_counter()
    torch.manual_seed(0)
    x = torch.rand(1, 3, 256, 256)
    channels = {}
    for variant in ("envmap_only", "envmap_scene", "illum_predicter"):
        net = RelightNet(VariantConfig(variant=variant)).eval()
        assert not any(isinstance(m, (nn.ConvTranspose2d, nn.ConvTranspose1d, nn.ConvTranspose3d))
                       for m in net.decoder.modules())
        with torch.no_grad():
            code = net.encode(x)
            out = net(x, x)
        assert code.full.shape[-2:] == (16, 16)
        assert 0 <= out.relit.min() and out.relit.max() <= 1
        channels[variant] = code.full.shape[1]
        del net
    assert weighted_pool(torch.rand(1, channels["envmap_only"], 16, 16), "envmap_only").shape == (1, 3, 16, 32)
    assert weighted_pool(torch.rand(1, 1028, 16, 16), "envmap_scene").shape == (1, 514)
    assert time.perf_counter() - t0 < 60
    assert channels["envmap_scene"] == 2052 and channels["illum_predicter"] == 520
    # the stated 2028 is incompatible with 512 weights + 3x512 values; this implementation uses 2048
    assert channels["envmap_only"] == 2028, f"envmap_only latent has {channels['envmap_only']} channels, criterion states 2028"


def test_05_weighted_pool_oracle():
    g = torch.Generator().manual_seed(0)
    for trial in range(100):
        variant, c = ("envmap_only", 2048) if trial % 2 == 0 else ("envmap_scene", 1028)
        light = torch.rand(1, c, 4, 4, generator=g, dtype=torch.float64)
        got = weighted_pool(light, variant).numpy()
        np.testing.assert_allclose(got, pool_oracle(light, variant), rtol=1e-6)


@pytest.mark.parametrize("variant", ["illum_predicter", "envmap_scene"])
def test_06_swap_semantics(variant):
    torch.manual_seed(0)
    net = RelightNet(VariantConfig(variant=variant, image_size=64, base_channels=8)).eval()
    g = torch.Generator().manual_seed(1)
    x_i, x_t = torch.rand(2, 3, 64, 64, generator=g), torch.rand(2, 3, 64, 64, generator=g)
    with torch.no_grad():
        ci, ct = net.encode(x_i), net.encode(x_t)
        base = net.decode(swap_latent(ci, ct))
        scene_noise = LatentCode(ct.scene + torch.randn_like(ct.scene), ct.light, ct.skips)
        assert torch.equal(net.decode(swap_latent(ci, scene_noise)), base)
        skip_noise = LatentCode(ct.scene, ct.light, [s + torch.randn_like(s) for s in ct.skips])
        assert torch.equal(net.decode(swap_latent(ci, skip_noise)), base)
        light_noise = LatentCode(ct.scene, ct.light + torch.randn_like(ct.light), ct.skips)
        assert not torch.equal(net.decode(swap_latent(ci, light_noise)), base)


def test_07_envmap_generator():
    for illum in all_illuminations():
        assert np.array_equal(generate_envmap_rgb(illum), generate_envmap_rgb(illum))
        assert np.array_equal(generate_envmap_hsl(illum), generate_envmap_hsl(illum))
        assert np.abs(compact_to_rgb(generate_envmap_hsl(illum)) - generate_envmap_rgb(illum)).max() < 1e-6
    for k in range(8):
        dev = np.abs(np.roll(direction_profile(45 * k), 4) - direction_profile(45 * (k + 1))).max()
        assert dev < 1e-9
    ratios = [kelvin_to_rgb(c)[2] / kelvin_to_rgb(c)[0] for c in TEMPERATURES]
    assert all(np.diff(ratios) > 0)


def test_08_identity_baseline(toy128_dir):
    index = parse_manifest(toy128_dir / "manifest.csv")
    torch.manual_seed(0)
    model = IdentityBaseline(RelightNet(VariantConfig(variant="envmap_scene", image_size=128, base_channels=4)))
    for scenes in (list(index.scenes), ["scene_2"]):
        report = evaluate_model(model, index, scenes, 32, 0, 128, train_scenes=["scene_0", "scene_1"])
        assert len(report.subsets) == 4
        for name, stats in report.subsets.items():
            assert stats["score_pairs"] > 0, name
            assert abs(stats["score_l2"] - 1.0) <= 1e-9, name


@pytest.mark.slow
def test_09_desk_scale_overfit(toy128_dir, tmp_path):
    index = parse_manifest(toy128_dir / "manifest.csv")
    cfg = preset("illum_predicter", OVERFIT_MODEL, output_dir=str(tmp_path / "overfit"), learning_rate=1e-3,
                 batch_size=8, steps=OVERFIT_STEPS, pair_budget=8, image_every=0, checkpoint_every=0, seed=0)
    t0 = time.perf_counter()
    result = train(cfg, index)
    elapsed = time.perf_counter() - t0
    assert len(set(result.train_keys)) == 8
    assert {index[i].scene_id for i, _ in result.train_keys} | {index[t].scene_id for _, t in result.train_keys} <= set(index.scenes)
    last = read_log(result.run_dir / "metrics.jsonl")[-1]["losses"]
    fit = illumination_fit(result.model, index, result.train_keys)
    print(f"overfit {OVERFIT_STEPS} steps in {elapsed:.0f}s; last batch {last}; inference {fit}")
    assert fit["temperature"] < 0.05
    assert fit["direction"] < 0.2
    assert fit["score_l2"] < 1.0
    assert elapsed < 30 * 60


def test_10_checkpoint_round_trip(toy_index, tmp_path):
    cfg = preset("envmap_only", {"image_size": 64, "base_channels": 4}, output_dir=str(tmp_path / "run"),
                 steps=3, batch_size=2, image_every=0, checkpoint_every=0)
    result = train(cfg, toy_index)
    before = evaluate_model(result.model, toy_index, list(toy_index.scenes), 6, 0, 64).to_json()
    path = save_checkpoint(tmp_path / "copy.pt", result.model, step=3)
    model, _, _ = load_checkpoint(path, "envmap_only")
    after = evaluate_model(model, toy_index, list(toy_index.scenes), 6, 0, 64).to_json()
    assert before.encode() == after.encode()


def test_11_gan_plumbing(toy_index, tmp_path):
    cfg = preset("envmap_scene", {"image_size": 64, "base_channels": 8}, output_dir=str(tmp_path / "gan"),
                 steps=10, batch_size=4, adversarial=True, image_every=0, checkpoint_every=0)
    result = train(cfg, toy_index)
    records = read_log(result.run_dir / "metrics.jsonl")
    assert len(records) == 10
    for r in records:
        assert math.isfinite(r["losses"]["d_loss"]) and math.isfinite(r["losses"]["adversarial"])
    print(f"first-step d_loss {records[0]['losses']['d_loss']:.4f} (2 ln 2 = {2 * math.log(2):.4f})")
    assert 1.0 <= records[0]["losses"]["d_loss"] <= 1.8
