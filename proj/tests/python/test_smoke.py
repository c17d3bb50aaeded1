import math

import numpy as np
import pytest

import fome


def tone_grid(freq, channels=2, patches=4, patch_len=8, phase=0.0, rate=250.0):
    t = np.arange(patches * patch_len) / rate
    rows = [np.sin(2 * np.pi * freq * t + phase + 0.3 * c) for c in range(channels)]
    return np.stack(rows).reshape(channels, patches, patch_len)


def test_synthetic_quarter_rate_lattice():
    x = fome.generate_synthetic(1, [(0, 62.5, 1.0, 0.0)], duration_s=8 / 250.0)
    assert x.shape == (1, 8)
    np.testing.assert_allclose(x[0, :4], [0.0, 1.0, 0.0, -1.0], atol=1e-12)


def test_recording_and_grid_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    data = rng.standard_normal((3, 100)).astype(np.float32).astype(np.float64)
    fome.write_recording(tmp_path / "r.feeg", data, 500.0)
    back, rate, _ = fome.read_recording(tmp_path / "r.feeg")
    assert rate == 500.0
    np.testing.assert_array_equal(back, data)

    grid = tone_grid(10.0).astype(np.float32).astype(np.float64)
    fome.write_patch_grid(tmp_path / "g.fegp", grid, 250.0)
    g2, r2 = fome.read_patch_grid(tmp_path / "g.fegp")
    assert r2 == 250.0
    np.testing.assert_array_equal(g2, grid)


def test_nan_is_rejected(tmp_path):
    data = np.zeros((1, 4))
    data[0, 2] = np.nan
    with pytest.raises(fome.DataError):
        fome.write_recording(tmp_path / "bad.feeg", data, 250.0)


def test_preprocess_shapes():
    x = fome.generate_synthetic(2, [(0, 10.0, 1.0, 0.0), (1, 20.0, 1.0, 0.0)], noise_std=0.1,
                                duration_s=12.0, sample_rate_hz=500.0, seed=1)
    grid = fome.preprocess(x, 500.0)
    assert grid.shape == (2, 2, 1500)
    assert np.all(np.isfinite(grid))


def test_psd_and_band_powers():
    rate = 250.0
    n = np.arange(1500)
    p = fome.psd(np.sin(2 * np.pi * 25.0 * n / rate), rate)
    assert p.shape == (751,)
    assert int(np.argmax(p)) == 150
    bands = fome.band_powers(np.sin(2 * np.pi * 10.0 * n / rate).reshape(1, 1, 1500), rate)
    assert bands.shape == (1, 1, 8)
    assert int(np.argmax(bands[0, 0])) == fome.band_names().index("alpha")


def test_model_shapes_and_masking():
    cfg = fome.ModelConfig("tiny")
    cfg.n_classes = 3
    model = fome.Model(cfg)
    grid = tone_grid(10.0, channels=3, patches=5)
    assert model.encode(grid).shape == (15, 8)
    assert model.reconstruct(grid).shape == (15, 8)
    probs = model.classify(grid)
    assert probs.shape == (1, 3)
    assert math.isclose(probs.sum(), 1.0, rel_tol=1e-12)
    a = model.encode(grid, mask_slots=list(range(15)))
    b = model.encode(tone_grid(30.0, channels=3, patches=5), mask_slots=list(range(15)))
    np.testing.assert_array_equal(a, b)
    with pytest.raises(fome.IndexError):
        model.encode(grid, mask_slots=[15])


def test_channel_permutation_equivariance():
    model = fome.Model(fome.ModelConfig("tiny"))
    grid = tone_grid(10.0, channels=4, patches=3) + 0.1 * np.random.default_rng(3).standard_normal((4, 3, 8))
    order = [2, 0, 3, 1]
    base = model.encode(grid).reshape(4, 3, 8)
    perm = model.encode(grid[order]).reshape(4, 3, 8)
    np.testing.assert_array_equal(perm, base[order])


def test_checkpoint_round_trip(tmp_path):
    model = fome.Model(fome.ModelConfig("tiny"))
    model.save(tmp_path / "m.fckp")
    loaded = fome.Model.load(tmp_path / "m.fckp")
    for name, value in model.parameters().items():
        np.testing.assert_array_equal(loaded.parameters()[name], value)


def test_schedule_and_masks():
    assert fome.lr_at(0) == 2e-6
    assert fome.lr_at(10960) == 5e-5
    assert fome.lr_at(1096000) == pytest.approx(5e-9)
    slots = fome.mask_plan(4, 15, 0.4, seed=5)
    assert len(slots) == 24 and slots == sorted(set(slots))


def test_pretrain_reduces_loss():
    rng = np.random.default_rng(2)
    grids = [tone_grid(10.0, channels=2, patches=6, phase=rng.uniform(0, 6.28)) for _ in range(8)]
    model = fome.Model(fome.ModelConfig("tiny"))
    losses = fome.pretrain(model, grids, steps=150, batch_size=4, grad_accum=1, lr_peak=1e-2, lr_init=1e-4,
                           lr_final=1e-4, patches_per_sample=6)
    assert len(losses) == 150
    assert np.mean(losses[-10:]) < np.mean(losses[:10])


def test_finetune_and_metrics():
    cfg = fome.ModelConfig("tiny")
    cfg.n_classes = 2
    model = fome.Model(cfg)
    grids = [tone_grid(1.0 if i % 2 == 0 else 30.0, phase=0.2 * i) for i in range(20)]
    labels = [i % 2 for i in range(20)]
    report = fome.finetune_classify(model, grids, labels, mode="full", steps=60, batch_size=4, grad_accum=1,
                                    lr_peak=1e-2)
    assert report["task"] == "classification"
    assert 0.0 <= report["accuracy"] <= 1.0
    m = fome.classification_metrics([1, 1, 0, 0, 1, 0, 0, 0, 0, 0], [1, 1, 1, 1, 0, 0, 0, 0, 0, 0], 2)
    assert m["positive_class"]["precision"] == pytest.approx(2 / 3)
    assert m["positive_class"]["recall"] == pytest.approx(0.5)
    assert fome.regression_metrics([1.0, 2.0], [1.0, 4.0])["mse"] == pytest.approx(2.0)
