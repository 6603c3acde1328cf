import dataclasses
import json

import numpy as np
import pytest

from unhig.errors import ConfigInvalid
from unhig.nukesformer import NukesFormer, count_params
from unhig.training import (
    LOSS_COLUMNS,
    VARIANTS,
    TrainConfig,
    ablate,
    build_dataset,
    input_hash,
    median_psnr,
    read_losses,
    rng_streams,
    train,
)

TINY = TrainConfig(n_hsi=2, n_rgb=2, n_val=1, size=16, base_channels=4, stage_blocks=(1, 1, 1),
                   disc_width=2, head_width=8, n_patches=8, n_negatives=3, steps=2)


def test_config_validation(tmp_path):
    with pytest.raises(ConfigInvalid):
        TrainConfig.from_dict({"stepz": 3})
    with pytest.raises(ConfigInvalid):
        TrainConfig(size=18)
    with pytest.raises(ConfigInvalid):
        TrainConfig(steps=0)
    with pytest.raises(ConfigInvalid):
        TrainConfig().variant("no-such")
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"steps": 7, "stage_blocks": [1, 2, 4, 2, 1]}))
    cfg = TrainConfig.from_json(path)
    assert cfg.steps == 7 and cfg.stage_blocks == (1, 2, 4, 2, 1)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.size, cfg.bands, cfg.base_channels, cfg.stage_blocks, cfg.steps) == (32, 31, 8, (1, 1, 2, 1, 1), 500)
    assert (cfg.lr, cfg.beta1, cfg.beta2) == (2e-4, 0.9, 0.999)
    assert cfg.weights.as_tuple() == (1.0, 0.5, 1.0, 0.25, 0.25)


def test_variants():
    cfg = TrainConfig()
    assert cfg.variant("no-nukes").uniform_kan and not cfg.variant("no-gmsa").use_gabor
    assert cfg.variant("no-dcpm-g").w_geo == 0.0 and cfg.variant("no-dcpm-s").w_spec == 0.0
    rng = np.random.default_rng(0)
    full = count_params(NukesFormer(cfg.model_config(), rng))
    kan = count_params(NukesFormer(cfg.variant("no-nukes").model_config(), rng))
    assert kan < full


def test_dataset_is_unpaired():
    cfg = TINY
    data = build_dataset(cfg, rng_streams(0)["scene"])
    assert len(data.hsi) == 2 and len(data.rgb) == 2 and len(data.val_hsi) == 1
    assert data.rgb[0].shape == (3, 16, 16)
    # the RGB set never shows a scene that is in the HSI set
    from unhig.hsicube import HsiCube, build_srf, degrade
    srf = build_srf()
    hsi_rgbs = [degrade(HsiCube(h), srf).data for h in data.hsi]
    assert not any(np.allclose(r, h) for r in data.rgb for h in hsi_rgbs)


def test_one_step_smoke(tmp_path):
    man = train(dataclasses.replace(TINY, steps=1), tmp_path)
    losses = read_losses(man.loss_csv)
    assert list(losses) == list(LOSS_COLUMNS)
    assert losses["step"].tolist() == [1.0]
    assert all(np.isfinite(v).all() for v in losses.values())
    assert (tmp_path / "ckpt" / "manifest.json").is_file()
    assert man.params_infer < man.params_train


def test_same_seed_same_losses(tmp_path):
    a = train(TINY, tmp_path / "a")
    b = train(TINY, tmp_path / "b")
    assert open(a.loss_csv, "rb").read() == open(b.loss_csv, "rb").read()
    c = train(dataclasses.replace(TINY, seed=1), tmp_path / "c")
    assert open(a.loss_csv, "rb").read() != open(c.loss_csv, "rb").read()


def test_ablate_schema_and_cache(tmp_path):
    rows = ablate(dataclasses.replace(TINY, steps=1), tmp_path, variants=VARIANTS, seeds=[0])
    assert [r["variant"] for r in rows] == list(VARIANTS)
    assert len({tuple(r) for r in rows}) == 1
    mtime = (tmp_path / "base_seed0" / "losses.csv").stat().st_mtime_ns
    ablate(dataclasses.replace(TINY, steps=1), tmp_path, variants=["base"], seeds=[0])
    assert (tmp_path / "base_seed0" / "losses.csv").stat().st_mtime_ns == mtime
    assert set(median_psnr(rows)) == set(VARIANTS)


def test_input_hash_tracks_config():
    assert input_hash(TINY) == input_hash(dataclasses.replace(TINY))
    assert input_hash(TINY) != input_hash(dataclasses.replace(TINY, lr=1e-3))
