"""Optimizer, schedule, config, checkpoint container, and the train loop."""

import json
import os

import numpy as np
import pytest

import pillarmae.tensor as T
from pillarmae.checkpoint import (
    CheckpointVersionError,
    NotACheckpointError,
    TruncatedCheckpointError,
    UnknownArrayError,
    load_arrays,
    save_arrays,
)
from pillarmae.config import (
    OptimizerConfig,
    RunConfig,
    config_from_dict,
    config_to_dict,
    load_config,
    save_config,
)
from pillarmae.model import PretrainModel
from pillarmae.optim import AdamW, one_cycle_lr
from pillarmae.training import (
    load_training_checkpoint,
    save_training_checkpoint,
    train,
)
from pillarmae.verification import tiny_config


# --- one-cycle schedule -------------------------------------------------------


def test_one_cycle_endpoints_and_peak():
    lr_max = 3e-3
    total = 200
    warm = int(np.floor(0.1 * (total - 1)))
    assert one_cycle_lr(0, total, lr_max) == pytest.approx(lr_max / 25, rel=1e-12)
    assert one_cycle_lr(warm, total, lr_max) == pytest.approx(lr_max, rel=1e-12)
    assert one_cycle_lr(total - 1, total, lr_max) == pytest.approx(lr_max / 100, rel=1e-12)


def test_one_cycle_monotone_up_then_down():
    total = 137
    lrs = [one_cycle_lr(s, total, 1e-2) for s in range(total)]
    peak = int(np.argmax(lrs))
    assert all(lrs[i] <= lrs[i + 1] + 1e-15 for i in range(peak))
    assert all(lrs[i] >= lrs[i + 1] - 1e-15 for i in range(peak, total - 1))
    assert max(lrs) == pytest.approx(1e-2)


def test_one_cycle_bounds_checked():
    with pytest.raises(ValueError):
        one_cycle_lr(5, 5, 1e-3)
    with pytest.raises(ValueError):
        one_cycle_lr(0, 0, 1e-3)


# --- AdamW ---------------------------------------------------------------------


def test_adamw_first_step_matches_hand_computation():
    p = T.param(np.array([1.0, -2.0]))
    opt = AdamW({"p": p}, lr=0.1, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0)
    p.grad = np.array([0.5, -1.0])
    opt.step()
    # bias-corrected first step: update = g / (|g| + eps) elementwise
    expected = np.array([1.0, -2.0]) - 0.1 * np.array([0.5, -1.0]) / (np.array([0.5, 1.0]) + 1e-8)
    np.testing.assert_allclose(p.data, expected, rtol=1e-12)


def test_adamw_weight_decay_decoupled():
    p = T.param(np.array([2.0]))
    opt = AdamW({"p": p}, lr=0.1, weight_decay=0.5)
    p.grad = np.array([0.0])
    opt.step()
    # zero gradient: only the decay term moves the parameter
    np.testing.assert_allclose(p.data, [2.0 - 0.1 * 0.5 * 2.0], rtol=1e-12)


def test_adamw_state_round_trip():
    rng = np.random.default_rng(0)
    p = T.param(rng.standard_normal(4))
    opt = AdamW({"p": p}, lr=0.01)
    for _ in range(3):
        p.grad = rng.standard_normal(4)
        opt.step()
    state = {k: v.copy() for k, v in opt.state_arrays().items()}
    opt2 = AdamW({"p": T.param(p.data.copy())}, lr=0.01)
    opt2.load_state_arrays(state)
    assert opt2.t == opt.t
    np.testing.assert_array_equal(opt2.m["p"], opt.m["p"])
    np.testing.assert_array_equal(opt2.v["p"], opt.v["p"])


# --- config --------------------------------------------------------------------


def test_config_round_trip_lossless(tmp_path):
    cfg = tiny_config("block", seed=3)
    path = tmp_path / "cfg.json"
    save_config(cfg, str(path))
    back = load_config(str(path))
    assert back == cfg


def test_config_rejects_unknown_keys():
    d = config_to_dict(RunConfig())
    d["lerning_rate"] = 1.0
    with pytest.raises(ValueError, match="lerning_rate"):
        config_from_dict(d)
    d2 = config_to_dict(RunConfig())
    d2["optimizer"]["lr_mx"] = 1.0
    with pytest.raises(ValueError, match="lr_mx"):
        config_from_dict(d2)


def test_config_validation():
    with pytest.raises(ValueError, match="stage-1"):
        RunConfig(pfe_channels=(64, 64))
    with pytest.raises(ValueError, match="heads"):
        RunConfig(stage_dims=(130, 256, 256), pfe_channels=(64, 130))


# --- checkpoint container -------------------------------------------------------


def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(1)
    arrays = {
        "a.weight": rng.standard_normal((3, 4)),
        "b.bias": rng.standard_normal(7),
        "scalar": np.array([13.0]),
        "cube": rng.standard_normal((2, 3, 4)),
    }
    path = tmp_path / "ck.bin"
    save_arrays(str(path), arrays)
    back = load_arrays(str(path))
    assert set(back) == set(arrays)
    for k in arrays:
        assert np.array_equal(back[k], arrays[k])
        assert back[k].dtype == np.float64


def test_checkpoint_magic_and_version(tmp_path):
    path = tmp_path / "ck.bin"
    save_arrays(str(path), {"x": np.zeros(2)})
    raw = bytearray(path.read_bytes())
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTMAGIC" + raw[8:])
    with pytest.raises(NotACheckpointError, match="not a checkpoint"):
        load_arrays(str(bad))
    versioned = bytearray(raw)
    versioned[6] = 9
    vb = tmp_path / "v9.bin"
    vb.write_bytes(bytes(versioned))
    with pytest.raises(CheckpointVersionError, match="version"):
        load_arrays(str(vb))


def test_checkpoint_truncation_detected(tmp_path):
    path = tmp_path / "ck.bin"
    save_arrays(str(path), {"x": np.arange(16.0)})
    raw = path.read_bytes()
    cut = tmp_path / "cut.bin"
    cut.write_bytes(raw[: len(raw) - 9])
    with pytest.raises(TruncatedCheckpointError):
        load_arrays(str(cut))


def test_model_rejects_unknown_checkpoint_array():
    cfg = tiny_config("patch")
    model = PretrainModel(cfg)
    with pytest.raises(UnknownArrayError, match="nonsense"):
        model.load_parameter_arrays({"nonsense": np.zeros(3)})


def test_training_checkpoint_restores_parameters_bit_exact(tmp_path):
    cfg = tiny_config("patch", seed=5)
    out = train(cfg, str(tmp_path / "run"), max_steps=2)
    state = load_training_checkpoint(out, cfg)
    arrays = load_arrays(out)
    for name, p in state.model.named_parameters().items():
        assert np.array_equal(arrays[f"param.{name}"], p.data)


# --- train loop ------------------------------------------------------------------


def read_metrics(path):
    with open(path) as f:
        lines = f.read().strip().split("\n")
    assert lines[0] == "step,loss,lr,wall_ms"
    return lines[1:]


def drop_wall(lines):
    return [",".join(row.split(",")[:3]) for row in lines]


def test_train_zero_lr_losses_match_initial_model(tmp_path):
    # zero lr means no parameter motion: every recorded loss must equal what
    # the untrained model produces on that step's scene and mask stream
    from pillarmae.tensor import reset_tape
    from pillarmae.training import derived_seed, scene_for_step, _MASK, _TARGET

    cfg = tiny_config("patch", seed=1)
    cfg = config_from_dict({**config_to_dict(cfg), "optimizer": {"lr_max": 0.0}})
    train(cfg, str(tmp_path), max_steps=2)
    rows = read_metrics(str(tmp_path / "metrics.csv"))
    assert all(float(r.split(",")[2]) == 0.0 for r in rows)

    model = PretrainModel(cfg)
    for row in rows:
        step = int(row.split(",")[0])
        cloud = scene_for_step(cfg, 0, step, None)
        out = model.forward_step(
            cloud,
            mask_seed=derived_seed(cfg.seed, _MASK, 0, step),
            target_seed=derived_seed(cfg.seed, _TARGET, 0, step),
        )
        reset_tape()
        assert float(row.split(",")[1]) == float(out.loss.data)


def test_train_zero_lr_parameters_frozen(tmp_path):
    cfg = tiny_config("patch", seed=1)
    cfg = config_from_dict({**config_to_dict(cfg), "optimizer": {"lr_max": 0.0}})
    out = train(cfg, str(tmp_path), max_steps=2)
    state = load_training_checkpoint(out, cfg)
    fresh = PretrainModel(cfg).named_parameters()
    for name, p in state.model.named_parameters().items():
        assert np.array_equal(p.data, fresh[name].data), name


def test_train_deterministic_metrics(tmp_path):
    cfg = tiny_config("block", seed=9)
    train(cfg, str(tmp_path / "a"), max_steps=3)
    train(cfg, str(tmp_path / "b"), max_steps=3)
    a = drop_wall(read_metrics(str(tmp_path / "a" / "metrics.csv")))
    b = drop_wall(read_metrics(str(tmp_path / "b" / "metrics.csv")))
    assert a == b


def test_train_resume_matches_unbroken_run(tmp_path):
    cfg = tiny_config("patch", seed=2)
    cfg = config_from_dict({
        **config_to_dict(cfg),
        "epochs": 4,
        "data": {**config_to_dict(cfg)["data"], "scenes_per_epoch": 3},
    })
    # unbroken: 12 steps
    train(cfg, str(tmp_path / "full"))
    full = drop_wall(read_metrics(str(tmp_path / "full" / "metrics.csv")))
    # broken: stop after 6, resume from the epoch-2 checkpoint
    train(cfg, str(tmp_path / "part"), max_steps=6)
    resume_ckpt = str(tmp_path / "part" / "epoch_0002.bin")
    assert os.path.exists(resume_ckpt)
    train(cfg, str(tmp_path / "part"), resume_from=resume_ckpt)
    part = drop_wall(read_metrics(str(tmp_path / "part" / "metrics.csv")))
    assert part == full


def test_train_csv_dataset_source(tmp_path):
    from pillarmae.pointio import write_csv
    from pillarmae.scenes import SceneSpec, generate_scene

    data_dir = tmp_path / "clouds"
    data_dir.mkdir()
    for i in range(3):
        write_csv(str(data_dir / f"c{i}.csv"), generate_scene(SceneSpec(
            rings=2, ring_spacing=0.8, points_per_ring=120, vehicles=(0, 0),
            pedestrians=(0, 0), noise_sigma=0.01, extent=2.0, seed=i,
        )))
    base = config_to_dict(tiny_config("patch", seed=0))
    base["data"] = {"source": "csv_dir", "csv_dir": str(data_dir), "scenes_per_epoch": 3,
                    "scene": base["data"]["scene"]}
    cfg = config_from_dict(base)
    out = train(cfg, str(tmp_path / "run"), max_steps=5)
    assert os.path.exists(out)
    # one epoch of three scenes at batch one: exactly three steps
    assert len(read_metrics(str(tmp_path / "run" / "metrics.csv"))) == 3


def test_export_reconstruction_files(tmp_path):
    from pillarmae.training import export_reconstruction
    from pillarmae.pointio import read_point_cloud

    cfg = tiny_config("patch", seed=4)
    ckpt = train(cfg, str(tmp_path / "run"), max_steps=2)
    paths = export_reconstruction(ckpt, cfg, scene_seed=11, out_dir=str(tmp_path / "viz"))
    assert set(paths) == {"visible", "predicted", "ground_truth"}
    for name in paths:
        assert os.path.exists(tmp_path / "viz" / f"{name}.ply")
        assert os.path.exists(tmp_path / "viz" / f"{name}.csv")
    predicted = read_point_cloud(str(tmp_path / "viz" / "predicted.csv"))
    assert len(predicted) > 0


def test_export_ground_truth_points_belong_to_masked_cells(tmp_path):
    from pillarmae.pointio import read_point_cloud
    from pillarmae.training import export_reconstruction

    cfg = tiny_config("patch", seed=4)
    ckpt = train(cfg, str(tmp_path / "run"), max_steps=1)
    paths = export_reconstruction(ckpt, cfg, scene_seed=11, out_dir=str(tmp_path / "viz"))
    gt = read_point_cloud(str(tmp_path / "viz" / "ground_truth.csv"))
    visible = read_point_cloud(str(tmp_path / "viz" / "visible.csv"))
    from pillarmae.scenes import SceneSpec, generate_scene
    from dataclasses import asdict

    scene = generate_scene(SceneSpec(**{**asdict(cfg.data.scene), "seed": 11}))
    cloud_rows = {tuple(np.round(p, 6)) for p in scene.points}
    for p in gt.points:
        assert tuple(np.round(p, 6)) in cloud_rows
    # visible and ground truth pillars must not overlap for patch masking
    from pillarmae.pillars import voxelize

    gt_cells = {tuple(c) for c in voxelize(gt, cfg.grid).occupied}
    vis_cells = {tuple(c) for c in voxelize(visible, cfg.grid).occupied}
    assert not (gt_cells & vis_cells)
