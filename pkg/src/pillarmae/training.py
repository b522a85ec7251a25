"""Training driver: deterministic scene stream, gradient accumulation,
one-cycle AdamW, CSV metrics, and bit-exact checkpoint resume."""

from __future__ import annotations

import glob
import os
import time
from dataclasses import dataclass

import numpy as np

from . import pointio
from .checkpoint import load_arrays, save_arrays
from .config import RunConfig, config_to_dict, load_config
from .masking import MaskPlan
from .model import PretrainModel
from .optim import AdamW, one_cycle_lr
from .pillars import PointCloud
from .reconstruction import denormalize_points
from .scenes import SceneSpec, augment, generate_scene
from .tensor import backward, reset_tape, scale

METRICS_HEADER = "step,loss,lr,wall_ms"


def derived_seed(master: int, *tags: int) -> int:
    """Stable per-role seed derived from the master seed."""
    ss = np.random.SeedSequence([int(master)] + [int(t) for t in tags])
    return int(ss.generate_state(1)[0])


# role tags for derived seeds
_SCENE, _AUGMENT, _MASK, _TARGET = 1, 2, 3, 4


def _load_csv_dataset(path: str) -> list[str]:
    files = sorted(glob.glob(os.path.join(path, "*.csv")))
    if not files:
        raise ValueError(f"csv_dir dataset: no .csv files under {path}")
    return files


def scene_for_step(config: RunConfig, epoch: int, index: int, csv_files: list[str] | None) -> PointCloud:
    if config.data.source == "synthetic":
        seed = derived_seed(config.seed, _SCENE, epoch, index)
        spec = SceneSpec(**{**_scene_dict(config.data.scene), "seed": seed})
        cloud = generate_scene(spec)
    else:
        cloud = pointio.read_csv(csv_files[index % len(csv_files)])
    if config.augment:
        cloud = augment(cloud, derived_seed(config.seed, _AUGMENT, epoch, index))
    return cloud


def _scene_dict(spec: SceneSpec) -> dict:
    from dataclasses import asdict

    return asdict(spec)


@dataclass
class TrainState:
    model: PretrainModel
    optimizer: AdamW
    step: int = 0
    epoch: int = 0


def make_optimizer(config: RunConfig, model: PretrainModel) -> AdamW:
    return AdamW(
        model.named_parameters(),
        lr=config.optimizer.lr_max,
        betas=(config.optimizer.beta1, config.optimizer.beta2),
        weight_decay=config.optimizer.weight_decay,
    )


def save_training_checkpoint(path: str, state: TrainState) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name, p in state.model.named_parameters().items():
        arrays[f"param.{name}"] = p.data
    arrays.update(state.optimizer.state_arrays())
    arrays["train.step"] = np.array([float(state.step)])
    arrays["train.epoch"] = np.array([float(state.epoch)])
    arrays["train.seed"] = np.array([float(state.model.config.seed)])
    save_arrays(path, arrays)


def load_training_checkpoint(path: str, config: RunConfig) -> TrainState:
    arrays = load_arrays(path)
    model = PretrainModel(config)
    params = {k[len("param."):]: v for k, v in arrays.items() if k.startswith("param.")}
    model.load_parameter_arrays(params)
    optimizer = make_optimizer(config, model)
    optimizer.load_state_arrays({k: v for k, v in arrays.items() if k.startswith("opt.")})
    return TrainState(
        model=model,
        optimizer=optimizer,
        step=int(arrays["train.step"][0]),
        epoch=int(arrays["train.epoch"][0]),
    )


class NanLossError(RuntimeError):
    pass


def train(
    config: RunConfig,
    out_dir: str,
    resume_from: str | None = None,
    max_steps: int | None = None,
    log=None,
) -> str:
    """Run (or resume) pre-training; returns the final checkpoint path.

    One optimizer step consumes ``batch_size`` scenes with loss gradients
    averaged across the batch. Metrics are appended per step as
    ``step,loss,lr,wall_ms``; checkpoints land at epoch boundaries.
    """
    os.makedirs(out_dir, exist_ok=True)
    steps_per_epoch = max(1, config.data.scenes_per_epoch // config.batch_size)
    # the schedule horizon is the configured run; max_steps only stops early
    total_steps = config.epochs * steps_per_epoch
    stop_at = total_steps if max_steps is None else min(total_steps, max_steps)

    csv_files = _load_csv_dataset(config.data.csv_dir) if config.data.source == "csv_dir" else None

    if resume_from is not None:
        state = load_training_checkpoint(resume_from, config)
    else:
        model = PretrainModel(config)
        state = TrainState(model=model, optimizer=make_optimizer(config, model))

    metrics_path = os.path.join(out_dir, "metrics.csv")
    mode = "a" if (resume_from is not None and os.path.exists(metrics_path)) else "w"
    metrics = open(metrics_path, mode, encoding="utf-8")
    if mode == "w":
        metrics.write(METRICS_HEADER + "\n")

    final_path = os.path.join(out_dir, "final.bin")
    try:
        while state.step < stop_at:
            t0 = time.perf_counter()
            epoch = state.step // steps_per_epoch
            batch_losses = []
            state.optimizer.zero_grad()
            for b in range(config.batch_size):
                index = (state.step % steps_per_epoch) * config.batch_size + b
                cloud = scene_for_step(config, epoch, index, csv_files)
                out = state.model.forward_step(
                    cloud,
                    mask_seed=derived_seed(config.seed, _MASK, epoch, index),
                    target_seed=derived_seed(config.seed, _TARGET, epoch, index),
                )
                if out is None:
                    reset_tape()
                    continue
                batch_losses.append(float(out.loss.data))
                backward(scale(out.loss, 1.0 / config.batch_size))
            if not batch_losses:
                raise RuntimeError("train: every scene in the batch produced no masked tokens")
            loss_value = float(np.mean(batch_losses))
            lr = one_cycle_lr(
                state.step,
                total_steps,
                config.optimizer.lr_max,
                config.schedule.warmup_frac,
                config.schedule.start_div,
                config.schedule.final_div,
            )
            if not np.isfinite(loss_value):
                raise NanLossError(f"train: non-finite loss at step {state.step} (last lr {lr:.3e})")
            state.optimizer.step(lr=lr)
            wall_ms = (time.perf_counter() - t0) * 1e3
            metrics.write(f"{state.step},{loss_value:.17g},{lr:.17g},{wall_ms:.3f}\n")
            metrics.flush()
            state.step += 1
            if state.step % steps_per_epoch == 0:
                state.epoch = state.step // steps_per_epoch
                save_training_checkpoint(os.path.join(out_dir, f"epoch_{state.epoch:04d}.bin"), state)
            if log is not None and state.step % 10 == 0:
                log(f"step {state.step}/{total_steps} loss {loss_value:.4f} lr {lr:.2e}")
        state.epoch = state.step // steps_per_epoch
        save_training_checkpoint(final_path, state)
    finally:
        metrics.close()
    return final_path


def export_reconstruction(ckpt_path: str, config: RunConfig, scene_seed: int, out_dir: str) -> dict[str, str]:
    """Write visible / predicted / ground-truth-masked point files (PLY and
    CSV each) for one synthetic scene."""
    os.makedirs(out_dir, exist_ok=True)
    state = load_training_checkpoint(ckpt_path, config)
    spec = SceneSpec(**{**_scene_dict(config.data.scene), "seed": scene_seed})
    cloud = generate_scene(spec)
    out = state.model.forward_step(
        cloud,
        mask_seed=derived_seed(config.seed, _MASK, 0, scene_seed),
        target_seed=derived_seed(config.seed, _TARGET, 0, scene_seed),
        keep_outputs=True,
    )
    reset_tape()
    if out is None:
        raise ValueError("export_reconstruction: scene produced no masked tokens")

    pred_local = out.predictions.data
    pred_world = denormalize_points(pred_local, out.masked_coords, out.target_level, config.grid)
    valid = out.targets.valid_counts
    pred_pts = np.concatenate([pred_world[i, : valid[i]] for i in range(pred_world.shape[0])], axis=0)

    gt_local = out.targets.points
    gt_world = denormalize_points(gt_local, out.masked_coords, out.target_level, config.grid)
    gt_pts = np.concatenate([gt_world[i, : valid[i]] for i in range(gt_world.shape[0])], axis=0)

    paths = {}
    for name, pts in (("visible", out.visible_cloud.points), ("predicted", pred_pts), ("ground_truth", gt_pts)):
        pc = PointCloud(pts)
        ply = os.path.join(out_dir, f"{name}.ply")
        csv = os.path.join(out_dir, f"{name}.csv")
        pointio.write_ply(ply, pc)
        pointio.write_csv(csv, pc)
        paths[name] = ply
    return paths
