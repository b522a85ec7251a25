"""Pre-training model: PFE, pyramid encoder, generative decoder, point head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import RunConfig
from .decoders import GDParams, generative_decode, init_gd_params
from .encoder import EncoderParams, StageConfig, encode, init_encoder_params
from .masking import (
    MaskPlan,
    block_mask_inputs,
    patch_mask_inputs,
    point_mask_inputs,
)
from .pillars import (
    PfeParams,
    PointCloud,
    TokenSet,
    init_pfe_params,
    pillar_feature_encode,
    voxelize,
)
from .reconstruction import (
    PredictionHead,
    TargetSet,
    build_targets,
    init_prediction_head,
    predict_points,
)
from .tensor import Tensor


@dataclass
class StepOutput:
    loss: Tensor
    masked_coords: np.ndarray
    target_level: int
    num_tokens: int
    predictions: Tensor | None = None
    targets: TargetSet | None = None
    visible_cloud: PointCloud | None = None


class PretrainModel:
    """Owns every parameter group and runs one masked-reconstruction pass."""

    def __init__(self, config: RunConfig, rng: np.random.Generator | None = None):
        self.config = config
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        point_dim = 5 + (1 if config.use_intensity else 0)
        self.pfe: PfeParams = init_pfe_params(rng, point_dim, config.pfe_channels)
        cfgs = [
            StageConfig(
                dim=config.stage_dims[i],
                layers=config.layers_per_stage,
                region_size=config.region_sizes[i],
                downsample=(i > 0),
            )
            for i in range(3)
        ]
        self.encoder: EncoderParams = init_encoder_params(
            rng, cfgs, in_dim=config.stage_dims[0], heads=config.heads, ffn_ratio=config.mlp_ratio
        )
        target_level = MaskPlan(config.mask.strategy, config.mask.ratio).target_level
        self.decoder: GDParams = init_gd_params(
            rng, config.stage_dims, target_level=target_level, width=config.stage_dims[0]
        )
        self.head: PredictionHead = init_prediction_head(
            rng, self.decoder.width, config.k_points
        )

    def named_parameters(self) -> dict[str, T.Tensor]:
        out: dict[str, T.Tensor] = {}
        for name, p in self.pfe.named_parameters("pfe"):
            out[name] = p
        for name, p in self.encoder.named_parameters("encoder"):
            out[name] = p
        for name, p in self.decoder.named_parameters("decoder"):
            out[name] = p
        for name, p in self.head.named_parameters("head"):
            out[name] = p
        return out

    def load_parameter_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        for name, arr in arrays.items():
            if name not in params:
                from .checkpoint import UnknownArrayError

                raise UnknownArrayError(f"checkpoint array {name!r} not present in the model")
            if params[name].data.shape != arr.shape:
                raise ValueError(
                    f"checkpoint array {name!r} has shape {arr.shape}, model expects {params[name].data.shape}"
                )
            params[name].data = arr.copy()
            params[name]._finite_ok = False

    def forward_step(
        self,
        cloud: PointCloud,
        mask_seed: int,
        target_seed: int,
        keep_outputs: bool = False,
    ) -> StepOutput | None:
        """Mask, encode the visible part, decode masked features, and compute
        the Chamfer loss. Returns None when nothing was masked (degenerate
        tiny scene)."""
        from .reconstruction import chamfer_loss

        cfg = self.config
        plan = MaskPlan(cfg.mask.strategy, cfg.mask.ratio, seed=mask_seed)
        points_per_token = None

        if plan.strategy == "point":
            result = point_mask_inputs(cloud, cfg.grid, plan)
            masked_coords = result.mask.masked
            if masked_coords.shape[0] == 0:
                return None
            vox = voxelize(result.visible, cfg.grid)
            if len(vox.occupied) == 0:
                return None
            visible_tokens = pillar_feature_encode(
                result.visible, vox, cfg.grid, self.pfe, cfg.use_intensity
            )
            points_per_token = [
                result.masked_points_per_pillar[tuple(c)] for c in masked_coords
            ]
            target_cloud = cloud
            visible_cloud = result.visible
        else:
            vox = voxelize(cloud, cfg.grid)
            if len(vox.occupied) == 0:
                return None
            tokens = pillar_feature_encode(cloud, vox, cfg.grid, self.pfe, cfg.use_intensity)
            mask_fn = block_mask_inputs if plan.strategy == "block" else patch_mask_inputs
            visible_tokens, mask = mask_fn(tokens, plan)
            masked_coords = mask.masked
            if masked_coords.shape[0] == 0 or len(visible_tokens) == 0:
                return None
            target_cloud = cloud
            visible_cloud = None
            if keep_outputs:
                factor = 4 if plan.strategy == "block" else 1
                ids = vox.pillar_ids[vox.kept] // factor
                vis_pts = ~mask.grid[ids[:, 1], ids[:, 0]]
                visible_cloud = PointCloud(cloud.points[vox.kept][vis_pts], None)

        enc = encode(visible_tokens, self.encoder)
        e_mask = generative_decode(enc, masked_coords, cfg.grid, self.decoder)
        preds = predict_points(e_mask, self.head)
        targets = build_targets(
            target_cloud,
            masked_coords,
            plan.target_level,
            cfg.grid,
            cfg.k_points,
            seed=target_seed,
            points_per_token=points_per_token,
        )
        loss = chamfer_loss(preds, targets)
        return StepOutput(
            loss=loss,
            masked_coords=masked_coords,
            target_level=plan.target_level,
            num_tokens=masked_coords.shape[0],
            predictions=preds if keep_outputs else None,
            targets=targets if keep_outputs else None,
            visible_cloud=visible_cloud if keep_outputs else None,
        )
