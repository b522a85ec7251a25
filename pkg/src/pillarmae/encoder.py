"""Three-stage sparse pyramid encoder producing multi-scale token sets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .pillars import TokenSet
from .sparse_transformer import (
    AttentionParams,
    SparseConvParams,
    init_attention_params,
    init_sparse_conv_params,
    region_shift,
    sparse_conv_downsample,
    sparse_regional_attention,
    submanifold_conv,
    window_partition,
)
from .tensor import Tensor


@dataclass(frozen=True)
class StageConfig:
    dim: int
    layers: int
    region_size: int
    downsample: bool

    def __post_init__(self):
        if self.region_size % 2 != 0:
            raise ValueError("StageConfig: region_size must be even (region shift halves it)")


def default_stage_configs(
    dims=(128, 256, 256), layers: int = 2, region_sizes=(8, 4, 4)
) -> list[StageConfig]:
    return [
        StageConfig(dim=dims[i], layers=layers, region_size=region_sizes[i], downsample=(i > 0))
        for i in range(3)
    ]


@dataclass
class StageParams:
    cfg: StageConfig
    downsample: SparseConvParams | None
    blocks: list[tuple[AttentionParams, AttentionParams]]
    fuse: SparseConvParams  # shortcut: concat(stage input, transformer out) -> dim

    def named_parameters(self, prefix: str):
        if self.downsample is not None:
            yield from self.downsample.named_parameters(f"{prefix}.down")
        for li, (a, b) in enumerate(self.blocks):
            yield from a.named_parameters(f"{prefix}.layer{li}.sra0")
            yield from b.named_parameters(f"{prefix}.layer{li}.sra1")
        yield from self.fuse.named_parameters(f"{prefix}.fuse")


@dataclass
class EncoderParams:
    stages: list[StageParams]

    def named_parameters(self, prefix: str = "encoder"):
        for si, st in enumerate(self.stages):
            yield from st.named_parameters(f"{prefix}.stage{si}")


@dataclass
class EncoderOutput:
    """Token sets at levels 0, 1, 2 (E1, E2, E3)."""

    stages: list[TokenSet]

    def __iter__(self):
        return iter(self.stages)

    def __getitem__(self, i: int) -> TokenSet:
        return self.stages[i]


def init_encoder_params(
    rng: np.random.Generator,
    cfgs: list[StageConfig],
    in_dim: int,
    heads: int = 8,
    ffn_ratio: int = 2,
) -> EncoderParams:
    stages = []
    prev = in_dim
    for cfg in cfgs:
        down = init_sparse_conv_params(rng, prev, cfg.dim) if cfg.downsample else None
        if not cfg.downsample and prev != cfg.dim:
            raise ValueError(f"stage without downsample needs input dim {cfg.dim}, got {prev}")
        blocks = [
            (
                init_attention_params(rng, cfg.dim, heads, ffn_ratio),
                init_attention_params(rng, cfg.dim, heads, ffn_ratio),
            )
            for _ in range(cfg.layers)
        ]
        fuse = init_sparse_conv_params(rng, 2 * cfg.dim, cfg.dim)
        stages.append(StageParams(cfg=cfg, downsample=down, blocks=blocks, fuse=fuse))
        prev = cfg.dim
    return EncoderParams(stages)


def encode_stage(tokens: TokenSet, params: StageParams) -> TokenSet:
    """Optional stride-2 downsample, L layers of unshifted+shifted regional
    attention, then shortcut concat fused by a submanifold conv."""
    cfg = params.cfg
    if params.downsample is not None:
        tokens = sparse_conv_downsample(tokens, params.downsample)
    elif tokens.dim != cfg.dim:
        raise ValueError(f"encode_stage: token dim {tokens.dim} does not match stage dim {cfg.dim}")
    if len(tokens) == 0:
        return tokens

    coords = tokens.coords
    plain = window_partition(coords, cfg.region_size)
    shifted = window_partition(region_shift(coords, cfg.region_size), cfg.region_size)
    x = tokens.features
    for sra0, sra1 in params.blocks:
        x = sparse_regional_attention(x, plain, sra0)
        x = sparse_regional_attention(x, shifted, sra1)

    merged = T.concat([tokens.features, x], axis=1)
    fused = submanifold_conv(TokenSet(merged, coords, tokens.level, tokens.grid), params.fuse)
    return fused


def encode(tokens: TokenSet, params: EncoderParams) -> EncoderOutput:
    """Run the three stages; returns (E1, E2, E3) at levels 0, 1, 2."""
    if tokens.level != 0:
        raise ValueError("encode: input tokens must be at level 0")
    outs = []
    cur = tokens
    for st in params.stages:
        cur = encode_stage(cur, st)
        outs.append(cur)
    return EncoderOutput(outs)
