"""Mask-region feature decoders.

The generative decoder scatters the visible multi-scale tokens to dense
maps, adapts every scale to the target resolution, fuses the concatenation
with a 3x3 convolution (the area expansion), and gathers the fused features
at the masked coordinates. No learnable mask tokens exist anywhere in it.

The baseline decoder fuses the same way but with a 1x1 convolution (no
expansion), then runs windowed transformer blocks over visible tokens plus
shared learnable mask embeddings.

The fusion+gather of the generative path is computed only at the masked
coordinates' 3x3 neighborhoods; this is algebraically identical to the
dense conv-then-gather and is checked against that dense reference in the
test suite.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import EncoderOutput
from .pillars import GridSpec, TokenSet, flat_indices, scatter_to_dense
from .sparse_transformer import (
    AttentionParams,
    init_attention_params,
    sparse_regional_attention,
    window_partition,
)
from .tensor import Tensor

TAPS = [(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)]


def padded_extents(grid: GridSpec, level: int) -> tuple[int, int]:
    """Extents padded so stride-2/4 resampling lands exactly on every level:
    4 * level-2 extents at level 0, halved per level."""
    w2, h2 = grid.extents_at(2)
    f = 2 ** (2 - level)
    return w2 * f, h2 * f


@dataclass
class AdapterParams:
    """One per-scale resampler: conv when the scale is finer than the target,
    transposed conv when coarser, 1x1 conv when equal."""

    kind: str          # "conv" | "tconv"
    kernel: Tensor     # conv: (C_out, C_in, k, k); tconv: (C_in, C_out, k, k)
    bias: Tensor
    stride: int
    padding: int

    def named_parameters(self, prefix: str):
        yield f"{prefix}.kernel", self.kernel
        yield f"{prefix}.bias", self.bias

    def apply(self, dense: Tensor) -> Tensor:
        if self.kind == "conv":
            out = T.conv2d(dense, self.kernel, stride=self.stride, padding=self.padding)
        else:
            out = T.conv_transpose2d(dense, self.kernel, stride=self.stride, padding=self.padding)
        return T.add_channel_bias(out, self.bias)


def _init_adapter(rng: np.random.Generator, level: int, target_level: int, c_in: int, c_out: int) -> AdapterParams:
    if level == target_level:
        k = T.uniform_init(rng, (c_out, c_in, 1, 1), c_in)
        return AdapterParams("conv", k, T.zeros_param((c_out,)), stride=1, padding=0)
    if level > target_level:  # coarser than target: upsample
        s = 2 ** (level - target_level)
        k = T.uniform_init(rng, (c_in, c_out, 2 * s, 2 * s), c_in * 4)
        return AdapterParams("tconv", k, T.zeros_param((c_out,)), stride=s, padding=s // 2)
    s = 2 ** (target_level - level)  # finer than target: downsample
    k = T.uniform_init(rng, (c_out, c_in, 2 * s, 2 * s), c_in * 4 * s * s)
    return AdapterParams("conv", k, T.zeros_param((c_out,)), stride=s, padding=s // 2)


@dataclass
class GDParams:
    """Generative decoder: three scale adapters, a 3x3 fusion conv stored as
    nine taps, and the target level set by the masking strategy."""

    adapters: list[AdapterParams]
    fusion_taps: list[Tensor]   # nine (3 * width, width) taps
    fusion_bias: Tensor
    target_level: int
    width: int

    def named_parameters(self, prefix: str = "decoder"):
        for i, a in enumerate(self.adapters):
            yield from a.named_parameters(f"{prefix}.adapter{i}")
        for i, t in enumerate(self.fusion_taps):
            yield f"{prefix}.fusion.tap{i}", t
        yield f"{prefix}.fusion.bias", self.fusion_bias

    def fusion_dense_kernel(self) -> np.ndarray:
        c_cat = self.fusion_taps[0].data.shape[0]
        k = np.zeros((self.width, c_cat, 3, 3))
        for (dx, dy), t in zip(TAPS, self.fusion_taps):
            k[:, :, dy + 1, dx + 1] = t.data.T
        return k


def init_gd_params(
    rng: np.random.Generator,
    stage_dims: tuple[int, int, int],
    target_level: int,
    width: int = 128,
) -> GDParams:
    adapters = [
        _init_adapter(rng, level, target_level, stage_dims[level], width) for level in range(3)
    ]
    c_cat = 3 * width
    fan = c_cat * 9
    taps = [T.uniform_init(rng, (c_cat, width), fan) for _ in TAPS]
    return GDParams(adapters, taps, T.zeros_param((width,)), target_level, width)


def _adapted_concat_rows(enc: EncoderOutput, grid: GridSpec, adapters: list[AdapterParams], target_level: int) -> tuple[Tensor, tuple[int, int]]:
    """Scatter each scale, adapt to the target resolution, concat channels,
    and expose the map as (H * W, C_cat) rows."""
    maps = []
    for level, (tokens, adapter) in enumerate(zip(enc, adapters)):
        ext = padded_extents(grid, level)
        dense = scatter_to_dense(tokens, extents=ext)
        maps.append(adapter.apply(dense))
    cat = T.concat(maps, axis=0)
    c, h, w = cat.data.shape
    rows = T.transpose2d(T.reshape(cat, (c, h * w)))
    return rows, (w, h)


def generative_decode(enc: EncoderOutput, masked_coords: np.ndarray, grid: GridSpec, params: GDParams) -> Tensor:
    """Features of the masked cells after multi-scale fusion and expansion."""
    masked_coords = np.asarray(masked_coords, dtype=np.int64).reshape(-1, 2)
    wt, ht = grid.extents_at(params.target_level)
    flat_indices(masked_coords, (wt, ht))  # bounds check against real extents
    rows, (w, h) = _adapted_concat_rows(enc, grid, params.adapters, params.target_level)
    t = masked_coords.shape[0]

    acc = None
    for (dx, dy), tap in zip(TAPS, params.fusion_taps):
        nx = masked_coords[:, 0] + dx
        ny = masked_coords[:, 1] + dy
        ok = (nx >= 0) & (nx < w) & (ny >= 0) & (ny < h)
        if not ok.any():
            continue
        gathered = T.gather_rows(rows, (ny[ok] * w + nx[ok]))
        part = T.scatter_rows_add(T.matmul(gathered, tap), np.flatnonzero(ok), t)
        acc = part if acc is None else T.add(acc, part)
    if acc is None:
        acc = T.constant(np.zeros((t, params.width)))
    ones = T.constant(np.ones((t, 1)))
    bias = T.matmul(ones, T.reshape(params.fusion_bias, (1, params.width)))
    return T.add(acc, bias)


@dataclass
class BaselineParams:
    """Transformer decoder baseline: 1x1 fusion, shared mask embedding, and
    flat windowed transformer blocks over visible plus masked tokens."""

    adapters: list[AdapterParams]
    fusion_w: Tensor            # (3 * width, width), the 1x1 conv
    fusion_bias: Tensor
    mask_embedding: Tensor      # (width,)
    blocks: list[AttentionParams]
    target_level: int
    width: int
    region_size: int

    def named_parameters(self, prefix: str = "baseline"):
        for i, a in enumerate(self.adapters):
            yield from a.named_parameters(f"{prefix}.adapter{i}")
        yield f"{prefix}.fusion.w", self.fusion_w
        yield f"{prefix}.fusion.bias", self.fusion_bias
        yield f"{prefix}.mask_embedding", self.mask_embedding
        for i, b in enumerate(self.blocks):
            yield from b.named_parameters(f"{prefix}.block{i}")


def init_baseline_params(
    rng: np.random.Generator,
    stage_dims: tuple[int, int, int],
    target_level: int,
    width: int = 128,
    num_blocks: int = 1,
    heads: int = 8,
    region_size: int = 8,
) -> BaselineParams:
    adapters = [
        _init_adapter(rng, level, target_level, stage_dims[level], width) for level in range(3)
    ]
    c_cat = 3 * width
    return BaselineParams(
        adapters=adapters,
        fusion_w=T.uniform_init(rng, (c_cat, width), c_cat),
        fusion_bias=T.zeros_param((width,)),
        mask_embedding=T.uniform_init(rng, (width,), width),
        blocks=[init_attention_params(rng, width, heads) for _ in range(num_blocks)],
        target_level=target_level,
        width=width,
        region_size=region_size,
    )


def baseline_transformer_decode(
    enc: EncoderOutput,
    visible_coords: np.ndarray,
    masked_coords: np.ndarray,
    grid: GridSpec,
    params: BaselineParams,
) -> Tensor:
    """Masked-token features after N windowed blocks over the union of
    visible tokens and mask embeddings; with N = 0 every masked output is
    the shared embedding."""
    visible_coords = np.asarray(visible_coords, dtype=np.int64).reshape(-1, 2)
    masked_coords = np.asarray(masked_coords, dtype=np.int64).reshape(-1, 2)
    both = {tuple(c) for c in visible_coords} & {tuple(c) for c in masked_coords}
    if both:
        raise ValueError(f"baseline_transformer_decode: visible and masked overlap at {sorted(both)[0]}")
    wt, ht = grid.extents_at(params.target_level)
    flat_indices(masked_coords, (wt, ht))
    flat_indices(visible_coords, (wt, ht))

    rows, (w, h) = _adapted_concat_rows(enc, grid, params.adapters, params.target_level)
    v, t = visible_coords.shape[0], masked_coords.shape[0]

    vis_rows = T.gather_rows(rows, visible_coords[:, 1] * w + visible_coords[:, 0])
    vis_feats = T.linear(vis_rows, params.fusion_w, params.fusion_bias)
    ones = T.constant(np.ones((t, 1)))
    mask_rows = T.matmul(ones, T.reshape(params.mask_embedding, (1, params.width)))
    x = T.concat([vis_feats, mask_rows], axis=0) if v else mask_rows

    coords = np.concatenate([visible_coords, masked_coords], axis=0)
    # absolute positions normalized to [-1, 1] over the target extents
    denom = np.maximum(np.array([wt, ht], dtype=np.float64) - 1.0, 1.0)
    positions = coords / denom * 2.0 - 1.0
    assignment = window_partition(coords, params.region_size)
    for blk in params.blocks:
        x = sparse_regional_attention(x, assignment, blk, pe_positions=positions)
    return T.gather_rows(x, np.arange(v, v + t))


# ---------------------------------------------------------------------------
# decoder latency benchmark
# ---------------------------------------------------------------------------


@dataclass
class BenchRow:
    decoder: str
    tokens: int
    median_ms: float
    p90_ms: float


# ordering is a large-scene claim; tiny smoke scenes only have to complete
ASSERT_MIN_TOKENS = 1024


def synthetic_multiscale(rng: np.random.Generator, grid: GridSpec, num_tokens: int, stage_dims) -> tuple[EncoderOutput, np.ndarray]:
    """Random occupied cells and features at the three pyramid levels."""
    w0, h0 = grid.extents_at(0)
    if num_tokens > w0 * h0:
        raise ValueError(f"synthetic_multiscale: {num_tokens} tokens exceed {w0 * h0} cells")
    flat = rng.choice(w0 * h0, size=num_tokens, replace=False)
    coords0 = np.stack([flat % w0, flat // w0], axis=1)
    sets = []
    coords = coords0
    for level in range(3):
        if level > 0:
            coords = np.unique(coords // 2, axis=0)
        feats = rng.standard_normal((coords.shape[0], stage_dims[level]))
        sets.append(TokenSet(feats, coords, level, grid))
    return EncoderOutput(sets), coords0


def bench_decoders(
    token_counts: list[int],
    repetitions: int,
    seed: int = 0,
    width: int = 128,
    stage_dims: tuple[int, int, int] = (128, 256, 256),
    mask_ratio: float = 0.75,
    occupancy: float = 0.5,
    region_size: int = 8,
    assert_ordering: bool = True,
) -> list[BenchRow]:
    """Median wall-clock of one decode for both decoders at matched widths.

    Scenes are synthetic grids at the given occupancy with patch-level
    masking. When ``assert_ordering`` is set and the largest scene has at
    least ASSERT_MIN_TOKENS tokens, the generative decoder must be strictly
    faster there.
    """
    if repetitions < 1:
        raise ValueError("bench_decoders: need >= 1 repetition")
    rows: list[BenchRow] = []
    gen_med = base_med = None
    largest = 0
    for n in sorted(token_counts):
        largest = n
        side = int(np.ceil(np.sqrt(n / occupancy)))
        side = max(side, 8)
        grid = GridSpec(0.0, side * 0.32, 0.0, side * 0.32, -2.0, 4.0, 0.32, 0.32)
        rng = np.random.default_rng(seed)
        enc, coords0 = synthetic_multiscale(rng, grid, n, stage_dims)
        perm = rng.permutation(n)
        t = int(np.floor(mask_ratio * n))
        masked = coords0[perm[:t]]
        visible = coords0[perm[t:]]
        gd = init_gd_params(rng, stage_dims, target_level=0, width=width)
        base = init_baseline_params(
            rng, stage_dims, target_level=0, width=width, num_blocks=1, region_size=region_size
        )

        def timed(fn) -> tuple[float, float]:
            samples = []
            for _ in range(repetitions):
                t0 = time.perf_counter()
                with T.no_grad():
                    fn()
                samples.append((time.perf_counter() - t0) * 1e3)
            return float(np.median(samples)), float(np.percentile(samples, 90))

        gen_med, gen_p90 = timed(lambda: generative_decode(enc, masked, grid, gd))
        base_med, base_p90 = timed(
            lambda: baseline_transformer_decode(enc, visible, masked, grid, base)
        )
        rows.append(BenchRow("generative", n, gen_med, gen_p90))
        rows.append(BenchRow("baseline", n, base_med, base_p90))
    if assert_ordering and largest >= ASSERT_MIN_TOKENS and not (gen_med < base_med):
        raise AssertionError(
            f"bench_decoders: generative median {gen_med:.2f} ms not below baseline {base_med:.2f} ms"
        )
    return rows


def bench_report_csv(rows: list[BenchRow]) -> str:
    lines = ["decoder,tokens,median_ms,p90_ms"]
    for r in rows:
        lines.append(f"{r.decoder},{r.tokens},{r.median_ms:.3f},{r.p90_ms:.3f}")
    return "\n".join(lines) + "\n"
