"""Sparse windowed attention and sparse 3x3 convolutions over pillar tokens.

One encoder layer applies regional attention on the unshifted window
partition, then again on the partition of coordinates offset by half the
region size, which grows the receptive field without densifying anything.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .pillars import TokenSet
from .tensor import Tensor

TAPS = [(di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1)]


@dataclass
class WindowAssignment:
    """Token to window mapping: ids, in-window offsets, and index groups."""

    window_ids: np.ndarray            # (M, 2)
    offsets: np.ndarray               # (M, 2), 0 <= offset < region_size
    groups: dict[tuple[int, int], np.ndarray]
    region_size: int


def window_partition(coords: np.ndarray, region_size: int) -> WindowAssignment:
    """Partition token coords into non-overlapping square windows."""
    if region_size < 1:
        raise ValueError("window_partition: region_size must be >= 1")
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    wids = coords // region_size
    offs = coords % region_size
    groups: dict[tuple[int, int], list[int]] = {}
    for i, wid in enumerate(map(tuple, wids)):
        groups.setdefault((int(wid[0]), int(wid[1])), []).append(i)
    ordered = {k: np.asarray(groups[k], dtype=np.int64) for k in sorted(groups)}
    return WindowAssignment(wids, offs, ordered, region_size)


def region_shift(coords: np.ndarray, region_size: int) -> np.ndarray:
    """Coords offset by half the region size, for the second partition only."""
    if region_size % 2 != 0:
        raise ValueError(f"region_shift: region_size must be even, got {region_size}")
    return np.asarray(coords, dtype=np.int64) + region_size // 2


@dataclass
class AttentionParams:
    """One regional attention block: projections, offset-MLP positional
    embedding, pre-norm layer norms, and the inner feed-forward."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    pe_w1: Tensor
    pe_b1: Tensor
    pe_w2: Tensor
    pe_b2: Tensor
    ln1_g: Tensor
    ln1_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    ff_w1: Tensor
    ff_b1: Tensor
    ff_w2: Tensor
    ff_b2: Tensor
    heads: int

    def __post_init__(self):
        d = self.wq.data.shape[0]
        if d % self.heads != 0:
            raise ValueError(f"AttentionParams: dim {d} not divisible by {self.heads} heads")

    @property
    def dim(self) -> int:
        return self.wq.data.shape[0]

    def named_parameters(self, prefix: str):
        for name in ("wq", "wk", "wv", "wo", "pe_w1", "pe_b1", "pe_w2", "pe_b2",
                     "ln1_g", "ln1_b", "ln2_g", "ln2_b", "ff_w1", "ff_b1", "ff_w2", "ff_b2"):
            yield f"{prefix}.{name}", getattr(self, name)


def init_attention_params(rng: np.random.Generator, dim: int, heads: int, ffn_ratio: int = 2) -> AttentionParams:
    inner = ffn_ratio * dim
    return AttentionParams(
        wq=T.uniform_init(rng, (dim, dim), dim),
        wk=T.uniform_init(rng, (dim, dim), dim),
        wv=T.uniform_init(rng, (dim, dim), dim),
        wo=T.uniform_init(rng, (dim, dim), dim),
        pe_w1=T.uniform_init(rng, (2, dim), 2),
        pe_b1=T.zeros_param((dim,)),
        pe_w2=T.uniform_init(rng, (dim, dim), dim),
        pe_b2=T.zeros_param((dim,)),
        ln1_g=T.ones_param((dim,)),
        ln1_b=T.zeros_param((dim,)),
        ln2_g=T.ones_param((dim,)),
        ln2_b=T.zeros_param((dim,)),
        ff_w1=T.uniform_init(rng, (dim, inner), dim),
        ff_b1=T.zeros_param((inner,)),
        ff_w2=T.uniform_init(rng, (inner, dim), inner),
        ff_b2=T.zeros_param((dim,)),
        heads=heads,
    )


def zero_attention_params(dim: int, heads: int, ffn_ratio: int = 2) -> AttentionParams:
    """All projections and biases zero, layer-norm gains one; for tests."""
    inner = ffn_ratio * dim
    z = T.zeros_param
    return AttentionParams(
        wq=z((dim, dim)), wk=z((dim, dim)), wv=z((dim, dim)), wo=z((dim, dim)),
        pe_w1=z((2, dim)), pe_b1=z((dim,)), pe_w2=z((dim, dim)), pe_b2=z((dim,)),
        ln1_g=T.ones_param((dim,)), ln1_b=z((dim,)),
        ln2_g=T.ones_param((dim,)), ln2_b=z((dim,)),
        ff_w1=z((dim, inner)), ff_b1=z((inner,)), ff_w2=z((inner, dim)), ff_b2=z((dim,)),
        heads=heads,
    )


def sparse_regional_attention(
    features: Tensor,
    assignment: WindowAssignment,
    params: AttentionParams,
    pe_positions: np.ndarray | None = None,
) -> Tensor:
    """Pre-norm multi-head self-attention within each window plus a residual
    feed-forward; token order is preserved.

    ``pe_positions`` overrides the positional-embedding input (defaults to
    in-window offsets normalized to [-1, 1]).
    """
    m, d = features.data.shape
    if d != params.dim:
        raise ValueError(f"sparse_regional_attention: feature dim {d} vs params dim {params.dim}")
    if m != assignment.window_ids.shape[0]:
        raise ValueError(
            f"sparse_regional_attention: {m} feature rows vs {assignment.window_ids.shape[0]} assigned tokens"
        )
    if m == 0:
        return features
    if pe_positions is None:
        pe_positions = (assignment.offsets + 0.5) / assignment.region_size * 2.0 - 1.0
    pe_in = T.constant(np.asarray(pe_positions, dtype=np.float64))
    pe = T.linear(T.gelu(T.linear(pe_in, params.pe_w1, params.pe_b1)), params.pe_w2, params.pe_b2)
    x = T.add(features, pe)

    out_rows = []
    out_index = []
    for wid in sorted(assignment.groups):
        idx = assignment.groups[wid]
        rows = T.gather_rows(x, idx)
        h = T.layer_norm(rows, params.ln1_g, params.ln1_b)
        q = T.matmul(h, params.wq)
        k = T.matmul(h, params.wk)
        v = T.matmul(h, params.wv)
        att = T.window_attention(q, k, v, params.heads)
        y = T.add(rows, T.matmul(att, params.wo))
        out_rows.append(y)
        out_index.append(idx)
    stacked = out_rows[0] if len(out_rows) == 1 else T.concat(out_rows, axis=0)
    attended = T.scatter_rows_add(stacked, np.concatenate(out_index), m)

    # the feed-forward is per-token, so it runs once over all windows
    f = T.layer_norm(attended, params.ln2_g, params.ln2_b)
    f = T.linear(T.gelu(T.linear(f, params.ff_w1, params.ff_b1)), params.ff_w2, params.ff_b2)
    return T.add(attended, f)


@dataclass
class SparseConvParams:
    """3x3 sparse conv weights stored as nine (C_in, C_out) taps plus bias."""

    taps: list[Tensor]
    bias: Tensor

    @property
    def in_dim(self) -> int:
        return self.taps[0].data.shape[0]

    @property
    def out_dim(self) -> int:
        return self.taps[0].data.shape[1]

    def named_parameters(self, prefix: str):
        for i, t in enumerate(self.taps):
            yield f"{prefix}.tap{i}", t
        yield f"{prefix}.bias", self.bias

    def dense_kernel(self) -> np.ndarray:
        """(C_out, C_in, 3, 3) view for dense reference checks; taps are
        (dx, dy) offsets while kernel spatial axes are (y, x)."""
        k = np.zeros((self.out_dim, self.in_dim, 3, 3))
        for (dx, dy), t in zip(TAPS, self.taps):
            k[:, :, dy + 1, dx + 1] = t.data.T
        return k


def init_sparse_conv_params(rng: np.random.Generator, in_dim: int, out_dim: int) -> SparseConvParams:
    fan_in = in_dim * 9
    return SparseConvParams(
        taps=[T.uniform_init(rng, (in_dim, out_dim), fan_in) for _ in TAPS],
        bias=T.zeros_param((out_dim,)),
    )


def _coord_key(coords: np.ndarray) -> np.ndarray:
    return coords[:, 0] * (2**31) + coords[:, 1]


def _match_active(query: np.ndarray, active_sorted_keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """For each query coord, the row of a matching active coord (or miss)."""
    qk = _coord_key(query)
    pos = np.searchsorted(active_sorted_keys, qk)
    pos_clip = np.minimum(pos, len(active_sorted_keys) - 1) if len(active_sorted_keys) else pos
    hit = np.zeros(len(query), dtype=bool)
    if len(active_sorted_keys):
        hit = active_sorted_keys[pos_clip] == qk
    return hit, pos_clip


def _tap_accumulate(
    feats: Tensor,
    in_coords: np.ndarray,
    out_coords: np.ndarray,
    params: SparseConvParams,
    center_of: np.ndarray,
) -> Tensor:
    """Sum over taps of W_tap . input(center_of + tap), active inputs only."""
    m_out = out_coords.shape[0]
    in_keys = _coord_key(in_coords)
    acc = None
    for (di, dj), w in zip(TAPS, params.taps):
        query = center_of + np.array([di, dj])
        hit, rows = _match_active(query, in_keys)
        if not hit.any():
            continue
        gathered = T.gather_rows(feats, rows[hit])
        part = T.scatter_rows_add(T.matmul(gathered, w), np.flatnonzero(hit), m_out)
        acc = part if acc is None else T.add(acc, part)
    if acc is None:
        acc = T.constant(np.zeros((m_out, params.out_dim)))
    ones = T.constant(np.ones((m_out, 1)))
    bias = T.matmul(ones, T.reshape(params.bias, (1, params.out_dim)))
    return T.add(acc, bias)


def sparse_conv_downsample(tokens: TokenSet, params: SparseConvParams) -> TokenSet:
    """Stride-2 sparse conv: active output sites are floor(coords / 2), each
    reading the 3x3 taps centered on 2 * site + 1 (the 2x2 block center)."""
    if tokens.level >= 2:
        raise ValueError("sparse_conv_downsample: level must be < 2")
    if params.in_dim != tokens.dim:
        raise ValueError(f"sparse_conv_downsample: token dim {tokens.dim} vs conv in dim {params.in_dim}")
    if len(tokens) == 0:
        return TokenSet(np.zeros((0, params.out_dim)), np.empty((0, 2), np.int64), tokens.level + 1, tokens.grid)
    out_coords = np.unique(tokens.coords // 2, axis=0)
    centers = out_coords * 2 + 1
    out = _tap_accumulate(tokens.features, tokens.coords, out_coords, params, centers)
    return TokenSet(out, out_coords, tokens.level + 1, tokens.grid)


def submanifold_conv(tokens: TokenSet, params: SparseConvParams) -> TokenSet:
    """3x3 sparse conv that keeps the active-site set fixed."""
    if params.in_dim != tokens.dim:
        raise ValueError(f"submanifold_conv: token dim {tokens.dim} vs conv in dim {params.in_dim}")
    if len(tokens) == 0:
        return TokenSet(np.zeros((0, params.out_dim)), tokens.coords, tokens.level, tokens.grid)
    out = _tap_accumulate(tokens.features, tokens.coords, tokens.coords, params, tokens.coords)
    return TokenSet(out, tokens.coords, tokens.level, tokens.grid)
