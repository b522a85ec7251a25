"""Block-, patch-, and point-wise masking with cross-scale consistency.

Block masking samples over occupied coarse (level-2) cells and hides every
level-0 token in a masked cell's preimage, so nothing the encoder sees can
leak into a masked region at any scale. Patch masking samples level-0 cells
directly. Point masking removes raw points and keeps the affected pillars as
reconstruction targets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .pillars import GridSpec, PointCloud, TokenSet

BLOCK_FACTOR = 4  # level-2 to level-0, two stride-2 stages

STRATEGIES = ("block", "patch", "point")


@dataclass(frozen=True)
class MaskPlan:
    strategy: str
    ratio: float = 0.75
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"MaskPlan: unknown strategy {self.strategy!r}")
        if not (0.0 < self.ratio < 1.0):
            raise ValueError(f"MaskPlan: ratio must be in (0, 1), got {self.ratio}")

    @property
    def target_level(self) -> int:
        return 2 if self.strategy == "block" else 0


@dataclass
class MaskMap:
    """Dense boolean occupancy of masked cells at the target level."""

    grid: np.ndarray           # (H, W) bool at target level
    masked: np.ndarray         # (T, 2) coords, lex sorted
    visible: np.ndarray        # (V, 2) coords, lex sorted
    level: int


def _lex_sorted(coords: np.ndarray) -> np.ndarray:
    if coords.size == 0:
        return coords.reshape(0, 2).astype(np.int64)
    return coords[np.lexsort((coords[:, 1], coords[:, 0]))]


def sample_mask(occupied: np.ndarray, ratio: float, seed: int, extents: tuple[int, int], level: int) -> MaskMap:
    """Mask exactly floor(ratio * M) occupied cells by seeded shuffle."""
    if not (0.0 < ratio < 1.0):
        raise ValueError(f"sample_mask: ratio must be in (0, 1), got {ratio}")
    occupied = np.asarray(occupied, dtype=np.int64).reshape(-1, 2)
    w, h = extents
    grid = np.zeros((h, w), dtype=bool)
    m = occupied.shape[0]
    count = int(np.floor(ratio * m))
    perm = np.random.default_rng(seed).permutation(m)
    masked = _lex_sorted(occupied[perm[:count]])
    visible = _lex_sorted(occupied[perm[count:]])
    if masked.size:
        grid[masked[:, 1], masked[:, 0]] = True
    return MaskMap(grid=grid, masked=masked, visible=visible, level=level)


def upsample_mask_grid(mask: MaskMap, factor: int, extents0: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor upsample of the mask grid to the level-0 extents."""
    w0, h0 = extents0
    up = np.zeros((h0, w0), dtype=bool)
    ys, xs = np.nonzero(mask.grid)
    for y, x in zip(ys, xs):
        up[y * factor:(y + 1) * factor, x * factor:(x + 1) * factor] = True
    return up[:h0, :w0]


def block_mask_inputs(tokens: TokenSet, plan: MaskPlan) -> tuple[TokenSet, MaskMap]:
    """Mask occupied level-2 cells; a level-0 token stays visible iff its
    floor(coord / 4) cell is unmasked."""
    if plan.strategy != "block":
        raise ValueError("block_mask_inputs: plan strategy must be 'block'")
    if tokens.level != 0:
        raise ValueError("block_mask_inputs: tokens must be at level 0")
    coarse = np.unique(tokens.coords // BLOCK_FACTOR, axis=0)
    mask = sample_mask(coarse, plan.ratio, plan.seed, tokens.grid.extents_at(2), level=2)
    cell = tokens.coords // BLOCK_FACTOR
    visible_idx = np.flatnonzero(~mask.grid[cell[:, 1], cell[:, 0]])
    vis = TokenSet(T.gather_rows(tokens.features, visible_idx), tokens.coords[visible_idx], 0, tokens.grid)
    return vis, mask


def patch_mask_inputs(tokens: TokenSet, plan: MaskPlan) -> tuple[TokenSet, MaskMap]:
    """Mask occupied level-0 cells directly; consistency is automatic."""
    if plan.strategy != "patch":
        raise ValueError("patch_mask_inputs: plan strategy must be 'patch'")
    if tokens.level != 0:
        raise ValueError("patch_mask_inputs: tokens must be at level 0")
    mask = sample_mask(tokens.coords, plan.ratio, plan.seed, tokens.grid.extents_at(0), level=0)
    keep = ~mask.grid[tokens.coords[:, 1], tokens.coords[:, 0]]
    visible_idx = np.flatnonzero(keep)
    vis = TokenSet(T.gather_rows(tokens.features, visible_idx), tokens.coords[visible_idx], 0, tokens.grid)
    return vis, mask


@dataclass
class PointMaskResult:
    visible: PointCloud
    masked_points_per_pillar: dict[tuple[int, int], np.ndarray]
    mask: MaskMap


def point_mask_inputs(cloud: PointCloud, spec: GridSpec, plan: MaskPlan) -> PointMaskResult:
    """Remove floor(ratio * N) in-range points uniformly. Every pillar that
    lost at least one point becomes a reconstruction target; the mask map's
    visible cells are the untouched pillars (a partially masked pillar still
    feeds the encoder through its surviving points)."""
    if plan.strategy != "point":
        raise ValueError("point_mask_inputs: plan strategy must be 'point'")
    from .pillars import voxelize

    vox = voxelize(cloud, spec)
    kept_idx = np.flatnonzero(vox.kept)
    n = kept_idx.size
    count = int(np.floor(plan.ratio * n))
    perm = np.random.default_rng(plan.seed).permutation(n)
    masked_rows = kept_idx[perm[:count]]
    visible_rows = np.sort(kept_idx[perm[count:]])

    vis_cloud = PointCloud(
        cloud.points[visible_rows],
        intensity=None if cloud.intensity is None else cloud.intensity[visible_rows],
    )

    per_pillar: dict[tuple[int, int], list[int]] = {}
    for r in masked_rows:
        per_pillar.setdefault(tuple(vox.pillar_ids[r]), []).append(int(r))
    masked_points = {
        k: cloud.points[np.sort(np.asarray(v, dtype=np.int64))] for k, v in per_pillar.items()
    }

    w, h = spec.extents_at(0)
    grid = np.zeros((h, w), dtype=bool)
    masked_cells = _lex_sorted(np.asarray(sorted(per_pillar), dtype=np.int64).reshape(-1, 2))
    if masked_cells.size:
        grid[masked_cells[:, 1], masked_cells[:, 0]] = True
    occ_keys = {tuple(c) for c in vox.occupied}
    visible_cells = _lex_sorted(
        np.asarray(sorted(occ_keys - set(map(tuple, masked_cells))), dtype=np.int64).reshape(-1, 2)
    )
    mask = MaskMap(grid=grid, masked=masked_cells, visible=visible_cells, level=0)
    return PointMaskResult(visible=vis_cloud, masked_points_per_pillar=masked_points, mask=mask)
