"""Point clouds to sparse pillar tokens and back to dense 2-d maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class PointCloud:
    """N x 3 points in meters, optional per-point intensity."""

    points: np.ndarray
    intensity: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64).reshape(-1, 3))
        if not np.all(np.isfinite(self.points)):
            raise ValueError("PointCloud: non-finite coordinates")
        if self.intensity is not None:
            self.intensity = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
            if self.intensity.shape[0] != self.points.shape[0]:
                raise ValueError("PointCloud: intensity length does not match point count")

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class GridSpec:
    """Detection range and pillar size; extents are ceil(range / size)."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    z_min: float
    z_max: float
    pillar_x: float
    pillar_y: float

    def __post_init__(self):
        if self.pillar_x <= 0 or self.pillar_y <= 0:
            raise ValueError("GridSpec: pillar size must be positive")
        if self.x_max <= self.x_min or self.y_max <= self.y_min or self.z_max <= self.z_min:
            raise ValueError("GridSpec: range_max must exceed range_min on every axis")

    @property
    def width(self) -> int:
        return int(np.ceil((self.x_max - self.x_min) / self.pillar_x))

    @property
    def height(self) -> int:
        return int(np.ceil((self.y_max - self.y_min) / self.pillar_y))

    def extents_at(self, level: int) -> tuple[int, int]:
        """(width, height) after ``level`` halvings."""
        w, h = self.width, self.height
        for _ in range(level):
            w = (w + 1) // 2
            h = (h + 1) // 2
        return w, h

    @property
    def z_mid(self) -> float:
        return 0.5 * (self.z_min + self.z_max)

    @property
    def z_half(self) -> float:
        return 0.5 * (self.z_max - self.z_min)


def _lex_order(coords: np.ndarray) -> np.ndarray:
    return np.lexsort((coords[:, 1], coords[:, 0]))


class TokenSet:
    """Sparse token features with unique, lexicographically sorted coords.

    features: (M, C) Tensor; coords: (M, 2) int (ix, iy); level 0/1/2 with
    downsample factor 2**level against the level-0 grid.
    """

    def __init__(self, features: Tensor | np.ndarray, coords: np.ndarray, level: int, grid: GridSpec):
        if not isinstance(features, Tensor):
            features = Tensor(features)
        coords = np.ascontiguousarray(np.asarray(coords, dtype=np.int64).reshape(-1, 2))
        if features.data.ndim != 2 or features.data.shape[0] != coords.shape[0]:
            raise ValueError(f"TokenSet: {features.data.shape} features vs {coords.shape[0]} coords")
        w, h = grid.extents_at(level)
        if coords.size:
            if coords.min() < 0 or coords[:, 0].max() >= w or coords[:, 1].max() >= h:
                raise ValueError(f"TokenSet: coord out of level-{level} extents ({w}, {h})")
            if np.unique(coords, axis=0).shape[0] != coords.shape[0]:
                raise ValueError("TokenSet: duplicate coords")
            order = _lex_order(coords)
            if not np.array_equal(order, np.arange(coords.shape[0])):
                coords = coords[order]
                features = T.gather_rows(features, order)
        self.features = features
        self.coords = coords
        self.level = int(level)
        self.grid = grid

    def __len__(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.features.data.shape[1]

    @property
    def extents(self) -> tuple[int, int]:
        return self.grid.extents_at(self.level)


@dataclass
class VoxelizeResult:
    """Per-point pillar assignment plus the deduplicated occupied coords."""

    pillar_ids: np.ndarray   # (N, 2), -1 rows for dropped points
    kept: np.ndarray         # (N,) bool
    occupied: np.ndarray     # (M, 2) unique, lexicographically sorted
    dropped: int


def voxelize(cloud: PointCloud, spec: GridSpec) -> VoxelizeResult:
    """Assign every in-range point to its pillar; floor convention, points at
    range_max are dropped."""
    pts = cloud.points
    n = pts.shape[0]
    if n == 0:
        return VoxelizeResult(np.empty((0, 2), np.int64), np.empty(0, bool), np.empty((0, 2), np.int64), 0)
    ix = np.floor((pts[:, 0] - spec.x_min) / spec.pillar_x).astype(np.int64)
    iy = np.floor((pts[:, 1] - spec.y_min) / spec.pillar_y).astype(np.int64)
    kept = (
        (pts[:, 0] >= spec.x_min) & (pts[:, 0] < spec.x_max)
        & (pts[:, 1] >= spec.y_min) & (pts[:, 1] < spec.y_max)
        & (pts[:, 2] >= spec.z_min) & (pts[:, 2] < spec.z_max)
        & (ix < spec.width) & (iy < spec.height) & (ix >= 0) & (iy >= 0)
    )
    ids = np.stack([ix, iy], axis=1)
    ids[~kept] = -1
    occupied = np.unique(ids[kept], axis=0) if kept.any() else np.empty((0, 2), np.int64)
    occupied = occupied[_lex_order(occupied)] if occupied.size else occupied
    return VoxelizeResult(ids, kept, occupied, int(n - kept.sum()))


@dataclass
class PfeParams:
    """Two linear+gelu layers followed by per-pillar max pooling."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @property
    def in_dim(self) -> int:
        return self.w1.data.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w2.data.shape[1]

    def named_parameters(self, prefix: str = "pfe"):
        yield f"{prefix}.w1", self.w1
        yield f"{prefix}.b1", self.b1
        yield f"{prefix}.w2", self.w2
        yield f"{prefix}.b2", self.b2


def init_pfe_params(rng: np.random.Generator, in_dim: int, channels: tuple[int, int]) -> PfeParams:
    c1, c2 = channels
    return PfeParams(
        w1=T.uniform_init(rng, (in_dim, c1), in_dim),
        b1=T.zeros_param((c1,)),
        w2=T.uniform_init(rng, (c1, c2), c1),
        b2=T.zeros_param((c2,)),
    )


def point_input_features(cloud: PointCloud, vox: VoxelizeResult, spec: GridSpec, use_intensity: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Per kept point: (x, y, z[, intensity], dx, dy) with dx, dy the offsets
    to the pillar center, plus the segment index of the point's pillar."""
    kept = vox.kept
    pts = cloud.points[kept]
    ids = vox.pillar_ids[kept]
    cx = spec.x_min + (ids[:, 0] + 0.5) * spec.pillar_x
    cy = spec.y_min + (ids[:, 1] + 0.5) * spec.pillar_y
    cols = [pts[:, 0], pts[:, 1], pts[:, 2]]
    if use_intensity and cloud.intensity is not None:
        cols.append(cloud.intensity[kept])
    cols.append(pts[:, 0] - cx)
    cols.append(pts[:, 1] - cy)
    feats = np.stack(cols, axis=1)
    # map each point's pillar to its row in the sorted occupied list
    occ = vox.occupied
    keys = occ[:, 0] * (2**31) + occ[:, 1]
    pt_keys = ids[:, 0] * (2**31) + ids[:, 1]
    segments = np.searchsorted(keys, pt_keys)
    return feats, segments


def pillar_feature_encode(
    cloud: PointCloud,
    vox: VoxelizeResult,
    spec: GridSpec,
    params: PfeParams,
    use_intensity: bool = True,
) -> TokenSet:
    """PointNet-style pillar encoding: per-point MLP then max over the pillar."""
    if len(vox.occupied) == 0:
        return TokenSet(np.zeros((0, params.out_dim)), np.empty((0, 2), np.int64), 0, spec)
    feats, segments = point_input_features(cloud, vox, spec, use_intensity)
    if feats.shape[1] != params.in_dim:
        raise ValueError(
            f"pillar_feature_encode: point feature width {feats.shape[1]} does not match PFE input {params.in_dim}"
        )
    x = T.constant(feats)
    x = T.gelu(T.linear(x, params.w1, params.b1))
    x = T.gelu(T.linear(x, params.w2, params.b2))
    pooled = T.segment_max_rows(x, segments, len(vox.occupied))
    return TokenSet(pooled, vox.occupied, 0, spec)


def flat_indices(coords: np.ndarray, extents: tuple[int, int]) -> np.ndarray:
    w, h = extents
    if coords.size:
        bad = (coords[:, 0] < 0) | (coords[:, 0] >= w) | (coords[:, 1] < 0) | (coords[:, 1] >= h)
        if bad.any():
            i = int(np.argmax(bad))
            raise ValueError(f"coord {(int(coords[i, 0]), int(coords[i, 1]))} out of extents ({w}, {h})")
    return coords[:, 1] * w + coords[:, 0]


def scatter_to_dense(tokens: TokenSet, fill: float = 0.0, extents: tuple[int, int] | None = None) -> Tensor:
    """Dense (C, H, W) map holding token features at their coords, ``fill``
    elsewhere. ``extents`` overrides the level extents (never smaller)."""
    w, h = extents if extents is not None else tokens.extents
    c = tokens.dim
    idx = flat_indices(tokens.coords, (w, h))
    if idx.size and np.unique(idx).size != idx.size:
        raise ValueError("scatter_to_dense: duplicate coords")
    flat = T.scatter_rows_add(tokens.features, idx, h * w)
    dense = T.reshape(T.transpose2d(flat), (c, h, w))
    if fill != 0.0:
        mask = np.full((c, h, w), fill, dtype=np.float64)
        mask[:, idx // w, idx % w] = 0.0
        dense = T.add(dense, T.constant(mask))
    return dense


def gather_from_dense(dense: Tensor, coords: np.ndarray) -> Tensor:
    """Rows of the (C, H, W) map at (ix, iy) coords; repeats allowed."""
    if dense.data.ndim != 3:
        raise ValueError(f"gather_from_dense: expected (C, H, W) map, got {dense.data.shape}")
    c, h, w = dense.data.shape
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    idx = flat_indices(coords, (w, h))
    rows = T.transpose2d(T.reshape(dense, (c, h * w)))
    return T.gather_rows(rows, idx)
