"""Per-token point targets, point prediction head, and l2 Chamfer loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .pillars import GridSpec, PointCloud
from .tensor import Tensor, _record, _require_finite


@dataclass
class TargetSet:
    """(T, K, 3) normalized target points; rows past valid_counts are padding
    and never enter the loss."""

    points: np.ndarray
    valid_counts: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.valid_counts = np.asarray(self.valid_counts, dtype=np.int64)
        if self.points.ndim != 3 or self.points.shape[2] != 3:
            raise ValueError(f"TargetSet: points must be (T, K, 3), got {self.points.shape}")
        if self.valid_counts.shape != (self.points.shape[0],):
            raise ValueError("TargetSet: valid_counts length mismatch")
        k = self.points.shape[1]
        if self.points.shape[0] and (self.valid_counts.min() < 1 or self.valid_counts.max() > k):
            raise ValueError("TargetSet: valid counts must lie in [1, K]")


def cell_centers(coords: np.ndarray, level: int, spec: GridSpec) -> np.ndarray:
    """(x, y) centers of the given cells at the given pyramid level."""
    size_x = spec.pillar_x * (2**level)
    size_y = spec.pillar_y * (2**level)
    cx = spec.x_min + (coords[:, 0] + 0.5) * size_x
    cy = spec.y_min + (coords[:, 1] + 0.5) * size_y
    return np.stack([cx, cy], axis=1)


def normalize_points(pts: np.ndarray, coord: np.ndarray, level: int, spec: GridSpec) -> np.ndarray:
    """Token-local coords: x, y relative to the cell center over the half cell
    size, z relative to the z midpoint over the half z range."""
    size_x = spec.pillar_x * (2**level)
    size_y = spec.pillar_y * (2**level)
    cx = spec.x_min + (coord[0] + 0.5) * size_x
    cy = spec.y_min + (coord[1] + 0.5) * size_y
    out = np.empty_like(pts)
    out[:, 0] = (pts[:, 0] - cx) / (0.5 * size_x)
    out[:, 1] = (pts[:, 1] - cy) / (0.5 * size_y)
    out[:, 2] = (pts[:, 2] - spec.z_mid) / spec.z_half
    return out


def denormalize_points(local: np.ndarray, coords: np.ndarray, level: int, spec: GridSpec) -> np.ndarray:
    """Inverse of normalize_points for (T, K, 3) predictions."""
    size_x = spec.pillar_x * (2**level)
    size_y = spec.pillar_y * (2**level)
    centers = cell_centers(coords, level, spec)
    out = np.empty_like(local)
    out[:, :, 0] = local[:, :, 0] * (0.5 * size_x) + centers[:, 0][:, None]
    out[:, :, 1] = local[:, :, 1] * (0.5 * size_y) + centers[:, 1][:, None]
    out[:, :, 2] = local[:, :, 2] * spec.z_half + spec.z_mid
    return out


def build_targets(
    cloud: PointCloud,
    masked_coords: np.ndarray,
    level: int,
    spec: GridSpec,
    k: int,
    seed: int,
    points_per_token: list[np.ndarray] | None = None,
) -> TargetSet:
    """Sample at most k points per masked token (seeded, without replacement)
    and normalize them into token-local coordinates.

    ``points_per_token`` overrides cell membership; point masking passes the
    exact masked points of each pillar through it.
    """
    masked_coords = np.asarray(masked_coords, dtype=np.int64).reshape(-1, 2)
    t = masked_coords.shape[0]
    rng = np.random.default_rng(seed)
    targets = np.zeros((t, k, 3), dtype=np.float64)
    counts = np.zeros(t, dtype=np.int64)

    if points_per_token is None:
        pts_all = cloud.points
        in_range = (
            (pts_all[:, 0] >= spec.x_min) & (pts_all[:, 0] < spec.x_max)
            & (pts_all[:, 1] >= spec.y_min) & (pts_all[:, 1] < spec.y_max)
            & (pts_all[:, 2] >= spec.z_min) & (pts_all[:, 2] < spec.z_max)
        )
        pts_all = pts_all[in_range]
        factor = 2**level
        ix = np.floor((pts_all[:, 0] - spec.x_min) / (spec.pillar_x * factor)).astype(np.int64)
        iy = np.floor((pts_all[:, 1] - spec.y_min) / (spec.pillar_y * factor)).astype(np.int64)
        groups: dict[tuple[int, int], list[int]] = {}
        for i, key in enumerate(zip(ix, iy)):
            groups.setdefault((int(key[0]), int(key[1])), []).append(i)
        points_per_token = []
        for coord in masked_coords:
            rows = groups.get((int(coord[0]), int(coord[1])), [])
            points_per_token.append(pts_all[np.asarray(rows, dtype=np.int64)])
    elif len(points_per_token) != t:
        raise ValueError("build_targets: points_per_token length does not match masked coords")

    for i, (coord, pts) in enumerate(zip(masked_coords, points_per_token)):
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        if pts.shape[0] == 0:
            raise ValueError(f"build_targets: masked token {tuple(coord)} contains no points")
        take = min(pts.shape[0], k)
        sel = rng.choice(pts.shape[0], size=take, replace=False)
        targets[i, :take] = normalize_points(pts[sel], coord, level, spec)
        counts[i] = take
    return TargetSet(points=targets, valid_counts=counts)


@dataclass
class PredictionHead:
    """Linear 128 -> 3K map reshaped to K points per token."""

    w: Tensor
    b: Tensor
    k: int

    def named_parameters(self, prefix: str = "head"):
        yield f"{prefix}.w", self.w
        yield f"{prefix}.b", self.b


def init_prediction_head(rng: np.random.Generator, dim: int, k: int) -> PredictionHead:
    return PredictionHead(w=T.uniform_init(rng, (dim, 3 * k), dim), b=T.zeros_param((3 * k,)), k=k)


def predict_points(e_mask: Tensor, head: PredictionHead) -> Tensor:
    """(T, d) mask features to (T, K, 3) unconstrained point predictions."""
    if e_mask.data.ndim != 2 or e_mask.data.shape[1] != head.w.data.shape[0]:
        raise ValueError(
            f"predict_points: features {e_mask.data.shape} do not match head input {head.w.data.shape[0]}"
        )
    flat = T.linear(e_mask, head.w, head.b)
    return T.reshape(flat, (e_mask.data.shape[0], head.k, 3))


def chamfer_loss(pred: Tensor, targets: TargetSet) -> Tensor:
    """Mean over tokens of the symmetric l2 Chamfer distance.

    Per token: (1/K) sum_k min_j ||p_k - t_j||^2 over the valid targets plus
    (1/v) sum_{j<v} min_k ||t_j - p_k||^2 over all K predictions. Ties take
    the first nearest neighbor (subgradient choice).
    """
    _require_finite("chamfer_loss", pred)
    t_pts = targets.points
    valid = targets.valid_counts
    if pred.data.ndim != 3 or pred.data.shape != t_pts.shape:
        raise ValueError(f"chamfer_loss: prediction {pred.data.shape} vs targets {t_pts.shape}")
    tt, k, _ = pred.data.shape
    if tt == 0:
        raise ValueError("chamfer_loss: no tokens")
    if valid.min() < 1:
        raise ValueError("chamfer_loss: token with zero valid targets")

    p = pred.data
    diff = p[:, :, None, :] - t_pts[:, None, :, :]          # (T, K, K, 3)
    d2 = np.einsum("tkjc,tkjc->tkj", diff, diff)
    pad = np.arange(k)[None, :] >= valid[:, None]           # (T, K) padded target slots
    d2_masked = np.where(pad[:, None, :], np.inf, d2)

    arg_pred = np.argmin(d2_masked, axis=2)                 # (T, K) nearest valid target
    min_pred = np.take_along_axis(d2_masked, arg_pred[:, :, None], axis=2)[:, :, 0]
    arg_tgt = np.argmin(d2, axis=1)                         # (T, K) nearest prediction per target slot
    min_tgt = np.take_along_axis(d2, arg_tgt[:, None, :], axis=1)[:, 0, :]

    per_token = min_pred.mean(axis=1) + np.where(pad, 0.0, min_tgt).sum(axis=1) / valid
    out = Tensor(per_token.mean())

    def bwd(g):
        gp = np.zeros_like(p)
        # prediction-side: d/dp_k ||p_k - t_j*||^2 = 2 (p_k - t_j*)
        nearest_t = np.take_along_axis(t_pts, arg_pred[:, :, None], axis=1)
        gp += (2.0 / (tt * k)) * (p - nearest_t)
        # target-side: each valid t_j pulls its nearest p_k*
        ti_idx, j_idx = np.nonzero(~pad)
        ks = arg_tgt[ti_idx, j_idx]
        pull = (2.0 / (tt * valid[ti_idx]))[:, None] * (p[ti_idx, ks] - t_pts[ti_idx, j_idx])
        np.add.at(gp, (ti_idx, ks), pull)
        return (g * gp,)

    return _record(out, (pred,), bwd)
