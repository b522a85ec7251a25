"""Synthetic LiDAR-like scenes: concentric ground rings plus surface-sampled
boxes at random poses. Stands in for licensed drive data at desk scale."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .pillars import PointCloud

MAX_POINTS = 50_000


@dataclass(frozen=True)
class SceneSpec:
    rings: int = 12
    ring_spacing: float = 2.0          # meters between rings
    points_per_ring: int = 220
    vehicles: tuple[int, int] = (2, 5)
    pedestrians: tuple[int, int] = (1, 4)
    vehicle_size: tuple[tuple[float, float], ...] = ((3.6, 5.2), (1.6, 2.2), (1.3, 1.9))
    pedestrian_size: tuple[tuple[float, float], ...] = ((0.4, 0.8), (0.4, 0.8), (1.5, 1.9))
    points_per_sqm: float = 24.0       # box surface sampling density
    noise_sigma: float = 0.02
    extent: float = 24.0               # objects placed within +-extent in x, y
    seed: int = 0

    def __post_init__(self):
        if self.rings < 0 or self.points_per_ring < 0 or self.points_per_sqm < 0:
            raise ValueError("SceneSpec: counts and densities must be non-negative")
        if self.noise_sigma < 0:
            raise ValueError("SceneSpec: noise_sigma must be non-negative")


def _sample_box_surface(rng: np.random.Generator, size: np.ndarray, density: float) -> np.ndarray:
    """Uniform points on the four sides and the top of an axis-aligned box
    (the floor of an object is never scanned)."""
    lx, ly, lz = size
    faces = [
        (lx * lz, lambda n: np.stack([rng.uniform(-lx / 2, lx / 2, n), np.full(n, -ly / 2), rng.uniform(0, lz, n)], 1)),
        (lx * lz, lambda n: np.stack([rng.uniform(-lx / 2, lx / 2, n), np.full(n, ly / 2), rng.uniform(0, lz, n)], 1)),
        (ly * lz, lambda n: np.stack([np.full(n, -lx / 2), rng.uniform(-ly / 2, ly / 2, n), rng.uniform(0, lz, n)], 1)),
        (ly * lz, lambda n: np.stack([np.full(n, lx / 2), rng.uniform(-ly / 2, ly / 2, n), rng.uniform(0, lz, n)], 1)),
        (lx * ly, lambda n: np.stack([rng.uniform(-lx / 2, lx / 2, n), rng.uniform(-ly / 2, ly / 2, n), np.full(n, lz)], 1)),
    ]
    pieces = []
    for area, sampler in faces:
        n = int(np.round(area * density))
        if n > 0:
            pieces.append(sampler(n))
    if not pieces:
        return np.empty((0, 3))
    return np.concatenate(pieces, axis=0)


def _rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def generate_scene(spec: SceneSpec) -> PointCloud:
    """Deterministic per spec.seed; raises if the spec implies > 50k points."""
    rng = np.random.default_rng(spec.seed)
    pieces = []

    for r in range(spec.rings):
        radius = spec.ring_spacing * (r + 1)
        angles = rng.uniform(0.0, 2.0 * np.pi, spec.points_per_ring)
        ring = np.stack(
            [radius * np.cos(angles), radius * np.sin(angles), np.zeros(spec.points_per_ring)],
            axis=1,
        )
        pieces.append(ring)

    object_plans = []
    for count_range, size_range in ((spec.vehicles, spec.vehicle_size), (spec.pedestrians, spec.pedestrian_size)):
        count = int(rng.integers(count_range[0], count_range[1] + 1))
        for _ in range(count):
            size = np.array([rng.uniform(lo, hi) for lo, hi in size_range])
            object_plans.append(size)
    for size in object_plans:
        surf = _sample_box_surface(rng, size, spec.points_per_sqm)
        yaw = rng.uniform(-np.pi, np.pi)
        center = rng.uniform(-spec.extent, spec.extent, size=2)
        pts = surf @ _rot_z(yaw).T
        pts[:, 0] += center[0]
        pts[:, 1] += center[1]
        pieces.append(pts)

    pts = np.concatenate(pieces, axis=0) if pieces else np.empty((0, 3))
    if pts.shape[0] > MAX_POINTS:
        raise ValueError(f"generate_scene: spec implies {pts.shape[0]} points (> {MAX_POINTS})")
    if spec.noise_sigma > 0 and pts.shape[0]:
        pts = pts + rng.normal(0.0, spec.noise_sigma, pts.shape)
    return PointCloud(pts)


def apply_augmentation(cloud: PointCloud, flip_y: bool, scale: float, angle: float) -> PointCloud:
    """Deterministic composition: optional y flip, global scale, z rotation."""
    pts = cloud.points.copy()
    if flip_y:
        pts[:, 1] = -pts[:, 1]
    pts *= scale
    pts = pts @ _rot_z(angle).T
    return PointCloud(pts, intensity=None if cloud.intensity is None else cloud.intensity.copy())


def augment(cloud: PointCloud, seed: int) -> PointCloud:
    """Random y flip (p = 0.5), scale in [0.95, 1.05], z rotation in
    [-pi/4, pi/4]; deterministic per seed."""
    rng = np.random.default_rng(seed)
    flip = bool(rng.random() < 0.5)
    scale = float(rng.uniform(0.95, 1.05))
    angle = float(rng.uniform(-np.pi / 4, np.pi / 4))
    return apply_augmentation(cloud, flip, scale, angle)
