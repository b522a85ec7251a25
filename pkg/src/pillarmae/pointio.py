"""ASCII point cloud files: CSV rows of x,y,z[,i] and PLY with x y z floats."""

from __future__ import annotations

import os

import numpy as np

from .pillars import PointCloud


def read_csv(path: str) -> PointCloud:
    rows = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    if rows.size == 0:
        return PointCloud(np.empty((0, 3)))
    if rows.shape[1] == 3:
        return PointCloud(rows)
    if rows.shape[1] == 4:
        return PointCloud(rows[:, :3], intensity=rows[:, 3])
    raise ValueError(f"{path}: expected 3 or 4 columns, got {rows.shape[1]}")


def read_ply(path: str) -> PointCloud:
    with open(path, "r", encoding="ascii") as f:
        line = f.readline().strip()
        if line != "ply":
            raise ValueError(f"{path}: not a PLY file")
        count = None
        fields: list[str] = []
        while True:
            line = f.readline()
            if not line:
                raise ValueError(f"{path}: truncated PLY header")
            line = line.strip()
            if line.startswith("format") and "ascii" not in line:
                raise ValueError(f"{path}: only ASCII PLY is supported")
            if line.startswith("element vertex"):
                count = int(line.split()[-1])
            elif line.startswith("property"):
                fields.append(line.split()[-1])
            elif line == "end_header":
                break
        if count is None:
            raise ValueError(f"{path}: PLY header missing vertex element")
        for axis in ("x", "y", "z"):
            if axis not in fields:
                raise ValueError(f"{path}: PLY vertex lacks property {axis}")
        cols = [fields.index(a) for a in ("x", "y", "z")]
        data = np.loadtxt(f, max_rows=count, dtype=np.float64, ndmin=2)
        if data.shape[0] != count:
            raise ValueError(f"{path}: expected {count} vertices, found {data.shape[0]}")
        pts = data[:, cols] if data.size else np.empty((0, 3))
        intensity = data[:, fields.index("intensity")] if "intensity" in fields else None
        return PointCloud(pts, intensity=intensity)


def read_point_cloud(path: str) -> PointCloud:
    ext = os.path.splitext(path)[1].lower()
    if ext == ".csv":
        return read_csv(path)
    if ext == ".ply":
        return read_ply(path)
    raise ValueError(f"{path}: unsupported point cloud extension {ext!r}")


def write_csv(path: str, cloud: PointCloud) -> None:
    cols = cloud.points if cloud.intensity is None else np.column_stack([cloud.points, cloud.intensity])
    np.savetxt(path, cols, delimiter=",", fmt="%.9g")


def write_ply(path: str, cloud: PointCloud) -> None:
    n = len(cloud)
    with open(path, "w", encoding="ascii") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {n}\n")
        f.write("property float x\nproperty float y\nproperty float z\n")
        f.write("end_header\n")
        for p in cloud.points:
            f.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")
