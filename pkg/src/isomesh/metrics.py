"""Shape-recovery evaluation (PM distance) and the uniform noise model."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .geometry import TriangleMesh, as_cloud
from .spatial import TriangleIndex, brute_force_distances, point_triangle_distances


def point_triangle_distance(p, tri) -> float:
    """Distance from ``p`` to the closest point of the closed triangle ``tri`` (3x3)."""
    t = np.asarray(tri, dtype=np.float64).reshape(3, 3)
    return float(point_triangle_distances(np.asarray(p, dtype=np.float64).reshape(1, 3), t[0:1], t[1:2], t[2:3])[0])


def mesh_distances(points, mesh: TriangleMesh) -> np.ndarray:
    """Per-point distance to the nearest patch of ``mesh``."""
    dist, _, _ = TriangleIndex(mesh.triangles()).query(points)
    return dist


@dataclass
class PMReport:
    pm_distance: float
    mean_to_truth: float
    mean_to_mesh: float
    per_vertex: np.ndarray  # d(v, G) for each vertex of the evaluated mesh

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["vertex", "distance_to_truth"])
            for i, d in enumerate(self.per_vertex):
                w.writerow([i, f"{d:.9g}"])
            w.writerow([])
            w.writerow(["mean_to_truth", "mean_to_mesh", "pm_distance"])
            w.writerow([f"{self.mean_to_truth:.9g}", f"{self.mean_to_mesh:.9g}", f"{self.pm_distance:.9g}"])


def pm_report(R: TriangleMesh, G: TriangleMesh, r_mask=None, g_mask=None, brute_force=False) -> PMReport:
    """PM distance between a reconstruction ``R`` and ground truth ``G``.

    Half the sum of the mean vertex-to-patch distance in both directions;
    the ground truth's vertices are its point set. Optional boolean masks
    restrict which vertices of each mesh enter the two means (the patches
    searched are always complete).
    """
    if R.n_vertices == 0 or G.n_vertices == 0:
        raise ValueError("meshes must be non-empty")
    if brute_force:
        d_rg = brute_force_distances(R.vertices, G.triangles())
        d_gr = brute_force_distances(G.vertices, R.triangles())
    else:
        d_rg = mesh_distances(R.vertices, G)
        d_gr = mesh_distances(G.vertices, R)
    a = d_rg if r_mask is None else d_rg[np.asarray(r_mask)]
    b = d_gr if g_mask is None else d_gr[np.asarray(g_mask)]
    to_truth, to_mesh = float(a.mean()), float(b.mean())
    return PMReport(0.5 * (to_truth + to_mesh), to_truth, to_mesh, d_rg)


def pm_distance(R: TriangleMesh, G: TriangleMesh, brute_force: bool = False) -> float:
    return pm_report(R, G, brute_force=brute_force).pm_distance


@dataclass(frozen=True)
class NoiseSpec:
    """``delta`` percent of the points get per-coordinate offsets uniform in [-sigma, sigma]."""

    delta: float
    sigma: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.delta <= 100.0:
            raise ValueError("delta must be a percentage in [0, 100]")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


def add_noise(cloud, spec: NoiseSpec) -> np.ndarray:
    pts = as_cloud(cloud).copy()
    n = len(pts)
    k = min(n, math.ceil(round(spec.delta * n / 100.0, 9)))
    if k == 0 or spec.sigma == 0:
        return pts
    rng = np.random.default_rng(spec.seed)
    idx = rng.choice(n, size=k, replace=False)
    pts[idx] += rng.uniform(-spec.sigma, spec.sigma, size=(k, 3))
    return pts
