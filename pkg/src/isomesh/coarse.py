"""Stage 2: 32 anchor regions, each deformed by its own network, then fused."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geometry import LocalRegion, TriangleMesh, as_cloud
from .global_mapping import StageResult
from .localfit import (
    LocalFit,
    derive_seed,
    fuse_point_targets,
    integrate_vertices,
    prepare_fit,
    run_parallel,
    train_fit,
)
from .nn import TrainConfig

log = logging.getLogger(__name__)


@dataclass
class CoarseDivision:
    regions: list
    local_indices: list  # per region: indices into the cloud
    cloud_to_vertex: np.ndarray

    def local_cloud(self, cloud, i) -> np.ndarray:
        return cloud[self.local_indices[i]]


def nearest_vertices(mesh: TriangleMesh, cloud) -> np.ndarray:
    _, idx = cKDTree(mesh.vertices).query(as_cloud(cloud))
    return np.asarray(idx, dtype=np.int64)


def divide_cloud_coarse(R1: TriangleMesh, regions: Sequence[LocalRegion], cloud) -> CoarseDivision:
    """Assign each cloud point to every region containing its nearest R1 vertex."""
    pts = as_cloud(cloud)
    c2v = nearest_vertices(R1, pts)
    local = []
    for i, reg in enumerate(regions):
        member = np.zeros(R1.n_vertices, dtype=bool)
        member[reg.vertex_indices] = True
        idx = np.flatnonzero(member[c2v])
        if len(idx) == 0:
            log.warning("coarse region %d received no points; it keeps its R1 coordinates", i)
        local.append(idx)
    return CoarseDivision(list(regions), local, c2v)


def deform_local_coarse(
    R1: TriangleMesh,
    region: LocalRegion,
    cloud,
    point_indices,
    beta2: float,
    cfg: TrainConfig,
    seed: int,
    lloyd_iterations: int = 10,
) -> LocalFit:
    """First training phase for one region (matching frozen before training)."""
    pts = as_cloud(cloud)
    fit = prepare_fit(R1, region, pts, point_indices, beta2, cfg, seed, lloyd_iterations)
    train_fit(fit, pts, cfg, "phase1", alpha=0.0)
    return fit


def fuse_overlap_targets(division: CoarseDivision, fits: Sequence[LocalFit], cloud, n_vertices: int):
    """New cloud coordinates: weighted mean of every region's output for each point."""
    return fuse_point_targets(as_cloud(cloud), fits, division.cloud_to_vertex, n_vertices)


def integrate_coarse(R1: TriangleMesh, fits: Sequence[LocalFit]) -> TriangleMesh:
    mesh, uncovered, _ = integrate_vertices(R1, fits)
    assert uncovered == 0, "every vertex must belong to a coarse region"
    return mesh


def coarse_mapping(
    R1: TriangleMesh,
    regions: Sequence[LocalRegion],
    cloud,
    beta2: float,
    cfg: TrainConfig,
    threads: int = 1,
    lloyd_iterations: int = 10,
) -> StageResult:
    t0 = time.perf_counter()
    pts = as_cloud(cloud)
    div = divide_cloud_coarse(R1, regions, pts)
    seeds = [derive_seed(cfg.seed, 2, i) for i in range(len(regions))]

    fits = run_parallel(
        lambda i: deform_local_coarse(
            R1, regions[i], pts, div.local_indices[i], beta2, cfg, seeds[i], lloyd_iterations
        ),
        range(len(regions)),
        threads,
    )
    fused, zero_weight = fuse_overlap_targets(div, fits, pts, R1.n_vertices)
    run_parallel(lambda f: train_fit(f, fused, cfg, "phase2", alpha=0.0), fits, threads)
    R2 = integrate_coarse(R1, fits)
    return StageResult(
        mesh=R2,
        report={
            "region_points": [len(ix) for ix in div.local_indices],
            "empty_regions": sum(f.empty for f in fits),
            "zero_weight_points": zero_weight,
            "restarts": sum(f.restarts for f in fits),
            "final_losses": [f.losses.get("phase2", [None])[-1] for f in fits],
            "wall_time": time.perf_counter() - t0,
        },
    )
