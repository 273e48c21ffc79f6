"""Per-region deformation shared by the coarse and fine stages.

Each region is fitted in a translated frame whose origin is the centroid of
its current vertices. Correspondences are computed once and frozen. After a
first training pass the networks' outputs are fused into new coordinates
for the input cloud, and every network is retrained against those.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .geometry import LocalRegion, TriangleMesh, lloyd_sample
from .nn import Mlp, TrainConfig, TrainingDiverged, mlp_init, mlp_train
from .transport import extract_correspondence, extract_inverse_correspondence, sinkhorn_plan

log = logging.getLogger(__name__)

MAX_DIVERGENCE_RETRIES = 3


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([abs(int(p)) for p in parts]).generate_state(1)[0])


@dataclass
class LocalFit:
    """State of one region's fit. ``network is None`` means identity (no cloud points)."""

    region: LocalRegion
    center: np.ndarray
    scale: float
    point_indices: np.ndarray  # indices into the input cloud
    samples: Optional[np.ndarray] = None  # local frame, one per cloud point
    corr: Optional[np.ndarray] = None  # sample -> position in point_indices
    inv_corr: Optional[np.ndarray] = None  # position in point_indices -> sample
    second_inputs: Optional[np.ndarray] = None  # fine stage: scaled vertices, local frame
    second_targets: Optional[np.ndarray] = None
    network: Optional[Mlp] = None
    seed: int = 0
    losses: dict = field(default_factory=dict)
    restarts: int = 0

    @property
    def empty(self) -> bool:
        return self.network is None

    def vertex_images(self, vertices: np.ndarray) -> np.ndarray:
        """Images of the region's vertices (global frame) under ``f(scale * (v - c)) + c``."""
        v = vertices[self.region.vertex_indices]
        if self.network is None:
            return v.copy()
        return self.network.forward(self.scale * (v - self.center)).astype(np.float64) + self.center

    def point_images(self) -> np.ndarray:
        """Network output associated with each of the region's cloud points (global frame)."""
        out = self.network.forward(self.samples[self.inv_corr]).astype(np.float64)
        return out + self.center


def region_center(mesh: TriangleMesh, region: LocalRegion) -> np.ndarray:
    return mesh.vertices[region.vertex_indices].mean(axis=0)


def prepare_fit(
    mesh: TriangleMesh,
    region: LocalRegion,
    cloud: np.ndarray,
    point_indices: np.ndarray,
    scale: float,
    cfg: TrainConfig,
    seed: int,
    lloyd_iterations: int = 10,
) -> LocalFit:
    """Centroid frame, Lloyd samples on the scaled local mesh, frozen Sinkhorn matching."""
    center = region_center(mesh, region)
    fit = LocalFit(region, center, scale, np.asarray(point_indices, dtype=np.int64), seed=seed)
    if len(fit.point_indices) == 0 or len(region.patch_indices) == 0:
        return fit
    local = cloud[fit.point_indices] - center
    fit.samples = lloyd_sample(
        mesh, region, len(local), iterations=lloyd_iterations, seed=seed, scale=scale, center=center
    )
    plan = sinkhorn_plan(fit.samples, local, cfg.sinkhorn_epsilon, cfg.sinkhorn_iterations, cfg.sinkhorn_tolerance)
    fit.corr = extract_correspondence(plan)
    fit.inv_corr = extract_inverse_correspondence(plan)
    fit.corr.setflags(write=False)
    fit.inv_corr.setflags(write=False)
    return fit


def train_fit(fit: LocalFit, targets_global: np.ndarray, cfg: TrainConfig, phase: str, alpha: float) -> None:
    """Train (or continue training) ``fit.network`` against ``targets_global[fit.point_indices]``.

    The first phase initializes the network; on divergence the network is
    re-drawn from a new seed, up to ``MAX_DIVERGENCE_RETRIES`` times.
    """
    if fit.samples is None:
        return
    local_targets = targets_global[fit.point_indices] - fit.center
    y = local_targets[fit.corr]
    second = None
    if fit.second_inputs is not None and alpha != 0:
        second = (fit.second_inputs, fit.second_targets)
    run_cfg = TrainConfig(**{**cfg.__dict__, "alpha": alpha})
    start = fit.network
    for attempt in range(MAX_DIVERGENCE_RETRIES + 1):
        if start is None or attempt > 0:
            net = mlp_init(derive_seed(fit.seed, attempt))
        else:
            net = start.copy()
        try:
            report = mlp_train(net, fit.samples, y, run_cfg, second=second)
        except TrainingDiverged as exc:
            log.warning("region fit diverged (%s); re-initializing", exc)
            fit.restarts += 1
            continue
        fit.network = net
        fit.losses[phase] = report.losses
        return
    raise TrainingDiverged("region fit kept diverging after re-initialization")


def run_parallel(fn: Callable, items: Sequence, threads: int = 1) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def vertex_weight_lookup(fit: LocalFit, n_vertices: int) -> np.ndarray:
    w = np.full(n_vertices, np.nan)
    w[fit.region.vertex_indices] = fit.region.weights
    return w


def fuse_point_targets(cloud: np.ndarray, fits: Sequence[LocalFit], cloud_to_vertex: np.ndarray, n_vertices: int):
    """Weighted average of every network's output for each cloud point.

    A point's weight under a region is the region weight of its nearest
    mesh vertex. Points seen by no trained network keep their coordinates;
    points whose weights sum to zero take the unweighted mean (counted in
    the returned flag total).
    """
    acc = np.zeros_like(cloud)
    wsum = np.zeros(len(cloud))
    plain = np.zeros_like(cloud)
    count = np.zeros(len(cloud))
    for fit in fits:
        if fit.empty:
            continue
        out = fit.point_images()
        w = vertex_weight_lookup(fit, n_vertices)[cloud_to_vertex[fit.point_indices]]
        np.add.at(acc, fit.point_indices, w[:, None] * out)
        np.add.at(wsum, fit.point_indices, w)
        np.add.at(plain, fit.point_indices, out)
        np.add.at(count, fit.point_indices, 1.0)
    fused = cloud.copy()
    ok = wsum > 0
    fused[ok] = acc[ok] / wsum[ok, None]
    zero = (wsum == 0) & (count > 0)
    fused[zero] = plain[zero] / count[zero, None]
    return fused, int(zero.sum())


def integrate_vertices(mesh: TriangleMesh, fits: Sequence[LocalFit], top_k: Optional[int] = None):
    """Fuse per-region vertex images into one mesh.

    Each vertex takes the weighted mean of its images over the owning
    regions; with ``top_k`` only the ``top_k`` highest-weight images are
    used (ties keep the earlier region). Vertices owned by no region keep
    their coordinates. Returns (mesh, uncovered count, zero-weight count).
    """
    V = mesh.n_vertices
    imgs, wts, owner_v = [], [], []
    for fit in fits:
        imgs.append(fit.vertex_images(mesh.vertices))
        wts.append(fit.region.weights)
        owner_v.append(fit.region.vertex_indices)
    if not imgs:
        return mesh, V, 0
    imgs = np.concatenate(imgs)
    wts = np.concatenate(wts)
    owner_v = np.concatenate(owner_v)
    region_order = np.arange(len(owner_v))

    if top_k is not None:
        # sort by vertex, then weight descending, then region order
        order = np.lexsort((region_order, -wts, owner_v))
        ov = owner_v[order]
        first = np.r_[True, ov[1:] != ov[:-1]]
        starts = np.flatnonzero(first)
        rank = np.arange(len(ov)) - np.repeat(starts, np.diff(np.r_[starts, len(ov)]))
        keep = order[rank < top_k]
        imgs, wts, owner_v = imgs[keep], wts[keep], owner_v[keep]

    acc = np.zeros((V, 3))
    wsum = np.zeros(V)
    plain = np.zeros((V, 3))
    count = np.zeros(V)
    np.add.at(acc, owner_v, wts[:, None] * imgs)
    np.add.at(wsum, owner_v, wts)
    np.add.at(plain, owner_v, imgs)
    np.add.at(count, owner_v, 1.0)

    out = mesh.vertices.copy()
    ok = wsum > 0
    out[ok] = acc[ok] / wsum[ok, None]
    zero = (wsum == 0) & (count > 0)
    out[zero] = plain[zero] / count[zero, None]
    uncovered = int((count == 0).sum())
    return mesh.with_vertices(out), uncovered, int(zero.sum())
