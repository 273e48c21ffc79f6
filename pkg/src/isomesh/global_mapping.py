"""Stage 1: fit the whole reference sphere to the cloud with one network."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import TriangleMesh, as_cloud, fibonacci_sample, patch_normals
from .localfit import derive_seed
from .nn import Mlp, RestartRequested, TrainConfig, TrainingDiverged, mlp_init, mlp_train
from .spatial import TriangleIndex
from .transport import sinkhorn_match

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    pass


@dataclass
class StageResult:
    mesh: TriangleMesh
    network: Optional[Mlp] = None
    report: dict = field(default_factory=dict)


def sample_normal_penalty(net: Mlp, R0: TriangleMesh, beta1: float, nearest_patch: np.ndarray) -> float:
    """Mean dot of patch normals at the sampled points before and after mapping.

    Each sampled point uses the normal of its nearest patch on the scaled
    reference mesh, and the normal of the same patch once every vertex has
    been mapped.
    """
    before = patch_normals(R0)[nearest_patch]
    mapped = R0.with_vertices(net.forward(beta1 * R0.vertices).astype(np.float64))
    after = patch_normals(mapped)[nearest_patch]
    dots = np.einsum("ij,ij->i", before, after)
    dots = dots[np.isfinite(dots)]
    return float(dots.mean()) if len(dots) else float("nan")


def global_mapping(
    R0: TriangleMesh,
    cloud,
    beta1: float,
    cfg: TrainConfig,
    penalty_every: int = 50,
    penalty_until: int = 500,
    max_restarts: int = 5,
    loss_csv=None,
) -> StageResult:
    """Deform ``R0`` so its vertices follow ``v -> f(beta1 * v)`` with ``f`` fitted to the cloud.

    ``f`` maps Fibonacci samples of the ``beta1``-scaled sphere (one per
    cloud point) onto the cloud. The matching is recomputed from the
    current outputs every epoch. Every ``penalty_every`` epochs up to
    ``penalty_until`` the normal penalty is checked; a non-positive value
    re-initializes the network.
    """
    t0 = time.perf_counter()
    pts = as_cloud(cloud)
    if beta1 <= 0:
        raise ValueError("beta1 must be positive")
    radius = float(np.linalg.norm(R0.vertices, axis=1).min())
    if np.linalg.norm(pts, axis=1).max() >= radius:
        raise StageError("cloud is not enclosed by the reference mesh; normalize it first")

    samples = fibonacci_sample(beta1 * radius, len(pts))
    scaled = R0.with_vertices(beta1 * R0.vertices)
    _, nearest_patch, _ = TriangleIndex(scaled.triangles()).query(samples)

    penalties: list = []
    rows: list = []
    restarts = 0
    report = None
    net = None
    while True:
        net = mlp_init(derive_seed(cfg.seed, 1, restarts))
        state = {"warm": None}

        def refresh(outputs, epoch):
            iters = cfg.sinkhorn_iterations if state["warm"] is None else cfg.sinkhorn_refresh_iterations
            corr, state["warm"] = sinkhorn_match(
                outputs, pts, cfg.sinkhorn_epsilon, iters, cfg.sinkhorn_tolerance, warm_start=state["warm"]
            )
            return pts[corr]

        def check(epoch, model, loss):
            pen = None
            if (epoch + 1) % penalty_every == 0 and epoch < penalty_until:
                pen = sample_normal_penalty(model, R0, beta1, nearest_patch)
                penalties.append((restarts, epoch + 1, pen))
            rows.append((restarts, epoch + 1, loss, "" if pen is None else pen))
            if pen is not None and not pen > 0:
                raise RestartRequested(f"normal penalty {pen:.3f} at epoch {epoch + 1}")

        try:
            report = mlp_train(net, samples, pts, cfg, refresh=refresh, callback=check)
            break
        except (RestartRequested, TrainingDiverged) as exc:
            restarts += 1
            log.info("global mapping restart %d: %s", restarts, exc)
            if restarts > max_restarts:
                raise StageError(f"global mapping failed after {max_restarts} restarts: {exc}") from exc

    if loss_csv is not None:
        with open(loss_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["restart", "epoch", "loss", "penalty"])
            w.writerows(rows)

    R1 = R0.with_vertices(net.forward(beta1 * R0.vertices).astype(np.float64))
    return StageResult(
        mesh=R1,
        network=net,
        report={
            "losses": report.losses,
            "final_loss": report.final_loss,
            "restarts": restarts,
            "penalties": penalties,
            "sample_count": len(samples),
            "wall_time": time.perf_counter() - t0,
        },
    )
