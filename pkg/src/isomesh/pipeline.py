"""End-to-end run: normalize the cloud, three mapping stages, map back to input units."""

from __future__ import annotations

import json
import logging
import platform
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from .coarse import coarse_mapping
from .config import PipelineConfig
from .fileio import save_mesh
from .fine import auto_tau_e, fine_mapping
from .geometry import TriangleMesh, as_cloud, build_icosphere, partition_coarse, select_anchors
from .global_mapping import global_mapping

log = logging.getLogger(__name__)

__version__ = "0.1.0"

STAGE_FILES = {"global": "R1.obj", "coarse": "R2.obj", "fine": "R3.obj"}


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage} stage failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class Normalization:
    """``normalized = (x - center) * scale``."""

    center: np.ndarray
    scale: float

    def apply(self, points) -> np.ndarray:
        return (as_cloud(points) - self.center) * self.scale

    def invert(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) / self.scale + self.center

    def invert_mesh(self, mesh: TriangleMesh) -> TriangleMesh:
        return mesh.with_vertices(self.invert(mesh.vertices))

    def to_dict(self) -> dict:
        return {"center": [float(c) for c in self.center], "scale": float(self.scale)}


def normalize_cloud(cloud, radius: float = 1.0, fill: float = 0.9) -> Normalization:
    """Centroid to the origin, uniform scale so the farthest point sits at ``fill * radius``."""
    pts = as_cloud(cloud)
    center = pts.mean(axis=0)
    far = float(np.linalg.norm(pts - center, axis=1).max())
    if far == 0.0:
        raise ValueError("cloud has zero extent")
    return Normalization(center, fill * radius / far)


@dataclass
class PipelineResult:
    reference: TriangleMesh
    meshes: dict  # stage name -> mesh in input units
    normalization: Normalization
    report: dict = field(default_factory=dict)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def write_report(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(report), fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_pipeline(
    cloud,
    config: PipelineConfig,
    out_dir=None,
    threads: int = 1,
) -> PipelineResult:
    """Fit the reference sphere to ``cloud`` through the global, coarse and fine stages.

    When ``out_dir`` is given, each stage mesh is written as soon as it
    exists together with ``report.json``; a failing stage leaves the
    earlier artifacts in place and records the error in the report.
    Raises :class:`PipelineError`.
    """
    pts = as_cloud(cloud)
    if len(pts) < 4:
        raise ValueError("cloud needs at least 4 points")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    norm = normalize_cloud(pts, 1.0, config.fill)
    local = norm.apply(pts)
    tau_e = auto_tau_e(local) if config.tau_e == "auto" else float(config.tau_e) * norm.scale

    report: dict = {
        "config": config.to_dict(),
        "config_hash": config.digest(),
        "versions": {
            "isomesh": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "normalization": norm.to_dict(),
        "n_points": len(pts),
        "tau_e_normalized": tau_e,
        "threads": threads,
        "stages": {},
        "status": "running",
    }

    if out is not None:
        write_report(norm.to_dict(), out / "normalization.json")

    R0 = build_icosphere(config.reference_frequency, 1.0)
    meshes: dict = {}
    t_start = time.perf_counter()

    def finish(stage: str, result, mesh_local: TriangleMesh):
        meshes[stage] = norm.invert_mesh(mesh_local)
        report["stages"][stage] = result.report
        if out is not None:
            save_mesh(meshes[stage], out / STAGE_FILES[stage])
            write_report(report, out / "report.json")

    def stage_cfg(train):
        return replace(train, seed=config.seed)

    stage = "global"
    try:
        g = global_mapping(
            R0,
            local,
            config.beta1,
            stage_cfg(config.global_train),
            penalty_every=config.penalty_every,
            penalty_until=config.penalty_until,
            max_restarts=config.max_restarts,
            loss_csv=None if out is None else out / "global_loss.csv",
        )
        finish(stage, g, g.mesh)

        stage = "coarse"
        regions = partition_coarse(R0, select_anchors(R0), config.tau_a)
        c = coarse_mapping(
            g.mesh, regions, local, config.beta2, stage_cfg(config.coarse_train), threads, config.lloyd_iterations
        )
        finish(stage, c, c.mesh)

        stage = "fine"
        f = fine_mapping(
            R0,
            c.mesh,
            local,
            config.beta3,
            config.alpha,
            stage_cfg(config.fine_train),
            tau_e=tau_e,
            n1=config.n1,
            threads=threads,
            lloyd_iterations=config.lloyd_iterations,
        )
        report["N_F"] = f.report["n_regions"]
        report["block_count"] = f.report["block_count"]
        finish(stage, f, f.mesh)
    except Exception as exc:
        report["status"] = "failed"
        report["error"] = {"stage": stage, "type": type(exc).__name__, "message": str(exc)}
        if out is not None:
            write_report(report, out / "report.json")
        raise PipelineError(stage, exc) from exc

    report["status"] = "ok"
    report["wall_time"] = time.perf_counter() - t_start
    if out is not None:
        write_report(report, out / "report.json")
    return PipelineResult(R0, meshes, norm, report)
