"""Template-deformation surface reconstruction producing meshes with one shared connectivity."""

from .config import PipelineConfig, desk_profile, full_profile
from .fixtures import fixture_truth, make_fixture
from .geometry import (
    LocalRegion,
    TriangleMesh,
    build_icosphere,
    fibonacci_sample,
    lloyd_sample,
    partition_coarse,
    select_anchors,
    vertex_normals,
)
from .metrics import NoiseSpec, add_noise, pm_distance, pm_report, point_triangle_distance
from .nn import Mlp, TrainConfig, mlp_forward, mlp_init, mlp_train, normal_penalty
from .pipeline import Normalization, PipelineError, PipelineResult, __version__, run_pipeline
from .transport import TransportPlan, extract_correspondence, sinkhorn_plan

__all__ = [
    "LocalRegion",
    "Mlp",
    "NoiseSpec",
    "Normalization",
    "PipelineConfig",
    "PipelineError",
    "PipelineResult",
    "TrainConfig",
    "TransportPlan",
    "TriangleMesh",
    "__version__",
    "add_noise",
    "build_icosphere",
    "desk_profile",
    "extract_correspondence",
    "fibonacci_sample",
    "fixture_truth",
    "full_profile",
    "lloyd_sample",
    "make_fixture",
    "mlp_forward",
    "mlp_init",
    "mlp_train",
    "normal_penalty",
    "partition_coarse",
    "pm_distance",
    "pm_report",
    "point_triangle_distance",
    "run_pipeline",
    "select_anchors",
    "sinkhorn_plan",
    "vertex_normals",
]
