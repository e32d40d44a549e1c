"""Non-neural human mesh parsing: multi-view label fusion, denoising and sampling."""
from .model import (BUILTIN_LABEL_SPACES, CIHP, SAPIENS_V1, SAPIENS_V2, ConfusionMatrix, ContractError,
                    LabeledCloud, LabelSpace, Mesh, ValidationError, confusion)
from .serialize import WindowPartition, morton_decode, morton_encode, partition
from .sample import SamplePlan, build_plan, covering_radius, fps_exact, fps_windowed
from .render import RenderBuffers, ViewSpec, default_views, provoking_vertices, rasterize
from .align import KeypointSet, correct_orientation
from .fuse import (DbscanParams, accumulate_votes, apply_rules, dbscan, denoise_labels, finalize_labels,
                   upsample_labels)
from .metrics import MetricReport, evaluate
from .pipeline import PipelineConfig, load_config, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "BUILTIN_LABEL_SPACES", "CIHP", "SAPIENS_V1", "SAPIENS_V2", "ConfusionMatrix", "ContractError",
    "LabeledCloud", "LabelSpace", "Mesh", "ValidationError", "confusion",
    "WindowPartition", "morton_decode", "morton_encode", "partition",
    "SamplePlan", "build_plan", "covering_radius", "fps_exact", "fps_windowed",
    "RenderBuffers", "ViewSpec", "default_views", "provoking_vertices", "rasterize",
    "KeypointSet", "correct_orientation",
    "DbscanParams", "accumulate_votes", "apply_rules", "dbscan", "denoise_labels", "finalize_labels",
    "upsample_labels",
    "MetricReport", "evaluate",
    "PipelineConfig", "load_config", "run_pipeline",
]
