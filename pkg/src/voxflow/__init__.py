"""Voxel-grid scene flow estimation by test-time optimization."""

__version__ = "0.1.0"

from .config import RunConfig, load_config
from .errors import VoxflowError
from .flow_grid import FlowGrid, new_grid, query_flow
from .geometry import PointCloud, load_cloud, load_manifest, save_cloud
from .pipeline import estimate, estimate_from_clouds, evaluate

__all__ = [
    "__version__", "RunConfig", "load_config", "VoxflowError", "FlowGrid", "new_grid",
    "query_flow", "PointCloud", "load_cloud", "load_manifest", "save_cloud",
    "estimate", "estimate_from_clouds", "evaluate",
]
