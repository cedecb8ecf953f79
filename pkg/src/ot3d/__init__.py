"""Training-free, mesh-free 3D instance segmentation over posed RGB-D streams.

The pipeline lifts per-frame 2D instance detections into 3D, associates
them across views with a visual-spatial tracker, refines the resulting
proposals against the global scene cloud, classifies them through a
pluggable backend, and evaluates with standard AP metrics.
"""

__version__ = "0.1.0"

from .config import PipelineConfig, load_config, preset_config
from .errors import Ot3dError
from .pipeline import RunResult, run_pipeline
from .scene import SceneBundle, load_bundle, save_bundle, subsample_frames

__all__ = [
    "PipelineConfig",
    "RunResult",
    "SceneBundle",
    "Ot3dError",
    "load_bundle",
    "load_config",
    "preset_config",
    "run_pipeline",
    "save_bundle",
    "subsample_frames",
    "__version__",
]
