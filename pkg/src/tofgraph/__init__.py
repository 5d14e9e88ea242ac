"""Classical cross-frame graph-fusion denoising of time-of-flight raw data."""
__version__ = "0.1.0"

from .imaging import DepthFrame, RawFrame, SensorModel, frames_to_depth, raw2d  # noqa: E402
from .noise import NoiseSpec  # noqa: E402
from .pipeline import GraphConfig, denoise_sequence  # noqa: E402
from .solver import SolverConfig  # noqa: E402

__all__ = ["DepthFrame", "GraphConfig", "NoiseSpec", "RawFrame", "SensorModel", "SolverConfig",
           "__version__", "denoise_sequence", "frames_to_depth", "raw2d"]
