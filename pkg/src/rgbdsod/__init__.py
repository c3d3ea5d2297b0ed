"""RGB-D salient object detection with cross-modal shifted-window transformers."""

from .config import ConfigError, RunConfig, load_config, validate_config
from .model import ABLATION_PRESETS, RGBDSaliencyNet, build_variant, count_parameters

__all__ = [
    "ABLATION_PRESETS",
    "ConfigError",
    "RGBDSaliencyNet",
    "RunConfig",
    "build_variant",
    "count_parameters",
    "load_config",
    "validate_config",
]
__version__ = "0.1.0"
