"""OFDM/MIMO integrated passive sensing and communication simulator."""

from .config import DETECTION_CAP, ConfigError, SystemConfig
from .channel import Target

__version__ = "0.1.0"

__all__ = ["ConfigError", "DETECTION_CAP", "SystemConfig", "Target", "__version__"]
