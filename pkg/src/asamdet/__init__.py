"""Sparse one-stage spatiotemporal action detection on synthetic video, on a small numpy autodiff engine."""

from .config import Config, desk_preset, full_scale_preset
from .decoder import Detector
from .synthdata import CLASSES

__all__ = ["CLASSES", "Config", "Detector", "desk_preset", "full_scale_preset"]
__version__ = "0.1.0"
