"""Detection of nonlinearly mixed pixels with Gaussian processes, endmember
extraction under nonlinear mixing, and detect-then-unmix abundance estimation."""

from .detector import calibrate_threshold, compute_statistics, detect_image, roc_curve
from .extraction import iterative_endmember_estimation, mves, vca
from .gp import GPSettings
from .mixing import SceneConfig, generate_scene, library_endmembers, mix_pixel
from .unmix import detect_then_unmix, fcls

__version__ = "0.1.0"

__all__ = [
    "GPSettings",
    "SceneConfig",
    "calibrate_threshold",
    "compute_statistics",
    "detect_image",
    "detect_then_unmix",
    "fcls",
    "generate_scene",
    "iterative_endmember_estimation",
    "library_endmembers",
    "mix_pixel",
    "mves",
    "roc_curve",
    "vca",
]
