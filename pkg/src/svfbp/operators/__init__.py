"""Linear operators of the reconstruction chain."""

from .cone import cone_backproject, cone_backproject_adjoint, cone_forward, footprint_scale
from .filters import (
    desk_smoothing,
    diff_s,
    diff_s_adjoint,
    gaussian_kernel,
    gaussian_smooth_s,
    gaussian_smooth_s_adjoint,
)
from .radon import Radon2D, radon_2d, radon_2d_adjoint, radon_operator
from .weights import (
    cosine_weight,
    cosine_weight_map,
    detector_weight,
    detector_weight_map,
    sino_weight,
    sino_weight_map,
)

__all__ = [
    "Radon2D",
    "cone_backproject",
    "cone_backproject_adjoint",
    "cone_forward",
    "cosine_weight",
    "cosine_weight_map",
    "desk_smoothing",
    "detector_weight",
    "detector_weight_map",
    "diff_s",
    "diff_s_adjoint",
    "footprint_scale",
    "gaussian_kernel",
    "gaussian_smooth_s",
    "gaussian_smooth_s_adjoint",
    "radon_2d",
    "radon_2d_adjoint",
    "radon_operator",
    "sino_weight",
    "sino_weight_map",
]
