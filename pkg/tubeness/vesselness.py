"""
vesselness.py - Frangi vesselness per voxel, fused over a range of scales.

Bright tubes need l2, l3 < 0; dark tubes (hypointense on T1) need l2, l3 > 0.
The sensitivity constant c is in the native intensity units of the volume.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import List

# Import external packages
import numpy as np

# Import functions from local modules
from tubeness.errors import ParameterError
from tubeness.hessian import gaussian_second_derivatives, hessian_eigenvalues
from tubeness.volume import Mask3D, Volume3D, require_same_grid
from utils.utils_logger import logger

POLARITIES = ("bright", "dark")

#####################################
# Domain Types
#####################################


@dataclass(frozen=True)
class FilterParams:
    """Vesselness configuration. Scales are in mm; beta_f is the R_B sensitivity."""

    s_min: float = 1.4
    s_max: float = 3.2
    s_step: float = 0.2
    alpha: float = 0.5
    beta_f: float = 0.5
    c: float = 500.0
    polarity: str = "bright"
    threshold: float = 0.35

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not (0 < self.s_min <= self.s_max and math.isfinite(self.s_max)):
            raise ParameterError(f"need 0 < s_min <= s_max, got s_min={self.s_min}, s_max={self.s_max}")
        if not self.s_step > 0:
            raise ParameterError(f"s_step must be positive, got {self.s_step}")
        for name in ("alpha", "beta_f", "c"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ParameterError(f"{name} must be positive, got {value}")
        if self.polarity not in POLARITIES:
            raise ParameterError(f"polarity must be one of {POLARITIES}, got {self.polarity!r}")
        if not 0 < self.threshold < 1:
            raise ParameterError(f"threshold must lie in (0, 1), got {self.threshold}")

    def with_scales(self, s_min: float, s_max: float) -> "FilterParams":
        return replace(self, s_min=s_min, s_max=s_max)


def scale_set(s_min: float, s_max: float, s_step: float) -> List[float]:
    """s_min, s_min + s_step, ... up to s_max (included when it falls on the lattice)."""
    n = int(math.floor((s_max - s_min) / s_step + 1e-9))
    return [round(s_min + k * s_step, 10) for k in range(n + 1)]


#####################################
# Vesselness
#####################################


def vesselness_from_eigenvalues(
    lam: np.ndarray, alpha: float, beta_f: float, c: float, polarity: str = "bright"
) -> np.ndarray:
    """Frangi measure for eigenvalues ordered by magnitude along the last axis."""
    lam = np.asarray(lam, dtype=np.float64)
    l1, l2, l3 = lam[..., 0], lam[..., 1], lam[..., 2]
    if polarity == "bright":
        valid = (l2 < 0) & (l3 < 0)
    elif polarity == "dark":
        valid = (l2 > 0) & (l3 > 0)
    else:
        raise ParameterError(f"polarity must be one of {POLARITIES}, got {polarity!r}")

    a1, a2, a3 = np.abs(l1), np.abs(l2), np.abs(l3)
    with np.errstate(divide="ignore", invalid="ignore"):
        ra = np.where(valid, a2 / a3, 0.0)
        rb = np.where(valid, a1 / np.sqrt(a2 * a3), 0.0)
    s2 = l1 * l1 + l2 * l2 + l3 * l3

    plate = 1.0 - np.exp(-(ra * ra) / (2.0 * alpha * alpha))
    blob = np.exp(-(rb * rb) / (2.0 * beta_f * beta_f))
    structure = 1.0 - np.exp(-s2 / (2.0 * c * c))
    return np.where(valid, plate * blob * structure, 0.0)


def vesselness_at_scale(vol: Volume3D, scale: float, params: FilterParams) -> Volume3D:
    """Vesselness of every voxel at a single scale (mm)."""
    field = gaussian_second_derivatives(vol, scale)
    lam = hessian_eigenvalues(field)
    response = vesselness_from_eigenvalues(lam, params.alpha, params.beta_f, params.c, params.polarity)
    logger.debug(f"Vesselness at scale {scale} mm: max {response.max():.4f}")
    return Volume3D(response, vol.spacing)


def vesselness_multiscale(vol: Volume3D, params: FilterParams, threads: int = 1) -> Volume3D:
    """Pointwise maximum of vesselness_at_scale over the scale set of params."""
    scales = scale_set(params.s_min, params.s_max, params.s_step)
    logger.info(f"Vesselness ({params.polarity}) over {len(scales)} scales {scales[0]}..{scales[-1]} mm")

    def one(scale: float) -> np.ndarray:
        return vesselness_at_scale(vol, scale, params).data

    if threads > 1 and len(scales) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            responses = list(pool.map(one, scales))
    else:
        responses = [one(s) for s in scales]

    fused = responses[0].copy()
    for response in responses[1:]:
        np.maximum(fused, response, out=fused)
    return Volume3D(fused, vol.spacing)


#####################################
# Thresholding
#####################################


def threshold_response(resp: Volume3D, roi: Mask3D, t: float) -> Mask3D:
    """Voxels with resp > t (strictly) inside the ROI."""
    if not 0 < t < 1:
        raise ParameterError(f"threshold must lie in (0, 1), got {t}")
    require_same_grid(resp, roi, "response and ROI")
    return Mask3D((resp.data > t) & (roi.data == 1), resp.spacing)
