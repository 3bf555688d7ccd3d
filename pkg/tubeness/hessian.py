"""
hessian.py - scale-space Hessian and 3x3 symmetric eigenvalues.

Second derivatives are taken with separable Gaussian-derivative kernels
(truncated at ceil(4 sigma) voxels, mirror boundaries) and multiplied by
scale**2 so that responses at different scales can be compared.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import math
from dataclasses import dataclass
from typing import NamedTuple, Tuple

# Import external packages
import numpy as np
from scipy import ndimage

# Import functions from local modules
from tubeness.errors import ParameterError, SpacingError
from tubeness.volume import Volume3D
from utils.utils_logger import logger

# array axes of a Volume3D
Z_AXIS, Y_AXIS, X_AXIS = 0, 1, 2

# 1 - |r| below this is re-solved with LAPACK
DEGENERATE_DISCRIMINANT = 1e-8

#####################################
# Domain Types
#####################################


@dataclass(frozen=True)
class HessianField:
    """Six unique Hessian entries per voxel at one scale (mm)."""

    spacing: Tuple[float, float, float]
    scale: float
    xx: np.ndarray
    yy: np.ndarray
    zz: np.ndarray
    xy: np.ndarray
    xz: np.ndarray
    yz: np.ndarray

    def entries(self) -> Tuple[np.ndarray, ...]:
        return (self.xx, self.yy, self.zz, self.xy, self.xz, self.yz)


class EigenTriple(NamedTuple):
    """Eigenvalues ordered |l1| <= |l2| <= |l3|."""

    l1: float
    l2: float
    l3: float


#####################################
# Gaussian derivative kernels
#####################################


def gaussian_kernels(sigma: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Return (smooth, first, second) 1D kernels for convolution at sigma voxels.

    smooth sums to 1; first is exact on linear ramps; second sums to 0 and
    is exact on quadratics, which also holds at sub-voxel sigma.
    """
    radius = max(1, math.ceil(4.0 * sigma))
    j = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-0.5 * (j / sigma) ** 2)
    g /= g.sum()

    d1 = -j / sigma**2 * g
    d1 /= -np.sum(j * d1)

    d2 = (j**2 / sigma**4 - 1.0 / sigma**2) * g
    d2 -= g * d2.sum()
    d2 *= 2.0 / np.sum(j**2 * d2)
    return g, d1, d2


def _pass(data: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    return ndimage.convolve1d(data, kernel, axis=axis, mode="mirror")


#####################################
# Hessian
#####################################


def gaussian_second_derivatives(vol: Volume3D, scale: float) -> HessianField:
    """Scale-normalised Hessian of vol at Gaussian standard deviation `scale` mm."""
    if not (math.isfinite(scale) and scale > 0):
        raise ParameterError(f"scale must be positive, got {scale}")
    if not vol.is_isotropic():
        logger.error(f"Hessian requested on anisotropic spacing {vol.spacing}")
        raise SpacingError(f"filtering needs isotropic voxels, got spacing {vol.spacing}; reslice first")

    sigma = scale / vol.spacing[0]
    g, d1, d2 = gaussian_kernels(sigma)
    data = vol.data

    smooth_z = _pass(data, g, Z_AXIS)
    first_z = _pass(data, d1, Z_AXIS)
    second_z = _pass(data, d2, Z_AXIS)

    smooth_zy = _pass(smooth_z, g, Y_AXIS)
    xx = _pass(smooth_zy, d2, X_AXIS)
    yy = _pass(_pass(smooth_z, d2, Y_AXIS), g, X_AXIS)
    xy = _pass(_pass(smooth_z, d1, Y_AXIS), d1, X_AXIS)
    zz = _pass(_pass(second_z, g, Y_AXIS), g, X_AXIS)
    xz = _pass(_pass(first_z, g, Y_AXIS), d1, X_AXIS)
    yz = _pass(_pass(first_z, d1, Y_AXIS), g, X_AXIS)

    # derivative in mm is voxel derivative / h**2; times scale**2 gives sigma**2
    norm = sigma**2
    logger.debug(f"Hessian at scale {scale} mm (sigma {sigma:.3f} voxels, kernel {g.size} taps)")
    return HessianField(
        vol.spacing, float(scale),
        xx * norm, yy * norm, zz * norm, xy * norm, xz * norm, yz * norm,
    )


#####################################
# Eigenvalues
#####################################


def order_by_magnitude(lam: np.ndarray) -> np.ndarray:
    """Sort the last axis by |lambda|; on magnitude ties the more negative goes last."""
    order = np.lexsort((-lam, np.abs(lam)), axis=-1)
    return np.take_along_axis(lam, order, axis=-1)


def symmetric_eigenvalues(xx, yy, zz, xy, xz, yz) -> np.ndarray:
    """
    Eigenvalues of many symmetric 3x3 matrices given by their six entries.

    Uses the trigonometric closed form; matrices whose discriminant is
    numerically degenerate (near-repeated roots) go through numpy.linalg.eigvalsh.
    Returns an array of shape entries.shape + (3,) ordered by magnitude.
    """
    xx, yy, zz, xy, xz, yz = (np.asarray(a, dtype=np.float64) for a in (xx, yy, zz, xy, xz, yz))
    shape = np.broadcast(xx, yy, zz, xy, xz, yz).shape
    xx, yy, zz, xy, xz, yz = (np.broadcast_to(a, shape).ravel() for a in (xx, yy, zz, xy, xz, yz))

    lam = np.empty(xx.shape + (3,), dtype=np.float64)
    p1 = xy * xy + xz * xz + yz * yz
    q = (xx + yy + zz) / 3.0
    p2 = (xx - q) ** 2 + (yy - q) ** 2 + (zz - q) ** 2 + 2.0 * p1
    p = np.sqrt(p2 / 6.0)

    diagonal = p1 == 0.0
    lam[diagonal] = np.stack((xx[diagonal], yy[diagonal], zz[diagonal]), axis=-1)

    full = ~diagonal
    with np.errstate(divide="ignore", invalid="ignore"):
        pf = p[full]
        qf = q[full]
        b11 = (xx[full] - qf) / pf
        b22 = (yy[full] - qf) / pf
        b33 = (zz[full] - qf) / pf
        b12 = xy[full] / pf
        b13 = xz[full] / pf
        b23 = yz[full] / pf
    det_b = (
        b11 * (b22 * b33 - b23 * b23)
        - b12 * (b12 * b33 - b23 * b13)
        + b13 * (b12 * b23 - b22 * b13)
    )
    r = np.clip(det_b / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    e1 = qf + 2.0 * pf * np.cos(phi)
    e3 = qf + 2.0 * pf * np.cos(phi + 2.0 * np.pi / 3.0)
    e2 = 3.0 * qf - e1 - e3
    lam[full] = np.stack((e1, e2, e3), axis=-1)

    degenerate = np.zeros_like(diagonal)
    degenerate[full] = (1.0 - np.abs(r)) < DEGENERATE_DISCRIMINANT
    if np.any(degenerate):
        idx = np.flatnonzero(degenerate)
        mats = np.empty((idx.size, 3, 3))
        mats[:, 0, 0], mats[:, 1, 1], mats[:, 2, 2] = xx[idx], yy[idx], zz[idx]
        mats[:, 0, 1] = mats[:, 1, 0] = xy[idx]
        mats[:, 0, 2] = mats[:, 2, 0] = xz[idx]
        mats[:, 1, 2] = mats[:, 2, 1] = yz[idx]
        lam[idx] = np.linalg.eigvalsh(mats)

    return order_by_magnitude(lam).reshape(shape + (3,))


def eigen_symmetric_3x3(h) -> EigenTriple:
    """
    Eigenvalues of one symmetric 3x3 matrix.

    h is either the six entries (xx, yy, zz, xy, xz, yz) or a 3x3 array.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.shape == (3, 3):
        entries = (h[0, 0], h[1, 1], h[2, 2], h[0, 1], h[0, 2], h[1, 2])
    elif h.shape == (6,):
        entries = tuple(h)
    else:
        raise ParameterError(f"expected 6 entries or a 3x3 matrix, got shape {h.shape}")
    if not np.all(np.isfinite(entries)):
        raise ParameterError("matrix entries must be finite")
    lam = symmetric_eigenvalues(*entries)
    return EigenTriple(float(lam[0]), float(lam[1]), float(lam[2]))


def hessian_eigenvalues(field: HessianField) -> np.ndarray:
    """Per-voxel eigenvalues of a HessianField, shape (nz, ny, nx, 3)."""
    return symmetric_eigenvalues(*field.entries())
