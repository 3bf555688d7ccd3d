"""
volume.py - 3D volumes and masks, their on-disk formats, and isotropic reslicing.

Arrays are stored with shape (nz, ny, nx) so that C order is x-fastest,
the same order as the raw files. Dims and spacing are always reported
in (x, y, z) order.

Voxel i along an axis has its centre at (i + 0.5) * spacing.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import math
import pathlib
from dataclasses import dataclass
from typing import Optional, Tuple

# Import external packages
import nibabel as nib
import numpy as np
from scipy import ndimage

# Import functions from local modules
from tubeness.errors import GridMismatchError, ParameterError, VolumeFormatError
from utils.utils_logger import logger

#####################################
# Constants
#####################################

RAW_SUFFIX = ".f32raw"
META_SUFFIX = ".meta"
RAW_DTYPE = np.dtype("<f4")

# uncompressed scalar datatypes accepted from NIfTI-1 files
NIFTI_DTYPES = {
    np.dtype(np.uint8),
    np.dtype(np.int16),
    np.dtype(np.int32),
    np.dtype(np.float32),
    np.dtype(np.float64),
}

Triple = Tuple[float, float, float]

#####################################
# Domain Types
#####################################


def _check_spacing(spacing) -> Triple:
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3 or not all(math.isfinite(s) and s > 0 for s in spacing):
        raise VolumeFormatError(f"spacing must be three positive finite values, got {spacing}")
    return spacing


@dataclass(frozen=True)
class Volume3D:
    """Scalar field on a regular grid. data has shape (nz, ny, nx), float64."""

    data: np.ndarray
    spacing: Triple

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, order="C")
        if data.ndim != 3 or 0 in data.shape:
            raise VolumeFormatError(f"volume data must be a non-empty 3D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise VolumeFormatError("volume contains NaN or Inf samples")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self) -> Tuple[int, int, int]:
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)

    @property
    def voxel_volume(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz

    def is_isotropic(self, rtol: float = 1e-6) -> bool:
        return bool(np.allclose(self.spacing, self.spacing[0], rtol=rtol, atol=0.0))


@dataclass(frozen=True)
class Mask3D:
    """Binary region on a regular grid. data has shape (nz, ny, nx), uint8 in {0, 1}."""

    data: np.ndarray
    spacing: Triple

    def __post_init__(self):
        raw = np.asarray(self.data)
        if raw.ndim != 3 or 0 in raw.shape:
            raise VolumeFormatError(f"mask data must be a non-empty 3D array, got shape {raw.shape}")
        if raw.dtype != np.bool_ and not np.all((raw == 0) | (raw == 1)):
            raise VolumeFormatError("mask samples must be 0 or 1")
        data = np.array(raw, dtype=np.uint8, order="C")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self) -> Tuple[int, int, int]:
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)

    @property
    def voxel_volume(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz

    def count(self) -> int:
        return int(np.count_nonzero(self.data))


def require_same_grid(a, b, what: str = "grids") -> None:
    """Raise GridMismatchError unless a and b share dims and spacing."""
    if a.data.shape != b.data.shape or not np.allclose(a.spacing, b.spacing, rtol=1e-6, atol=0.0):
        logger.error(f"Grid mismatch between {what}: {a.dims}@{a.spacing} vs {b.dims}@{b.spacing}")
        raise GridMismatchError(
            f"{what} do not share a grid: dims {a.dims} vs {b.dims}, spacing {a.spacing} vs {b.spacing}"
        )


#####################################
# Raw format (.f32raw + .meta sidecar)
#####################################


def _raw_paths(path) -> Tuple[pathlib.Path, pathlib.Path]:
    path = pathlib.Path(path)
    if path.name.endswith(META_SUFFIX):
        path = path.with_name(path.name[: -len(META_SUFFIX)])
    if not path.name.endswith(RAW_SUFFIX):
        path = path.with_name(path.name + RAW_SUFFIX)
    return path, path.with_name(path.name + META_SUFFIX)


def _read_meta(meta_path: pathlib.Path) -> Tuple[Tuple[int, int, int], Triple, str]:
    dims = spacing = None
    kind = "volume"
    for line_no, line in enumerate(meta_path.read_text().splitlines(), start=1):
        fields = line.split()
        if not fields or fields[0].startswith("#"):
            continue
        key, values = fields[0], fields[1:]
        try:
            if key == "dims" and len(values) == 3:
                dims = tuple(int(v) for v in values)
            elif key == "spacing" and len(values) == 3:
                spacing = tuple(float(v) for v in values)
            elif key == "kind" and len(values) == 1 and values[0] in ("volume", "mask"):
                kind = values[0]
            else:
                raise ValueError(line)
        except ValueError:
            raise VolumeFormatError(f"malformed header: {meta_path} line {line_no}: {line!r}") from None
    if dims is None or spacing is None:
        raise VolumeFormatError(f"malformed header: {meta_path} lacks dims or spacing")
    if any(n <= 0 for n in dims):
        raise VolumeFormatError(f"malformed header: non-positive dims {dims} in {meta_path}")
    if not all(math.isfinite(s) and s > 0 for s in spacing):
        raise VolumeFormatError(f"malformed header: non-positive spacing {spacing} in {meta_path}")
    return dims, spacing, kind


def _load_raw(path) -> Tuple[np.ndarray, Triple]:
    raw_path, meta_path = _raw_paths(path)
    dims, spacing, _ = _read_meta(meta_path)
    nx, ny, nz = dims
    expected = nx * ny * nz
    samples = np.fromfile(raw_path, dtype=RAW_DTYPE)
    if samples.size < expected:
        raise VolumeFormatError(f"short data: {raw_path} holds {samples.size} samples, header promises {expected}")
    if samples.size > expected:
        raise VolumeFormatError(f"unexpected trailing data in {raw_path}: {samples.size} samples for {expected}")
    return samples.astype(np.float64).reshape(nz, ny, nx), spacing


def _write_raw(data: np.ndarray, spacing: Triple, path, kind: str) -> pathlib.Path:
    raw_path, meta_path = _raw_paths(path)
    nz, ny, nx = data.shape
    raw_path.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(data, dtype=RAW_DTYPE).tofile(raw_path)
    meta_path.write_text(
        f"dims {nx} {ny} {nz}\n"
        f"spacing {spacing[0]!r} {spacing[1]!r} {spacing[2]!r}\n"
        f"kind {kind}\n"
    )
    logger.debug(f"Wrote {kind} {raw_path} dims=({nx}, {ny}, {nz}) spacing={spacing}")
    return raw_path


#####################################
# NIfTI-1 (read-only)
#####################################


def _load_nifti(path) -> Tuple[np.ndarray, Triple]:
    path = pathlib.Path(path)
    if path.name.endswith(".gz"):
        raise VolumeFormatError(f"compressed NIfTI is not supported: {path}")
    try:
        image = nib.Nifti1Image.from_filename(str(path), mmap=False)
    except Exception as e:
        raise VolumeFormatError(f"malformed header: {path}: {e}") from e
    header = image.header
    if int(header["dim"][0]) != 3:
        raise VolumeFormatError(f"only 3D NIfTI volumes are accepted, {path} has dim[0]={int(header['dim'][0])}")
    dtype = header.get_data_dtype()
    if dtype.newbyteorder("=") not in NIFTI_DTYPES:
        raise VolumeFormatError(f"unsupported on-disk datatype {dtype} in {path}")
    shape = tuple(int(n) for n in header.get_data_shape()[:3])
    if any(n <= 0 for n in shape):
        raise VolumeFormatError(f"malformed header: non-positive dims {shape} in {path}")
    # the loaded header reports vox_offset 0; the array proxy keeps the real offset
    expected_bytes = int(image.dataobj.offset) + int(np.prod(shape)) * dtype.itemsize
    if path.stat().st_size < expected_bytes:
        raise VolumeFormatError(f"short data: {path} is {path.stat().st_size} bytes, header promises {expected_bytes}")
    spacing = tuple(abs(float(z)) for z in header.get_zooms()[:3])
    if not all(math.isfinite(s) and s > 0 for s in spacing):
        raise VolumeFormatError(f"malformed header: non-positive spacing {spacing} in {path}")
    # get_fdata applies scl_slope / scl_inter; nibabel returns (x, y, z)
    try:
        data = np.asarray(image.get_fdata(dtype=np.float64))
    except OSError as e:
        raise VolumeFormatError(f"short data: {path}: {e}") from e
    return np.ascontiguousarray(data.transpose(2, 1, 0)), spacing


#####################################
# Public I/O
#####################################


def detect_format(path) -> str:
    """Guess the on-disk format from the file name."""
    name = pathlib.Path(path).name
    if name.endswith((".nii", ".nii.gz")):
        return "nifti1"
    return "raw-f32"


def _load_array(path, format: Optional[str]) -> Tuple[np.ndarray, Triple]:
    format = format or detect_format(path)
    logger.info(f"Loading {format} data from {path}")
    if format == "raw-f32":
        return _load_raw(path)
    if format == "nifti1":
        return _load_nifti(path)
    raise VolumeFormatError(f"unknown volume format {format!r}")


def load_volume(path, format: Optional[str] = None) -> Volume3D:
    """Load a scalar volume from raw-f32 or NIfTI-1."""
    data, spacing = _load_array(path, format)
    return Volume3D(data, spacing)


def load_mask(path, format: Optional[str] = None) -> Mask3D:
    """Load a mask; any sample above 0.5 is inside."""
    data, spacing = _load_array(path, format)
    if not np.all(np.isfinite(data)):
        raise VolumeFormatError(f"mask {path} contains NaN or Inf samples")
    return Mask3D(data > 0.5, spacing)


def save_volume(vol: Volume3D, path) -> pathlib.Path:
    """Write vol as little-endian float32 plus its text sidecar."""
    try:
        return _write_raw(vol.data, vol.spacing, path, "volume")
    except OSError as e:
        logger.error(f"Could not write volume to {path}: {e}")
        raise


def save_mask(mask: Mask3D, path) -> pathlib.Path:
    """Write mask in the raw container with samples 0.0 / 1.0."""
    try:
        return _write_raw(mask.data, mask.spacing, path, "mask")
    except OSError as e:
        logger.error(f"Could not write mask to {path}: {e}")
        raise


#####################################
# Isotropic reslicing
#####################################


def _reslice_geometry(shape, spacing: Triple, target_spacing: float):
    if not (math.isfinite(target_spacing) and target_spacing > 0):
        raise ParameterError(f"target spacing must be positive, got {target_spacing}")
    # array axes are (z, y, x)
    axis_spacing = spacing[::-1]
    out_shape = tuple(
        max(1, math.ceil(n * s / target_spacing - 1e-9)) for n, s in zip(shape, axis_spacing)
    )
    ratio = np.array([target_spacing / s for s in axis_spacing])
    # output centre (j + 0.5) t sits at source index (j + 0.5) t / s - 0.5
    offset = 0.5 * ratio - 0.5
    return out_shape, ratio, offset


def reslice_isotropic(vol: Volume3D, target_spacing: float = 1.0) -> Volume3D:
    """Trilinear resampling onto a (t, t, t) grid; outside samples clamp to the edge."""
    out_shape, ratio, offset = _reslice_geometry(vol.data.shape, vol.spacing, target_spacing)
    if out_shape == vol.data.shape and np.allclose(ratio, 1.0, rtol=0, atol=0):
        return Volume3D(vol.data, (target_spacing,) * 3)
    data = ndimage.affine_transform(
        vol.data, ratio, offset=offset, output_shape=out_shape, order=1, mode="nearest"
    )
    logger.debug(f"Resliced volume {vol.dims}@{vol.spacing} -> {out_shape[::-1]}@{target_spacing}")
    return Volume3D(data, (target_spacing,) * 3)


def reslice_mask(mask: Mask3D, target_spacing: float = 1.0) -> Mask3D:
    """Nearest-neighbour resampling on the same grid mapping as reslice_isotropic."""
    out_shape, ratio, offset = _reslice_geometry(mask.data.shape, mask.spacing, target_spacing)
    data = ndimage.affine_transform(
        mask.data, ratio, offset=offset, output_shape=out_shape, order=0, mode="nearest"
    )
    return Mask3D(data > 0, (target_spacing,) * 3)
