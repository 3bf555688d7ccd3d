"""
phantom.py - synthetic volumes with straight Gaussian tubes of known geometry.

Each tube is a segment with a Gaussian cross-section of standard deviation
radius_mm. Its ground truth is every voxel whose profile exceeds one half,
i.e. a capsule of half-width radius_mm * sqrt(2 ln 2) around the segment.
Placement keeps truths of different tubes apart by more than one voxel
diagonal, so under 26-connectivity each tube is exactly one component.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import math
import pathlib
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

# Import external packages
import numpy as np
import pandas as pd
from scipy import ndimage
from scipy.spatial.distance import cdist

# Import functions from local modules
from tubeness.components import ComponentSet, label_components_3d
from tubeness.errors import ParameterError, PlacementError
from tubeness.ologit import RatingScale
from tubeness.volume import Mask3D, Volume3D, save_mask, save_volume
from utils.utils_logger import logger

#####################################
# Constants
#####################################

MAX_PLACEMENT_FAILURES = 10_000
HALF_MAX_FACTOR = math.sqrt(2.0 * math.log(2.0))
# profile is computed out to this many radii from the centreline
PROFILE_REACH = 5.0
ROI_EROSION_VOXELS = 2
# sampling step along centrelines for separation checks (mm)
SEPARATION_STEP_MM = 0.1

TRUTH_COLUMNS = ["tube_id", "cx", "cy", "cz", "dx", "dy", "dz", "radius_mm", "length_mm"]

#####################################
# Domain Types
#####################################


@dataclass(frozen=True)
class Tube:
    """Straight tube; center and direction in (x, y, z) mm, direction of unit length."""

    center: Tuple[float, float, float]
    direction: Tuple[float, float, float]
    radius_mm: float
    length_mm: float

    @property
    def half_width(self) -> float:
        return self.radius_mm * HALF_MAX_FACTOR

    def endpoints(self) -> Tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.center, dtype=np.float64)
        d = np.asarray(self.direction, dtype=np.float64)
        half = 0.5 * self.length_mm * d
        return c - half, c + half

    def centreline(self, step: float = SEPARATION_STEP_MM) -> np.ndarray:
        a, b = self.endpoints()
        n = max(2, int(math.ceil(self.length_mm / step)) + 1)
        return a + np.linspace(0.0, 1.0, n)[:, None] * (b - a)


@dataclass(frozen=True)
class PhantomSpec:
    """
    dims and spacing are (x, y, z). With `tubes` set, n_tubes and the
    random-placement ranges are ignored.
    """

    dims: Tuple[int, int, int] = (64, 64, 64)
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    n_tubes: int = 0
    radius_range: Tuple[float, float] = (0.8, 1.5)
    length_range: Tuple[float, float] = (5.0, 20.0)
    contrast: float = 3000.0
    background: float = 0.0
    polarity: str = "bright"
    noise_sigma: float = 0.0
    seed: int = 7
    min_separation_mm: float = 4.0
    tubes: Optional[Tuple[Tube, ...]] = None

    def __post_init__(self):
        if len(self.dims) != 3 or any(int(n) < 1 for n in self.dims):
            raise ParameterError(f"dims must be three positive sizes, got {self.dims}")
        if len(self.spacing) != 3 or any(not s > 0 for s in self.spacing):
            raise ParameterError(f"spacing must be three positive values, got {self.spacing}")
        if self.n_tubes < 0:
            raise ParameterError(f"n_tubes must be >= 0, got {self.n_tubes}")
        lo, hi = self.radius_range
        if not 0 < lo <= hi:
            raise ParameterError(f"radius range must satisfy 0 < low <= high, got {self.radius_range}")
        lo, hi = self.length_range
        if not 0 < lo <= hi:
            raise ParameterError(f"length range must satisfy 0 < low <= high, got {self.length_range}")
        if self.polarity not in ("bright", "dark"):
            raise ParameterError(f"polarity must be 'bright' or 'dark', got {self.polarity!r}")
        if self.noise_sigma < 0:
            raise ParameterError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not self.contrast > 0:
            raise ParameterError(f"contrast must be positive, got {self.contrast}")

    @property
    def extent_mm(self) -> np.ndarray:
        return np.asarray(self.dims, dtype=np.float64) * np.asarray(self.spacing, dtype=np.float64)


@dataclass(frozen=True)
class PhantomResult:
    volume: Volume3D
    roi: Mask3D
    truth: ComponentSet
    true_count: int
    tubes: Tuple[Tube, ...] = field(default_factory=tuple)

    def truth_mask(self) -> Mask3D:
        return Mask3D(self.truth.label_map > 0, self.volume.spacing)

    def truth_frame(self) -> pd.DataFrame:
        rows = [
            [k, *t.center, *t.direction, t.radius_mm, t.length_mm]
            for k, t in enumerate(self.tubes, start=1)
        ]
        return pd.DataFrame(rows, columns=TRUTH_COLUMNS)

    def save(self, prefix) -> List[pathlib.Path]:
        """Write <prefix>_volume, <prefix>_roi, <prefix>_truth (raw) and <prefix>_truth.csv."""
        prefix = pathlib.Path(prefix)
        written = [
            save_volume(self.volume, f"{prefix}_volume"),
            save_mask(self.roi, f"{prefix}_roi"),
            save_mask(self.truth_mask(), f"{prefix}_truth"),
        ]
        csv_path = prefix.with_name(prefix.name + "_truth.csv")
        self.truth_frame().to_csv(csv_path, index=False, float_format="%.6f")
        written.append(csv_path)
        logger.info(f"Wrote phantom with {self.true_count} tubes to {prefix}_*")
        return written


#####################################
# Placement
#####################################


def _margin(radius: float, spec: PhantomSpec) -> float:
    return 2.0 * radius + 3.0 * max(spec.spacing)


def _required_separation(a: Tube, b: Tube, spec: PhantomSpec) -> float:
    voxel_diagonal = math.sqrt(3.0) * max(spec.spacing)
    return max(spec.min_separation_mm, a.half_width + b.half_width + voxel_diagonal) + SEPARATION_STEP_MM


def _random_tube(spec: PhantomSpec, rng: np.random.Generator) -> Optional[Tube]:
    radius = rng.uniform(*spec.radius_range)
    length = rng.uniform(*spec.length_range)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    reach = _margin(radius, spec) + 0.5 * length * np.abs(direction)
    low, high = reach, spec.extent_mm - reach
    if np.any(low > high):
        return None
    center = rng.uniform(low, high)
    return Tube(tuple(center.tolist()), tuple(direction.tolist()), float(radius), float(length))


def _place_tubes(spec: PhantomSpec, rng: np.random.Generator) -> Tuple[Tube, ...]:
    placed: List[Tube] = []
    lines: List[np.ndarray] = []
    failures = 0
    while len(placed) < spec.n_tubes:
        tube = _random_tube(spec, rng)
        ok = tube is not None
        if ok:
            line = tube.centreline()
            ok = all(
                cdist(line, other).min() >= _required_separation(tube, prev, spec)
                for prev, other in zip(placed, lines)
            )
        if ok:
            placed.append(tube)
            lines.append(line)
            continue
        failures += 1
        if failures >= MAX_PLACEMENT_FAILURES:
            logger.error(f"Placed {len(placed)} of {spec.n_tubes} tubes before giving up")
            raise PlacementError(
                f"unsatisfiable placement: {spec.n_tubes} tubes in {spec.dims} voxels "
                f"after {failures} rejected draws"
            )
    logger.debug(f"Placed {len(placed)} tubes with {failures} rejected draws")
    return tuple(placed)


#####################################
# Rasterization
#####################################


def _voxel_centres(spec: PhantomSpec, box: Tuple[slice, slice, slice]) -> Tuple[np.ndarray, ...]:
    """Broadcastable (z, y, x) arrays of voxel-centre coordinates in mm over box."""
    sx, sy, sz = spec.spacing
    zs, ys, xs = box
    z = (np.arange(zs.start, zs.stop) + 0.5) * sz
    y = (np.arange(ys.start, ys.stop) + 0.5) * sy
    x = (np.arange(xs.start, xs.stop) + 0.5) * sx
    return z[:, None, None], y[None, :, None], x[None, None, :]


def _tube_box(tube: Tube, spec: PhantomSpec) -> Tuple[slice, slice, slice]:
    a, b = tube.endpoints()
    reach = PROFILE_REACH * tube.radius_mm
    lo = np.minimum(a, b) - reach
    hi = np.maximum(a, b) + reach
    spacing = np.asarray(spec.spacing)
    first = np.clip(np.floor(lo / spacing).astype(int), 0, spec.dims)
    last = np.clip(np.ceil(hi / spacing).astype(int) + 1, 0, spec.dims)
    return slice(first[2], last[2]), slice(first[1], last[1]), slice(first[0], last[0])


def tube_profile(tube: Tube, spec: PhantomSpec, box: Tuple[slice, slice, slice]) -> np.ndarray:
    """exp(-d^2 / 2 r^2) with d the distance from each voxel centre in box to the segment."""
    z, y, x = _voxel_centres(spec, box)
    a, b = tube.endpoints()
    axis = b - a
    length_sq = float(np.dot(axis, axis))
    px, py, pz = x - a[0], y - a[1], z - a[2]
    if length_sq > 0:
        t = np.clip((px * axis[0] + py * axis[1] + pz * axis[2]) / length_sq, 0.0, 1.0)
    else:
        t = np.zeros(np.broadcast(px, py, pz).shape)
    dx = px - t * axis[0]
    dy = py - t * axis[1]
    dz = pz - t * axis[2]
    d2 = dx * dx + dy * dy + dz * dz
    return np.exp(-d2 / (2.0 * tube.radius_mm**2))


def interior_roi(spec: PhantomSpec) -> Mask3D:
    """Whole volume eroded by ROI_EROSION_VOXELS (border voxels treated as outside)."""
    nx, ny, nz = spec.dims
    full = np.ones((nz, ny, nx), dtype=bool)
    eroded = ndimage.binary_erosion(
        full, structure=np.ones((3, 3, 3), dtype=bool), iterations=ROI_EROSION_VOXELS, border_value=0
    )
    return Mask3D(eroded, spec.spacing)


#####################################
# Operations
#####################################


def generate_phantom(spec: PhantomSpec) -> PhantomResult:
    """Volume, ROI, truth labels and tube list for spec; identical for identical spec and seed."""
    rng = np.random.default_rng(spec.seed)
    tubes = tuple(spec.tubes) if spec.tubes is not None else _place_tubes(spec, rng)

    nx, ny, nz = spec.dims
    profile = np.zeros((nz, ny, nx), dtype=np.float64)
    truth = np.zeros((nz, ny, nx), dtype=bool)
    for tube in tubes:
        box = _tube_box(tube, spec)
        p = tube_profile(tube, spec, box)
        np.maximum(profile[box], p, out=profile[box])
        truth[box] |= p > 0.5

    sign = 1.0 if spec.polarity == "bright" else -1.0
    data = spec.background + sign * spec.contrast * profile
    if spec.noise_sigma > 0:
        data = data + rng.normal(0.0, spec.noise_sigma, size=data.shape)

    volume = Volume3D(data, spec.spacing)
    components = label_components_3d(Mask3D(truth, spec.spacing))
    if spec.tubes is None and components.count != len(tubes):
        logger.warning(f"Truth has {components.count} components for {len(tubes)} placed tubes")
    logger.info(
        f"Generated phantom {spec.dims} with {len(tubes)} {spec.polarity} tubes "
        f"(noise sigma {spec.noise_sigma}, seed {spec.seed})"
    )
    return PhantomResult(
        volume=volume,
        roi=interior_roi(spec),
        truth=components,
        true_count=components.count,
        tubes=tubes,
    )


def rate_phantom(true_count: int, scale: RatingScale) -> int:
    """Rating class whose count interval contains true_count."""
    return int(scale.classify(int(true_count)))
