"""
components.py - connected components, length gating, slice density, and PVS counts.

Connectivity is 26 in 3D and 8 within a slice. Component ids are assigned
in order of each component's first voxel in x-fastest scan order.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
from dataclasses import dataclass, replace
from typing import Dict, Tuple

# Import external packages
import numpy as np
from scipy import ndimage

# Import functions from local modules
from tubeness.errors import ParameterError
from tubeness.volume import Mask3D, require_same_grid
from utils.utils_logger import logger

# axis name -> array axis of a (nz, ny, nx) volume
AXES = {"z": 0, "y": 1, "x": 2}

STRUCTURE_3D = np.ones((3, 3, 3), dtype=bool)
STRUCTURE_2D = np.ones((3, 3), dtype=bool)

DEFAULT_MIN_LENGTH_MM = 3.0
DEFAULT_MAX_LENGTH_MM = 50.0

#####################################
# Domain Types
#####################################


@dataclass(frozen=True)
class Component:
    """One labelled component. bbox holds half-open index ranges in (x, y, z) order.

    slice_counts maps an axis name to {slice index: voxel count} along that axis.
    """

    id: int
    voxel_count: int
    bbox: Tuple[Tuple[int, int], Tuple[int, int], Tuple[int, int]]
    length_mm: float
    slice_counts: Dict[str, Dict[int, int]]


@dataclass(frozen=True)
class ComponentSet:
    label_map: np.ndarray
    spacing: Tuple[float, float, float]
    components: Tuple[Component, ...]

    @property
    def data(self) -> np.ndarray:
        return self.label_map

    @property
    def dims(self) -> Tuple[int, int, int]:
        nz, ny, nx = self.label_map.shape
        return (nx, ny, nz)

    @property
    def count(self) -> int:
        return len(self.components)

    def labelled_voxels(self) -> int:
        return int(np.count_nonzero(self.label_map))


@dataclass(frozen=True)
class PVSCount:
    slice_count: int
    total_count: int
    total_volume_mm3: float
    selected_slice: int


#####################################
# Labelling helpers
#####################################


def _canonical_order(labels: np.ndarray, n: int) -> np.ndarray:
    """Renumber 1..n by first occurrence in C (x-fastest) scan order."""
    if n == 0:
        return labels
    flat = labels.ravel()
    support = flat[flat > 0]
    ids, first = np.unique(support, return_index=True)
    mapping = np.zeros(int(labels.max()) + 1, dtype=np.int32)
    mapping[ids[np.argsort(first, kind="stable")]] = np.arange(1, ids.size + 1, dtype=np.int32)
    return mapping[labels]


def _describe(label_map: np.ndarray, spacing) -> Tuple[Component, ...]:
    sx, sy, sz = spacing
    counts = np.bincount(label_map.ravel())
    components = []
    for index, box in enumerate(ndimage.find_objects(label_map), start=1):
        if box is None:
            continue
        zs, ys, xs = box
        extent_mm = (
            (xs.stop - xs.start) * sx,
            (ys.stop - ys.start) * sy,
            (zs.stop - zs.start) * sz,
        )
        inside = label_map[box] == index
        starts = (zs.start, ys.start, xs.start)
        slice_counts = {}
        for name, a in AXES.items():
            per_slice = np.count_nonzero(inside, axis=tuple(k for k in range(3) if k != a))
            slice_counts[name] = {starts[a] + k: int(c) for k, c in enumerate(per_slice) if c}
        components.append(
            Component(
                id=index,
                voxel_count=int(counts[index]),
                bbox=((xs.start, xs.stop), (ys.start, ys.stop), (zs.start, zs.stop)),
                length_mm=float(max(extent_mm)),
                slice_counts=slice_counts,
            )
        )
    return tuple(components)


#####################################
# Operations
#####################################


def label_components_3d(mask: Mask3D) -> ComponentSet:
    """26-connected components of mask with deterministic ids."""
    labels, n = ndimage.label(mask.data, structure=STRUCTURE_3D)
    labels = _canonical_order(labels.astype(np.int32, copy=False), n)
    logger.debug(f"Labelled {n} components in {mask.dims}")
    return ComponentSet(labels, mask.spacing, _describe(labels, mask.spacing))


def filter_by_length(
    cs: ComponentSet,
    min_mm: float = DEFAULT_MIN_LENGTH_MM,
    max_mm: float = DEFAULT_MAX_LENGTH_MM,
) -> ComponentSet:
    """Keep components with min_mm <= length_mm <= max_mm and relabel them 1..K."""
    if min_mm > max_mm:
        raise ParameterError(f"length bounds reversed: {min_mm} > {max_mm}")
    kept = [c for c in cs.components if min_mm <= c.length_mm <= max_mm]
    mapping = np.zeros(len(cs.components) + 1, dtype=np.int32)
    for new_id, component in enumerate(kept, start=1):
        mapping[component.id] = new_id
    label_map = mapping[cs.label_map]
    components = tuple(replace(c, id=new_id) for new_id, c in enumerate(kept, start=1))
    logger.debug(
        f"Length gate [{min_mm}, {max_mm}] mm kept {len(kept)} of {len(cs.components)} components"
    )
    return ComponentSet(label_map, cs.spacing, components)


def _axis_index(axis: str) -> int:
    if axis not in AXES:
        raise ParameterError(f"axis must be one of {sorted(AXES)}, got {axis!r}")
    return AXES[axis]


def slice_density(cs: ComponentSet, roi: Mask3D, axis: str = "z") -> np.ndarray:
    """Labelled area / ROI area per slice along axis; slices without ROI have density 0."""
    require_same_grid(cs, roi, "label map and ROI")
    a = _axis_index(axis)
    others = tuple(k for k in range(3) if k != a)
    pvs_area = np.count_nonzero(cs.label_map, axis=others).astype(np.float64)
    roi_area = np.count_nonzero(roi.data, axis=others).astype(np.float64)
    density = np.zeros_like(pvs_area)
    np.divide(pvs_area, roi_area, out=density, where=roi_area > 0)
    return density


def count_pvs(cs: ComponentSet, roi: Mask3D, axis: str = "z") -> PVSCount:
    """Counts the way a rater would: 2D components in the densest slice, 3D components overall."""
    density = slice_density(cs, roi, axis)
    selected = int(np.argmax(density)) if density.size else 0
    slice_count = 0
    if density.size and density[selected] > 0:
        plane = np.take(cs.label_map, selected, axis=_axis_index(axis)) > 0
        _, slice_count = ndimage.label(plane, structure=STRUCTURE_2D)
    sx, sy, sz = cs.spacing
    result = PVSCount(
        slice_count=int(slice_count),
        total_count=cs.count,
        total_volume_mm3=cs.labelled_voxels() * (sx * sy * sz),
        selected_slice=selected,
    )
    logger.debug(f"PVS count: {result}")
    return result
