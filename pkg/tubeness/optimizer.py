"""
optimizer.py - exhaustive grid search of segmentation parameters against visual ratings.

A grid point is (s_min, s_max, t1, t2). For every case the T1 volume is
filtered for dark tubes and thresholded at t1, the T2 volume for bright
tubes at t2; the masks are fused, gated by length and counted. The
objective is the ordered-logit log-likelihood of the cohort's ratings
given those counts.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import itertools
import math
import pathlib
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

# Import external packages
import numpy as np
import pandas as pd

# Import functions from local modules
from tubeness.components import (
    DEFAULT_MAX_LENGTH_MM,
    DEFAULT_MIN_LENGTH_MM,
    PVSCount,
    count_pvs,
    filter_by_length,
    label_components_3d,
)
from tubeness.errors import CaseError, ParameterError, TubenessError
from tubeness.ologit import OrderedLogitModel, log_likelihood
from tubeness.vesselness import FilterParams, threshold_response, vesselness_multiscale
from tubeness.volume import (
    Mask3D,
    Volume3D,
    load_mask,
    load_volume,
    require_same_grid,
    reslice_isotropic,
    reslice_mask,
)
from utils.utils_logger import logger

#####################################
# Constants
#####################################

PARAM_NAMES = ("s_min", "s_max", "t1", "t2")
FUSION_MODES = ("intersection", "union", "t1", "t2")
COUNT_KINDS = ("slice", "total")
MANIFEST_COLUMNS = ["id", "t1_path", "t2_path", "roi_path", "rating"]

# polarity of PVS on each modality
MODALITY_POLARITY = {"t1": "dark", "t2": "bright"}

#####################################
# Domain Types
#####################################


@dataclass(frozen=True)
class Case:
    """One rated subject on a shared 1 mm grid; either modality may be missing."""

    id: str
    roi: Mask3D
    rating: int
    t1: Optional[Volume3D] = None
    t2: Optional[Volume3D] = None

    def __post_init__(self):
        if self.t1 is None and self.t2 is None:
            raise CaseError(f"case {self.id}: no modality")
        for name in ("t1", "t2"):
            vol = getattr(self, name)
            if vol is not None:
                require_same_grid(vol, self.roi, f"case {self.id} {name} and ROI")

    @property
    def spacing(self) -> Tuple[float, float, float]:
        return self.roi.spacing

    def modalities(self) -> Tuple[str, ...]:
        return tuple(name for name in ("t1", "t2") if getattr(self, name) is not None)


class GridPoint(NamedTuple):
    s_min: float
    s_max: float
    t1: float
    t2: float

    def as_dict(self) -> Dict[str, float]:
        return dict(self._asdict())


def _axis_values(name: str, start: float, stop: float, step: float) -> List[float]:
    if not step > 0:
        raise ParameterError(f"{name} step must be positive, got {step}")
    if start > stop:
        raise ParameterError(f"{name} range is reversed: {start} > {stop}")
    n = int(math.floor((stop - start) / step + 1e-9))
    return [round(start + k * step, 10) for k in range(n + 1)]


@dataclass(frozen=True)
class ParamGrid:
    """(start, stop, step) per parameter; both ends inclusive when they fall on the lattice."""

    s_min: Tuple[float, float, float] = (0.2, 2.0, 0.2)
    s_max: Tuple[float, float, float] = (2.0, 4.0, 0.2)
    t1: Tuple[float, float, float] = (0.90, 0.99, 0.01)
    t2: Tuple[float, float, float] = (0.05, 0.50, 0.05)

    @classmethod
    def single(cls, point: GridPoint) -> "ParamGrid":
        return cls(**{name: (value, value, 1.0) for name, value in point.as_dict().items()})

    def values(self, name: str) -> List[float]:
        if name not in PARAM_NAMES:
            raise ParameterError(f"unknown grid parameter {name!r}; choose from {PARAM_NAMES}")
        return _axis_values(name, *getattr(self, name))

    def points(self) -> List[GridPoint]:
        """Every combination with s_min <= s_max, in lexicographic order."""
        s_min, s_max, t1, t2 = (self.values(name) for name in PARAM_NAMES)
        for name, values in (("s_min", s_min), ("s_max", s_max)):
            if values[0] <= 0:
                raise ParameterError(f"{name} values must be positive")
        for name, values in (("t1", t1), ("t2", t2)):
            if not (0 < values[0] and values[-1] < 1):
                raise ParameterError(f"{name} thresholds must lie in (0, 1)")
        return [GridPoint(*p) for p in itertools.product(s_min, s_max, t1, t2) if p[0] <= p[1]]


@dataclass(frozen=True)
class SegmentationSettings:
    """Everything about segmentation that the grid does not vary."""

    filter: FilterParams = field(default_factory=FilterParams)
    fusion: str = "intersection"
    min_length_mm: float = DEFAULT_MIN_LENGTH_MM
    max_length_mm: float = DEFAULT_MAX_LENGTH_MM
    axis: str = "z"

    def __post_init__(self):
        if self.fusion not in FUSION_MODES:
            raise ParameterError(f"fusion must be one of {FUSION_MODES}, got {self.fusion!r}")


@dataclass(frozen=True)
class SegmentationResult:
    mask: Mask3D
    counts: PVSCount

    @property
    def slice_count(self) -> int:
        return self.counts.slice_count

    @property
    def total_count(self) -> int:
        return self.counts.total_count

    @property
    def total_volume_mm3(self) -> float:
        return self.counts.total_volume_mm3

    def count(self, kind: str) -> int:
        return self.slice_count if kind == "slice" else self.total_count


@dataclass(frozen=True)
class OptimizationResult:
    best: GridPoint
    best_logl: float
    surface: pd.DataFrame
    case_counts: pd.DataFrame
    count_kind: str


#####################################
# Vesselness cache
#####################################


class ResponseCache:
    """Vesselness maps keyed by (case id, modality, s_min, s_max)."""

    def __init__(self):
        self._store: Dict[tuple, Volume3D] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._store)

    def get_or_compute(self, key: tuple, compute: Callable[[], Volume3D]) -> Volume3D:
        with self._lock:
            hit = self._store.get(key)
        if hit is not None:
            return hit
        value = compute()
        with self._lock:
            return self._store.setdefault(key, value)

    def discard_scales(self, s_min: float, s_max: float) -> None:
        with self._lock:
            for key in [k for k in self._store if k[2:] == (s_min, s_max)]:
                del self._store[key]


#####################################
# Segmentation of one case
#####################################


def _response(
    case: Case, modality: str, point: GridPoint, settings: SegmentationSettings,
    cache: Optional[ResponseCache], threads: int,
) -> Volume3D:
    params = replace(settings.filter, polarity=MODALITY_POLARITY[modality]).with_scales(point.s_min, point.s_max)

    def compute() -> Volume3D:
        return vesselness_multiscale(getattr(case, modality), params, threads=threads)

    if cache is None:
        return compute()
    return cache.get_or_compute((case.id, modality, point.s_min, point.s_max), compute)


def _used_modalities(case: Case, settings: SegmentationSettings) -> Tuple[str, ...]:
    if settings.fusion in ("t1", "t2"):
        return tuple(m for m in case.modalities() if m == settings.fusion)
    return case.modalities()


def _fuse(masks: Dict[str, np.ndarray], fusion: str, case_id: str) -> np.ndarray:
    if fusion in ("t1", "t2"):
        if fusion not in masks:
            raise CaseError(f"case {case_id}: fusion mode {fusion} needs a {fusion.upper()} volume")
        return masks[fusion]
    if len(masks) == 1:
        return next(iter(masks.values()))
    if fusion == "intersection":
        return masks["t1"] & masks["t2"]
    return masks["t1"] | masks["t2"]


def segment_case(
    case: Case,
    point: GridPoint,
    settings: Optional[SegmentationSettings] = None,
    cache: Optional[ResponseCache] = None,
    threads: int = 1,
) -> SegmentationResult:
    """Filter, threshold, fuse, gate by length and count one case at one grid point."""
    settings = settings or SegmentationSettings()
    if case.roi.count() == 0:
        logger.error(f"Case {case.id} has an empty ROI")
        raise CaseError(f"case {case.id}: empty ROI")

    thresholds = {"t1": point.t1, "t2": point.t2}
    masks = {}
    for modality in _used_modalities(case, settings):
        response = _response(case, modality, point, settings, cache, threads)
        masks[modality] = threshold_response(response, case.roi, thresholds[modality]).data.astype(bool)

    fused = Mask3D(_fuse(masks, settings.fusion, case.id), case.spacing)
    components = filter_by_length(label_components_3d(fused), settings.min_length_mm, settings.max_length_mm)
    gated = Mask3D(components.label_map > 0, case.spacing)
    counts = count_pvs(components, case.roi, settings.axis)
    logger.debug(f"Case {case.id} at {tuple(point)}: {counts}")
    return SegmentationResult(gated, counts)


#####################################
# Objective and grid search
#####################################


def _check_count_kind(count_kind: str) -> None:
    if count_kind not in COUNT_KINDS:
        raise ParameterError(f"count_kind must be one of {COUNT_KINDS}, got {count_kind!r}")


def _check_ratings(cases: Sequence[Case], model: OrderedLogitModel) -> None:
    for case in cases:
        if not 0 <= case.rating < model.m:
            logger.error(f"Case {case.id} rating {case.rating} is outside the model's {model.m} classes")
            raise CaseError(f"case {case.id}: rating {case.rating} outside [0, {model.m})")


def _case_counts(
    cases: Sequence[Case], point: GridPoint, settings: SegmentationSettings,
    cache: Optional[ResponseCache], threads: int,
) -> List[SegmentationResult]:
    results = []
    for case in cases:
        try:
            results.append(segment_case(case, point, settings, cache, threads))
        except CaseError:
            raise
        except TubenessError as e:
            logger.error(f"Case {case.id} failed at {tuple(point)}: {e}")
            raise CaseError(f"case {case.id}: {e}") from e
    return results


def objective(
    cases: Sequence[Case],
    model: OrderedLogitModel,
    params: GridPoint,
    count_kind: str = "slice",
    settings: Optional[SegmentationSettings] = None,
    cache: Optional[ResponseCache] = None,
    threads: int = 1,
) -> float:
    """Cohort log-likelihood sum_i log P(y = rating_i | count_i) at one grid point."""
    _check_count_kind(count_kind)
    _check_ratings(cases, model)
    settings = settings or SegmentationSettings()
    results = _case_counts(cases, params, settings, cache, threads)
    return log_likelihood(model, [(r.count(count_kind), c.rating) for r, c in zip(results, cases)])


def grid_search(
    cases: Sequence[Case],
    model: OrderedLogitModel,
    grid: ParamGrid,
    count_kind: str = "slice",
    settings: Optional[SegmentationSettings] = None,
    threads: int = 1,
    use_cache: bool = True,
) -> OptimizationResult:
    """
    Evaluate the objective at every grid point and return the best one.

    Points are grouped by (s_min, s_max); each group's vesselness maps are
    computed once and reused across the threshold sweep, then dropped.
    Ties go to the lexicographically smallest point.
    """
    _check_count_kind(count_kind)
    if not cases:
        raise ParameterError("grid search needs at least one case")
    _check_ratings(cases, model)
    settings = settings or SegmentationSettings()
    points = grid.points()
    if not points:
        logger.error("Every grid point has s_min > s_max")
        raise ParameterError("empty effective grid: every point has s_min > s_max")
    logger.info(f"Grid search over {len(points)} points, {len(cases)} cases, {count_kind} counts")

    cache = ResponseCache() if use_cache else None
    logls: List[float] = []
    for (s_min, s_max), group in itertools.groupby(points, key=lambda p: (p.s_min, p.s_max)):
        group = list(group)
        if cache is not None:
            # single writer: fill the group's maps before the threshold sweep reads them
            for case in cases:
                for modality in _used_modalities(case, settings):
                    _response(case, modality, group[0], settings, cache, threads)

        def evaluate(point: GridPoint) -> float:
            return objective(cases, model, point, count_kind, settings, cache, 1)

        if threads > 1 and len(group) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                group_logls = list(pool.map(evaluate, group))
        else:
            group_logls = [evaluate(p) for p in group]
        logls.extend(group_logls)
        logger.debug(f"Scales ({s_min}, {s_max}): best LogL {max(group_logls):.4f} over {len(group)} points")
        if cache is not None:
            cache.discard_scales(s_min, s_max)

    best_index = int(np.argmax(logls))
    best = points[best_index]
    surface = pd.DataFrame([p.as_dict() for p in points], columns=list(PARAM_NAMES))
    surface["logl"] = logls

    results = _case_counts(cases, best, settings, None, threads)
    case_counts = pd.DataFrame(
        {
            "id": [c.id for c in cases],
            "rating": [c.rating for c in cases],
            "slice_count": [r.slice_count for r in results],
            "total_count": [r.total_count for r in results],
            "total_volume_mm3": [r.total_volume_mm3 for r in results],
        }
    )
    logger.info(f"Best point {tuple(best)} with LogL {logls[best_index]:.4f}")
    return OptimizationResult(best, float(logls[best_index]), surface, case_counts, count_kind)


#####################################
# Surfaces
#####################################

SURFACE_PAIRS = tuple(itertools.combinations(PARAM_NAMES, 2))


def surface_slice(result: OptimizationResult, axes: Tuple[str, str]) -> pd.DataFrame:
    """LogL over two parameters with the other two held at their best values."""
    a, b = axes
    unknown = [name for name in axes if name not in PARAM_NAMES]
    if unknown or a == b:
        raise ParameterError(f"surface axes must be two distinct names from {PARAM_NAMES}, got {axes}")
    fixed = [name for name in PARAM_NAMES if name not in axes]
    rows = result.surface
    for name in fixed:
        rows = rows[rows[name] == getattr(result.best, name)]
    return rows[[a, b, "logl"]].sort_values([a, b]).reset_index(drop=True)


def export_surface(result: OptimizationResult, axes: Tuple[str, str], path) -> pathlib.Path:
    """Write the two-parameter LogL slice as CSV with header `<a>,<b>,logl`."""
    table = surface_slice(result, axes)
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False, float_format="%.10g")
    logger.info(f"Wrote {len(table)}-point surface {axes[0]} x {axes[1]} to {path}")
    return path


def export_all_surfaces(result: OptimizationResult, folder) -> List[pathlib.Path]:
    folder = pathlib.Path(folder)
    return [export_surface(result, pair, folder / f"surface_{pair[0]}_{pair[1]}.csv") for pair in SURFACE_PAIRS]


#####################################
# Cohort manifest
#####################################


def _resolve(base: pathlib.Path, value: str) -> Optional[pathlib.Path]:
    value = value.strip()
    if not value:
        return None
    path = pathlib.Path(value)
    return path if path.is_absolute() else base / path


def _load_case(row: pd.Series, base: pathlib.Path, target_spacing: float) -> Case:
    t1_path = _resolve(base, row["t1_path"])
    t2_path = _resolve(base, row["t2_path"])
    roi_path = _resolve(base, row["roi_path"])
    if roi_path is None:
        raise CaseError(f"case {row['id']}: no ROI path")
    try:
        rating = int(row["rating"])
    except ValueError:
        raise CaseError(f"case {row['id']}: rating {row['rating']!r} is not an integer") from None
    t1 = reslice_isotropic(load_volume(t1_path), target_spacing) if t1_path else None
    t2 = reslice_isotropic(load_volume(t2_path), target_spacing) if t2_path else None
    roi = reslice_mask(load_mask(roi_path), target_spacing)
    return Case(id=row["id"], roi=roi, rating=rating, t1=t1, t2=t2)


def load_manifest(path, target_spacing: float = 1.0) -> List[Case]:
    """Read `id,t1_path,t2_path,roi_path,rating`; paths are relative to the manifest."""
    path = pathlib.Path(path)
    table = pd.read_csv(path, dtype=str, keep_default_na=False)
    missing = [c for c in MANIFEST_COLUMNS if c not in table.columns]
    if missing:
        logger.error(f"Manifest {path} lacks columns {missing}")
        raise CaseError(f"manifest {path} lacks columns {missing}")
    cases = []
    for _, row in table.iterrows():
        try:
            cases.append(_load_case(row, path.parent, target_spacing))
        except CaseError:
            raise
        except (TubenessError, OSError) as e:
            logger.error(f"Could not load case {row['id']}: {e}")
            raise CaseError(f"case {row['id']}: {e}") from e
    logger.info(f"Loaded {len(cases)} cases from {path}")
    return cases
