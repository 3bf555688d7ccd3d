"""
test_optimizer.py - per-case segmentation, cohort objective, grid search, surfaces, manifests.
"""

import numpy as np
import pandas as pd
import pytest

from tubeness.errors import CaseError, ParameterError
from tubeness.ologit import PATANKAR, log_likelihood
from tubeness.optimizer import (
    Case,
    GridPoint,
    ParamGrid,
    ResponseCache,
    SegmentationSettings,
    export_all_surfaces,
    export_surface,
    grid_search,
    load_manifest,
    objective,
    segment_case,
)
from tubeness.phantom import PhantomSpec, generate_phantom, rate_phantom
from tubeness.volume import Mask3D, Volume3D, save_mask, save_volume

POINT = GridPoint(1.0, 1.0, 0.95, 0.2)


@pytest.fixture
def phantom_case(two_tube_spec):
    result = generate_phantom(two_tube_spec)
    return Case("ph", result.roi, rating=1, t2=result.volume)


def constant_case(case_id="flat", rating=0, shape=(12, 12, 12)):
    roi = Mask3D(np.ones(shape, dtype=bool), (1.0, 1.0, 1.0))
    vol = Volume3D(np.full(shape, 250.0), (1.0, 1.0, 1.0))
    return Case(case_id, roi, rating, t1=vol, t2=vol)


class TestCase:
    def test_needs_a_modality(self, full_roi):
        with pytest.raises(CaseError, match="no modality"):
            Case("x", full_roi((4, 4, 4)), 0)

    def test_modalities(self, full_roi):
        vol = Volume3D(np.zeros((4, 4, 4)), (1.0, 1.0, 1.0))
        assert Case("x", full_roi((4, 4, 4)), 0, t2=vol).modalities() == ("t2",)


class TestSegmentCase:
    def test_constant_volumes_give_no_pvs(self):
        result = segment_case(constant_case(), GridPoint(1.0, 2.0, 0.9, 0.1))
        assert (result.slice_count, result.total_count) == (0, 0)
        assert result.mask.count() == 0

    def test_phantom_tubes_are_counted(self, phantom_case):
        result = segment_case(phantom_case, POINT)
        assert result.total_count == 2
        assert 1 <= result.slice_count <= 2
        assert result.total_volume_mm3 > 0

    def test_high_threshold_empties_the_mask(self, phantom_case):
        # the response never exceeds 1 - exp(-2) with alpha = 0.5
        result = segment_case(phantom_case, GridPoint(1.0, 1.0, 0.95, 0.9))
        assert result.total_count == 0

    def test_fusion_needs_the_named_modality(self, phantom_case):
        with pytest.raises(CaseError):
            segment_case(phantom_case, POINT, SegmentationSettings(fusion="t1"))

    def test_empty_roi(self):
        shape = (6, 6, 6)
        roi = Mask3D(np.zeros(shape, dtype=bool), (1.0, 1.0, 1.0))
        case = Case("empty", roi, 0, t2=Volume3D(np.zeros(shape), (1.0, 1.0, 1.0)))
        with pytest.raises(CaseError, match="empty ROI"):
            segment_case(case, POINT)

    def test_cache_is_reused(self, phantom_case):
        cache = ResponseCache()
        segment_case(phantom_case, POINT, cache=cache)
        assert len(cache) == 1
        segment_case(phantom_case, GridPoint(1.0, 1.0, 0.95, 0.3), cache=cache)
        assert len(cache) == 1
        cache.discard_scales(1.0, 1.0)
        assert len(cache) == 0


class TestObjective:
    def test_constant_cohort(self, wardlaw_model):
        cases = [constant_case("a", 0), constant_case("b", 1)]
        value = objective(cases, wardlaw_model, GridPoint(1.0, 2.0, 0.9, 0.1))
        assert value == pytest.approx(log_likelihood(wardlaw_model, [(0, 0), (0, 1)]))

    def test_additive_over_cases(self, wardlaw_model, phantom_case):
        twin = Case("twin", phantom_case.roi, phantom_case.rating, t2=phantom_case.t2)
        single = objective([phantom_case], wardlaw_model, POINT)
        double = objective([phantom_case, twin], wardlaw_model, POINT)
        assert double == pytest.approx(2.0 * single, rel=1e-12)

    def test_total_counts(self, patankar_model, phantom_case):
        value = objective([phantom_case], patankar_model, POINT, count_kind="total")
        assert value == pytest.approx(log_likelihood(patankar_model, [(2, 1)]))

    def test_rating_outside_model(self, wardlaw_model):
        with pytest.raises(CaseError):
            objective([constant_case(rating=7)], wardlaw_model, POINT)

    def test_unknown_count_kind(self, wardlaw_model):
        with pytest.raises(ParameterError):
            objective([constant_case()], wardlaw_model, POINT, count_kind="median")


class TestGrid:
    def test_default_grid_keeps_ordered_scales(self):
        points = ParamGrid().points()
        assert all(p.s_min <= p.s_max for p in points)
        assert points == sorted(points)
        assert points[0] == GridPoint(0.2, 2.0, 0.9, 0.05)

    def test_single_point(self):
        assert ParamGrid.single(POINT).points() == [POINT]

    def test_thresholds_must_be_open_unit(self):
        with pytest.raises(ParameterError):
            ParamGrid(t2=(0.0, 0.5, 0.1)).points()


class TestGridSearch:
    def test_singleton_grid(self, wardlaw_model, phantom_case):
        result = grid_search([phantom_case], wardlaw_model, ParamGrid.single(POINT))
        assert result.best == POINT
        assert len(result.surface) == 1
        assert result.best_logl == pytest.approx(objective([phantom_case], wardlaw_model, POINT))
        assert list(result.case_counts.columns) == ["id", "rating", "slice_count", "total_count", "total_volume_mm3"]

    def test_empty_effective_grid(self, wardlaw_model):
        grid = ParamGrid(s_min=(3.0, 3.0, 1.0), s_max=(1.0, 2.0, 1.0))
        with pytest.raises(ParameterError, match="empty effective grid"):
            grid_search([constant_case()], wardlaw_model, grid)

    def test_ties_go_to_the_first_point(self, wardlaw_model):
        grid = ParamGrid(s_min=(1.0, 1.5, 0.5), s_max=(1.5, 2.0, 0.5), t1=(0.9, 0.95, 0.05), t2=(0.1, 0.1, 1.0))
        result = grid_search([constant_case()], wardlaw_model, grid)
        assert result.best == GridPoint(1.0, 1.5, 0.9, 0.1)
        assert result.surface["logl"].nunique() == 1

    def test_cache_and_threads_do_not_change_the_surface(self, wardlaw_model, phantom_case):
        grid = ParamGrid(s_min=(0.8, 1.0, 0.2), s_max=(1.0, 1.2, 0.2), t1=(0.95, 0.95, 1.0), t2=(0.2, 0.4, 0.2))
        plain = grid_search([phantom_case], wardlaw_model, grid, use_cache=False)
        cached = grid_search([phantom_case], wardlaw_model, grid, use_cache=True, threads=2)
        assert len(plain.surface) == 8
        pd.testing.assert_frame_equal(plain.surface, cached.surface)
        assert plain.best == cached.best


class TestSurfaces:
    @pytest.fixture
    def result(self, wardlaw_model, phantom_case):
        grid = ParamGrid(s_min=(0.8, 1.0, 0.2), s_max=(1.0, 1.2, 0.2), t1=(0.95, 0.95, 1.0), t2=(0.2, 0.4, 0.2))
        return grid_search([phantom_case], wardlaw_model, grid)

    def test_scale_surface(self, result, tmp_path):
        path = export_surface(result, ("s_min", "s_max"), tmp_path / "s.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "s_min,s_max,logl"
        assert len(lines) == 1 + 4

    def test_all_pairs(self, result, tmp_path):
        paths = export_all_surfaces(result, tmp_path)
        assert len(paths) == 6
        assert (tmp_path / "surface_t1_t2.csv").exists()

    def test_bad_axes(self, result, tmp_path):
        with pytest.raises(ParameterError):
            export_surface(result, ("s_min", "s_min"), tmp_path / "x.csv")


class TestManifest:
    def test_loads_relative_paths(self, tmp_path, two_tube_spec):
        result = generate_phantom(two_tube_spec)
        save_volume(result.volume, tmp_path / "vols" / "c1_t2")
        save_mask(result.roi, tmp_path / "vols" / "c1_roi")
        manifest = tmp_path / "cohort.csv"
        manifest.write_text("id,t1_path,t2_path,roi_path,rating\nc1,,vols/c1_t2.f32raw,vols/c1_roi.f32raw,2\n")

        (case,) = load_manifest(manifest)
        assert case.id == "c1"
        assert case.rating == 2
        assert case.t1 is None
        assert case.t2.dims == (32, 32, 32)

    def test_missing_volume_names_the_case(self, tmp_path):
        manifest = tmp_path / "cohort.csv"
        manifest.write_text("id,t1_path,t2_path,roi_path,rating\ncase-7,absent.f32raw,,roi.f32raw,1\n")
        with pytest.raises(CaseError, match="case-7"):
            load_manifest(manifest)

    def test_missing_columns(self, tmp_path):
        manifest = tmp_path / "cohort.csv"
        manifest.write_text("id,rating\na,1\n")
        with pytest.raises(CaseError, match="lacks columns"):
            load_manifest(manifest)


@pytest.mark.slow
class TestPhantomCohort:
    def test_grid_optimum_reaches_the_true_count_likelihood(self, patankar_model):
        cases, truth = [], []
        for k, n_tubes in enumerate((0, 2, 4, 6, 8, 10)):
            phantom = generate_phantom(PhantomSpec(n_tubes=n_tubes, seed=40 + k))
            rating = rate_phantom(phantom.true_count, PATANKAR)
            cases.append(Case(f"p{k}", phantom.roi, rating, t2=phantom.volume))
            truth.append((phantom.true_count, rating))

        grid = ParamGrid(s_min=(0.6, 1.0, 0.4), s_max=(1.6, 2.0, 0.4), t1=(0.95, 0.95, 1.0), t2=(0.2, 0.4, 0.1))
        result = grid_search(cases, patankar_model, grid, count_kind="total", threads=4)

        achievable = log_likelihood(patankar_model, truth)
        assert result.best_logl >= achievable - 0.5
        assert result.surface["logl"].max() == result.best_logl
