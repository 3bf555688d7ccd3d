"""
test_volume.py - volumes, masks, raw and NIfTI files, isotropic reslicing.
"""

import nibabel as nib
import numpy as np
import pytest

from tubeness.errors import GridMismatchError, ParameterError, VolumeFormatError
from tubeness.volume import (
    Mask3D,
    Volume3D,
    detect_format,
    load_mask,
    load_volume,
    require_same_grid,
    reslice_isotropic,
    reslice_mask,
    save_mask,
    save_volume,
)


class TestVolumeTypes:
    def test_dims_are_reported_x_first(self):
        vol = Volume3D(np.zeros((4, 3, 2)), (0.5, 1.0, 2.0))
        assert vol.dims == (2, 3, 4)
        assert vol.voxel_volume == pytest.approx(1.0)

    def test_rejects_non_finite_samples(self):
        data = np.zeros((2, 2, 2))
        data[1, 1, 1] = np.nan
        with pytest.raises(VolumeFormatError):
            Volume3D(data, (1.0, 1.0, 1.0))

    def test_rejects_bad_spacing(self):
        with pytest.raises(VolumeFormatError):
            Volume3D(np.zeros((2, 2, 2)), (1.0, 0.0, 1.0))

    def test_volume_data_is_read_only(self):
        vol = Volume3D(np.zeros((2, 2, 2)), (1.0, 1.0, 1.0))
        with pytest.raises(ValueError):
            vol.data[0, 0, 0] = 1.0

    def test_mask_rejects_non_binary(self):
        with pytest.raises(VolumeFormatError):
            Mask3D(np.full((2, 2, 2), 2), (1.0, 1.0, 1.0))

    def test_isotropy(self):
        assert Volume3D(np.zeros((2, 2, 2)), (0.7, 0.7, 0.7)).is_isotropic()
        assert not Volume3D(np.zeros((2, 2, 2)), (1.0, 1.0, 3.0)).is_isotropic()

    def test_grid_mismatch(self):
        a = Volume3D(np.zeros((2, 2, 2)), (1.0, 1.0, 1.0))
        b = Mask3D(np.zeros((2, 2, 3)), (1.0, 1.0, 1.0))
        c = Mask3D(np.zeros((2, 2, 2)), (1.0, 1.0, 2.0))
        with pytest.raises(GridMismatchError):
            require_same_grid(a, b)
        with pytest.raises(GridMismatchError):
            require_same_grid(a, c)


class TestRawFormat:
    def test_save_and_load_keep_layout_and_spacing(self, tmp_path, rng):
        data = rng.normal(size=(3, 4, 5)).astype(np.float32)
        path = save_volume(Volume3D(data, (0.5, 0.75, 2.0)), tmp_path / "vol")
        assert path.name == "vol.f32raw"
        meta = (tmp_path / "vol.f32raw.meta").read_text().splitlines()
        assert meta[0] == "dims 5 4 3"
        loaded = load_volume(path)
        assert loaded.spacing == (0.5, 0.75, 2.0)
        np.testing.assert_array_equal(loaded.data, data.astype(np.float64))

    def test_mask_round_trip(self, tmp_path):
        data = np.zeros((3, 3, 3), dtype=bool)
        data[1, 2, 0] = True
        save_mask(Mask3D(data, (1.0, 1.0, 1.0)), tmp_path / "roi.f32raw")
        mask = load_mask(tmp_path / "roi.f32raw")
        assert mask.count() == 1
        assert mask.data[1, 2, 0] == 1

    def test_short_data(self, tmp_path):
        save_volume(Volume3D(np.zeros((2, 2, 2)), (1.0, 1.0, 1.0)), tmp_path / "v")
        (tmp_path / "v.f32raw.meta").write_text("dims 2 2 3\nspacing 1 1 1\n")
        with pytest.raises(VolumeFormatError, match="short data"):
            load_volume(tmp_path / "v.f32raw")

    def test_trailing_data(self, tmp_path):
        save_volume(Volume3D(np.zeros((2, 2, 2)), (1.0, 1.0, 1.0)), tmp_path / "v")
        (tmp_path / "v.f32raw.meta").write_text("dims 2 2 1\nspacing 1 1 1\n")
        with pytest.raises(VolumeFormatError, match="trailing"):
            load_volume(tmp_path / "v.f32raw")

    def test_malformed_header(self, tmp_path):
        save_volume(Volume3D(np.zeros((2, 2, 2)), (1.0, 1.0, 1.0)), tmp_path / "v")
        (tmp_path / "v.f32raw.meta").write_text("dims 2 2\nspacing 1 1 1\n")
        with pytest.raises(VolumeFormatError, match="malformed header"):
            load_volume(tmp_path / "v.f32raw")

    def test_missing_file_is_an_os_error(self, tmp_path):
        with pytest.raises(OSError):
            load_volume(tmp_path / "absent.f32raw")


class TestNifti:
    def _write(self, tmp_path, data, zooms, name="img.nii"):
        affine = np.diag(list(zooms[:3]) + [1.0])
        path = tmp_path / name
        nib.save(nib.Nifti1Image(data, affine), str(path))
        return path

    def test_reads_xyz_data_into_zyx_arrays(self, tmp_path):
        xyz = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
        path = self._write(tmp_path, xyz, (0.9, 1.1, 3.0))
        assert detect_format(path) == "nifti1"
        vol = load_volume(path)
        assert vol.dims == (2, 3, 4)
        np.testing.assert_allclose(vol.spacing, (0.9, 1.1, 3.0), rtol=1e-6)
        assert vol.data[3, 2, 1] == xyz[1, 2, 3]

    def test_integer_datatype(self, tmp_path):
        xyz = np.arange(8, dtype=np.int16).reshape(2, 2, 2)
        vol = load_volume(self._write(tmp_path, xyz, (1.0, 1.0, 1.0)))
        assert vol.data.dtype == np.float64
        assert vol.data.sum() == 28

    def test_rejects_four_dimensional_images(self, tmp_path):
        path = self._write(tmp_path, np.zeros((2, 2, 2, 2), dtype=np.float32), (1.0, 1.0, 1.0, 1.0))
        with pytest.raises(VolumeFormatError):
            load_volume(path)

    def test_rejects_compressed_files(self, tmp_path):
        path = self._write(tmp_path, np.zeros((2, 2, 2), dtype=np.float32), (1.0, 1.0, 1.0), "img.nii.gz")
        with pytest.raises(VolumeFormatError, match="compressed"):
            load_volume(path)

    def test_header_scaling_is_applied(self, tmp_path):
        xyz = np.zeros((2, 2, 2), dtype=np.int16)
        xyz[1, 0, 1] = 3
        path = self._write(tmp_path, xyz, (1.0, 1.0, 1.0))
        # scl_slope and scl_inter are float32 fields at bytes 112 and 116
        endian = nib.load(str(path)).header.endianness
        raw = bytearray(path.read_bytes())
        raw[112:120] = np.array([2.0, 1.0], dtype=endian + "f4").tobytes()
        path.write_bytes(bytes(raw))

        vol = load_volume(path)
        assert vol.data[1, 0, 1] == 7.0
        assert vol.data[0, 0, 0] == 1.0

    @pytest.mark.parametrize("cut", [4, 40, 200])
    def test_truncated_file(self, tmp_path, cut):
        path = self._write(tmp_path, np.ones((4, 4, 4), dtype=np.float32), (1.0, 1.0, 1.0))
        raw = path.read_bytes()
        path.write_bytes(raw[:-cut])
        with pytest.raises(VolumeFormatError, match="short data"):
            load_volume(path)


class TestReslice:
    def test_identity(self, rng):
        data = rng.normal(size=(3, 4, 5))
        out = reslice_isotropic(Volume3D(data, (1.0, 1.0, 1.0)), 1.0)
        np.testing.assert_array_equal(out.data, data)

    def test_output_dims(self):
        vol = Volume3D(np.zeros((5, 4, 3)), (0.5, 1.0, 2.5))
        out = reslice_isotropic(vol, 1.0)
        assert out.dims == (2, 4, 13)
        assert out.spacing == (1.0, 1.0, 1.0)

    def test_coincident_samples_are_copied(self):
        # spacing 3 -> 1: output j = 3i + 1 sits on source voxel i
        ramp = np.arange(4, dtype=np.float64) * 10.0
        vol = Volume3D(np.broadcast_to(ramp, (2, 2, 4)), (3.0, 1.0, 1.0))
        out = reslice_isotropic(vol, 1.0)
        assert out.dims == (12, 2, 2)
        np.testing.assert_allclose(out.data[0, 0, 1::3], ramp, atol=1e-9)

    def test_halving_blends_neighbours(self):
        ramp = np.array([0.0, 4.0, 8.0])
        vol = Volume3D(np.broadcast_to(ramp, (1, 1, 3)), (2.0, 1.0, 1.0))
        out = reslice_isotropic(vol, 1.0)
        # centre of output voxel 1 maps to source index 0.25, voxel 2 to 0.75
        np.testing.assert_allclose(out.data[0, 0, 1:5], [1.0, 3.0, 5.0, 7.0], atol=1e-9)
        # edges clamp
        assert out.data[0, 0, 0] == pytest.approx(0.0)
        assert out.data[0, 0, 5] == pytest.approx(8.0)

    def test_mask_voxel_becomes_block(self):
        data = np.zeros((3, 3, 3), dtype=bool)
        data[1, 1, 1] = True
        out = reslice_mask(Mask3D(data, (2.0, 2.0, 2.0)), 1.0)
        assert out.dims == (6, 6, 6)
        assert out.count() == 8
        assert np.all(out.data[2:4, 2:4, 2:4] == 1)

    def test_bad_target(self):
        with pytest.raises(ParameterError):
            reslice_isotropic(Volume3D(np.zeros((2, 2, 2)), (1.0, 1.0, 1.0)), 0.0)
