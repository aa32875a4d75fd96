"""Smoke tests for the python bindings: every exposed operation is exercised
once on small inputs; numerics are spot-checked against closed forms."""

import math

import numpy as np
import pytest

import hedi


def make_sphere_mask(n=48, r=18.0, spacing=1.0):
    z, y, x = np.mgrid[0:n, 0:n, 0:n].astype(np.float32)
    c = n // 2
    mask = ((x - c) ** 2 + (y - c) ** 2 + (z - c) ** 2 <= (r / spacing) ** 2).astype(np.float32)
    return hedi.volume_from_numpy(mask, (spacing,) * 3, (0, 0, 0), "mask")


def test_version():
    assert hedi.__version__


def test_numpy_round_trip():
    arr = np.random.default_rng(0).normal(size=(5, 6, 7)).astype(np.float32)
    vol = hedi.volume_from_numpy(arr, (1.0, 2.0, 3.0), (4.0, 5.0, 6.0))
    assert vol.grid.dims == [7, 6, 5]
    assert vol.grid.spacing == [1.0, 2.0, 3.0]
    np.testing.assert_array_equal(vol.to_numpy(), arr)


def test_volume_io_round_trip(tmp_path):
    img, labels = hedi.make_phantom((32, 32, 32))
    path = str(tmp_path / "phantom.mhd")
    hedi.save_volume(img, path)
    back = hedi.load_volume(path)
    np.testing.assert_array_equal(back.to_numpy(), img.to_numpy())


def test_validate_scan_pair():
    img, _ = hedi.make_phantom((24, 24, 24))
    report = hedi.validate_scan_pair(img, img)
    assert report["valid"] is True
    assert report["findings"] == []
    assert "not" in report["note"]


def test_body_mask_matches_phantom():
    img, _ = hedi.make_phantom((48, 48, 48))
    mask = hedi.body_mask(img)
    arr = mask.to_numpy()
    assert set(np.unique(arr)) == {0.0, 1.0}
    assert arr.sum() > 1000


def test_resample_and_downsample():
    img, _ = hedi.make_phantom((32, 32, 32))
    iso = hedi.resample(img, (2.0, 2.0, 2.0), "linear")
    assert iso.grid.dims == [16, 16, 16]
    down = hedi.downsample(hedi.body_mask(img), 2)
    assert down.grid.spacing == [2.0, 2.0, 2.0]


def test_registration_identity_is_zero():
    img, _ = hedi.make_phantom((40, 40, 40))
    mask = hedi.body_mask(img)
    res = hedi.register_symmetric(mask, mask)
    assert np.abs(res.forward.to_numpy()).max() < 0.5
    assert len(res.metric_trace) == sum(res.iterations_run)


def test_strain_of_scaling_field():
    n = 16
    z, y, x = np.mgrid[0:n, 0:n, 0:n].astype(np.float32)
    u = np.stack([0.1 * x, 0.1 * y, 0.1 * z], axis=-1)  # components ordered (x, y, z)
    field = hedi.field_from_numpy(u, (1.0, 1.0, 1.0))
    strain = hedi.strain_from_field(field)
    mp = strain.max_principal_to_numpy()
    np.testing.assert_allclose(mp[2:-2, 2:-2, 2:-2], 0.105, atol=1e-4)


def test_max_eigenvalue():
    expected = (0.02 + math.sqrt(0.04 + 0.0004)) / 2
    assert hedi.max_eigenvalue_sym3(0.0, 0.02, 0.0, 0.1, 0.0, 0.0) == pytest.approx(expected)


def test_marching_cubes_sphere_area():
    mesh = hedi.marching_cubes(make_sphere_mask())
    area = hedi.mesh_area_mm2(mesh)
    assert area == pytest.approx(4 * math.pi * 18.0**2, rel=0.02)
    assert mesh.triangles.min() >= 0
    assert mesh.triangles.max() < len(mesh.vertices)


def test_unstable_area_and_colormap():
    mesh = hedi.marching_cubes(make_sphere_mask())
    field = hedi.field_from_numpy(
        np.full((24, 24, 24, 3), [0.0, 0.0, 20.0], dtype=np.float32), (2.0, 2.0, 2.0))
    strain = hedi.strain_from_field(hedi.field_from_numpy(
        np.zeros((24, 24, 24, 3), dtype=np.float32), (2.0, 2.0, 2.0)))
    mesh = hedi.attach_scalars(mesh, field, strain)
    area = hedi.unstable_area(mesh, threshold_mm=15.0)
    assert area == pytest.approx(hedi.mesh_area_mm2(mesh))

    assert hedi.hedi_colormap(0.0, 45.0) == [0, 0, 255]
    assert hedi.hedi_colormap(45.0, 45.0) == [255, 255, 255]
    assert hedi.hedi_colormap(30.0, 45.0) == [255, 255, 0]

    colored = hedi.apply_hedi_colors(mesh, 20.0)
    assert colored.colors.shape == (len(colored.vertices), 3)


def test_hotspots_uniform():
    mesh = hedi.marching_cubes(make_sphere_mask(32, 12.0))
    field = hedi.field_from_numpy(np.zeros((16, 16, 16, 3), dtype=np.float32), (2.0, 2.0, 2.0))
    strain = hedi.strain_from_field(field)
    mesh = hedi.attach_scalars(mesh, field, strain)
    regions = hedi.hotspots(mesh, "strain", 95.0)
    assert len(regions) == 1
    assert len(regions[0]["triangle_ids"]) == len(mesh.triangles)


def test_mesh_export_import(tmp_path):
    mesh = hedi.marching_cubes(make_sphere_mask(32, 12.0))
    path = str(tmp_path / "mesh.vtk")
    hedi.export_mesh(mesh, path)
    back = hedi.load_mesh(path)
    assert len(back.vertices) == len(mesh.vertices)
    np.testing.assert_allclose(back.vertices, mesh.vertices, atol=1e-5)


def test_metrics():
    assert hedi.loss_of_domain(93.0, 7.0) == pytest.approx(0.93)
    assert hedi.mesh_defect_ratio(1060.0, 220.0) == pytest.approx(4.818, abs=1e-3)
    with pytest.raises(RuntimeError):
        hedi.loss_of_domain(0.0, 0.0)
    img, labels = hedi.make_phantom((32, 32, 32), hernia=True)
    assert hedi.volume_of_label(labels, 1) > 0
    assert hedi.volume_of_label(labels, 4) > 0


def test_warp_and_sampling():
    warp = hedi.make_translation_warp((5.0, 0.0, 0.0))
    assert hedi.evaluate_warp(warp, (10.0, 20.0, 30.0)) == [5.0, 0.0, 0.0]
    img, _ = hedi.make_phantom((32, 32, 32))
    moved = hedi.apply_warp(img, warp)
    assert moved.to_numpy().shape == img.to_numpy().shape
    truth = hedi.ground_truth_field(warp, img)
    assert hedi.sample_displacement(truth, (16.0, 16.0, 16.0)) == pytest.approx([5.0, 0.0, 0.0])
    round_trip = hedi.compose(truth, hedi.ground_truth_field(
        hedi.make_translation_warp((-5.0, 0.0, 0.0)), img))
    assert np.abs(round_trip.to_numpy()).max() < 1e-6


def test_run_pipeline(tmp_path):
    import json

    img, labels = hedi.make_phantom((48, 48, 48), spacing_mm=2.0, hernia=True)
    rest = str(tmp_path / "rest.mhd")
    hedi.save_volume(img, rest)
    labels_path = str(tmp_path / "labels.mhd")
    hedi.save_volume(labels, labels_path)

    report_json = hedi.run_pipeline(
        rest_path=rest,
        valsalva_path=rest,
        labels_rest_path=labels_path,
        labels_valsalva_path=labels_path,
        out_dir=str(tmp_path / "out"),
        iso_spacing_mm=2.0,
        downsample=2,
    )
    report = json.loads(report_json)
    assert report["unstable_area_cm2"] == 0.0
    assert report["loss_of_domain"] > 0.0
    assert (tmp_path / "out" / "report.json").exists()
    assert (tmp_path / "out" / "rest_surface.vtk").exists()
