#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "hedi/errors.hpp"
#include "hedi/metrics.hpp"
#include "hedi/phantom.hpp"
#include "hedi/pipeline.hpp"
#include "hedi/preprocess.hpp"
#include "hedi/registration.hpp"
#include "hedi/strain.hpp"
#include "hedi/surface.hpp"
#include "hedi/volume_io.hpp"

namespace py = pybind11;
using namespace hedi;

namespace {

Vec3 to_vec3(const std::array<double, 3>& a) { return {a[0], a[1], a[2]}; }
std::array<double, 3> from_vec3(const Vec3& v) { return {v.x, v.y, v.z}; }

// Volumes are exposed as (nz, ny, nx) C-contiguous arrays so that
// arr[k, j, i] addresses voxel (i, j, k) of the x-fastest buffer.
py::array_t<float> volume_to_numpy(const ImageVolume& v) {
    const auto& d = v.grid.dims;
    py::array_t<float> out({d[2], d[1], d[0]});
    std::memcpy(out.mutable_data(), v.voxels.data(), sizeof(float) * v.voxels.size());
    return out;
}

ImageVolume volume_from_numpy(py::array_t<float, py::array::c_style | py::array::forcecast> arr,
                              const std::array<double, 3>& spacing,
                              const std::array<double, 3>& origin, VoxelKind kind) {
    if (arr.ndim() != 3) throw Error("expected a 3-d array (z, y, x)");
    ImageVolume v;
    v.grid.dims = {int(arr.shape(2)), int(arr.shape(1)), int(arr.shape(0))};
    v.grid.spacing = to_vec3(spacing);
    v.grid.origin = to_vec3(origin);
    v.kind = kind;
    v.voxels.resize(v.grid.voxel_count());
    std::memcpy(v.voxels.data(), arr.data(), sizeof(float) * v.voxels.size());
    return v;
}

py::array_t<float> field_to_numpy(const DisplacementField& f) {
    const auto& d = f.grid.dims;
    py::array_t<float> out({d[2], d[1], d[0], 3});
    std::memcpy(out.mutable_data(), f.vectors.data(), sizeof(float) * f.vectors.size());
    return out;
}

DisplacementField field_from_numpy(
    py::array_t<float, py::array::c_style | py::array::forcecast> arr,
    const std::array<double, 3>& spacing, const std::array<double, 3>& origin) {
    if (arr.ndim() != 4 || arr.shape(3) != 3) throw Error("expected a (z, y, x, 3) array");
    DisplacementField f;
    f.grid.dims = {int(arr.shape(2)), int(arr.shape(1)), int(arr.shape(0))};
    f.grid.spacing = to_vec3(spacing);
    f.grid.origin = to_vec3(origin);
    f.vectors.resize(3 * f.grid.voxel_count());
    std::memcpy(f.vectors.data(), arr.data(), sizeof(float) * f.vectors.size());
    return f;
}

py::array_t<double> vertices_to_numpy(const TriMesh& m) {
    py::array_t<double> out({py::ssize_t(m.vertices.size()), py::ssize_t(3)});
    auto r = out.mutable_unchecked<2>();
    for (py::ssize_t i = 0; i < py::ssize_t(m.vertices.size()); ++i) {
        r(i, 0) = m.vertices[size_t(i)].x;
        r(i, 1) = m.vertices[size_t(i)].y;
        r(i, 2) = m.vertices[size_t(i)].z;
    }
    return out;
}

py::array_t<int> triangles_to_numpy(const TriMesh& m) {
    py::array_t<int> out({py::ssize_t(m.triangles.size()), py::ssize_t(3)});
    auto r = out.mutable_unchecked<2>();
    for (py::ssize_t i = 0; i < py::ssize_t(m.triangles.size()); ++i)
        for (py::ssize_t c = 0; c < 3; ++c) r(i, c) = m.triangles[size_t(i)][size_t(c)];
    return out;
}

py::dict landmark_eval_to_dict(const LandmarkEvaluation& eval) {
    py::dict d;
    d["mae_mm"] = eval.mae_mm;
    d["normalized_error"] = eval.normalized_error;
    d["excluded_count"] = eval.excluded_count;
    py::list per;
    for (const auto& e : eval.per_landmark) {
        py::dict le;
        le["id"] = e.id;
        le["measured_mm"] = e.measured_mm;
        le["predicted_mm"] = e.predicted_mm;
        le["abs_error_mm"] = e.abs_error_mm;
        le["out_of_bounds"] = e.out_of_bounds;
        per.append(le);
    }
    d["per_landmark"] = per;
    return d;
}

VoxelKind kind_from_string(const std::string& s) {
    if (s == "intensity") return VoxelKind::intensity_hu;
    if (s == "mask") return VoxelKind::binary_mask;
    if (s == "label") return VoxelKind::label;
    throw Error("unknown voxel kind: " + s + " (expected intensity, mask, or label)");
}

std::string kind_to_string(VoxelKind k) {
    switch (k) {
        case VoxelKind::intensity_hu: return "intensity";
        case VoxelKind::binary_mask: return "mask";
        case VoxelKind::label: return "label";
    }
    return "intensity";
}

InterpMode mode_from_string(const std::string& s) {
    if (s == "linear") return InterpMode::linear;
    if (s == "nearest") return InterpMode::nearest;
    throw Error("unknown interpolation mode: " + s);
}

}  // namespace

PYBIND11_MODULE(_hedi, m) {
    m.doc() = "Hernia evaluation pipeline: registration, strain, and surface metrics";
    m.attr("__version__") = kToolVersion;

    py::register_exception<Error>(m, "HediError", PyExc_RuntimeError);

    py::class_<Grid>(m, "Grid")
        .def(py::init<>())
        .def_property_readonly("dims", [](const Grid& g) { return g.dims; })
        .def_property_readonly("spacing", [](const Grid& g) { return from_vec3(g.spacing); })
        .def_property_readonly("origin", [](const Grid& g) { return from_vec3(g.origin); })
        .def("__repr__", [](const Grid& g) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "Grid(dims=(%d, %d, %d), spacing=(%g, %g, %g))",
                          g.dims[0], g.dims[1], g.dims[2], g.spacing.x, g.spacing.y, g.spacing.z);
            return std::string(buf);
        });

    py::class_<ImageVolume>(m, "ImageVolume")
        .def_readonly("grid", &ImageVolume::grid)
        .def_property_readonly("kind", [](const ImageVolume& v) { return kind_to_string(v.kind); })
        .def("to_numpy", &volume_to_numpy, "Voxels as a (z, y, x) float32 array");

    py::class_<DisplacementField>(m, "DisplacementField")
        .def_readonly("grid", &DisplacementField::grid)
        .def("to_numpy", &field_to_numpy, "Vectors as a (z, y, x, 3) float32 array");

    m.def(
        "volume_from_numpy",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> arr,
           const std::array<double, 3>& spacing, const std::array<double, 3>& origin,
           const std::string& kind) {
            return volume_from_numpy(arr, spacing, origin, kind_from_string(kind));
        },
        py::arg("array"), py::arg("spacing"), py::arg("origin") = std::array<double, 3>{0, 0, 0},
        py::arg("kind") = "intensity");
    m.def("field_from_numpy", &field_from_numpy, py::arg("array"), py::arg("spacing"),
          py::arg("origin") = std::array<double, 3>{0, 0, 0});

    // volume-io
    m.def(
        "load_volume",
        [](const std::string& path, const std::string& kind) {
            return load_volume(path, kind_from_string(kind));
        },
        py::arg("path"), py::arg("kind") = "intensity");
    m.def("save_volume", &save_volume, py::arg("volume"), py::arg("path"));
    m.def("load_field", &load_field, py::arg("path"));
    m.def("save_field", &save_field, py::arg("field"), py::arg("path"));

    // preprocess
    m.def(
        "validate_scan_pair",
        [](const ImageVolume& rest, const ImageVolume& valsalva, double tolerance) {
            ValidationReport r = validate_scan_pair(rest, valsalva, tolerance);
            py::dict d;
            d["valid"] = r.valid;
            py::list findings;
            for (const auto& f : r.findings) {
                py::dict fd;
                fd["code"] = to_string(f.code);
                fd["detail"] = f.detail;
                findings.append(fd);
            }
            d["findings"] = findings;
            d["note"] = r.note;
            return d;
        },
        py::arg("rest"), py::arg("valsalva"), py::arg("tolerance") = 1e-3);
    m.def(
        "body_mask",
        [](const ImageVolume& volume, double hu_threshold, bool fill_internal_holes) {
            PreprocessConfig cfg;
            cfg.hu_threshold = hu_threshold;
            cfg.fill_internal_holes = fill_internal_holes;
            return body_mask(volume, cfg);
        },
        py::arg("volume"), py::arg("hu_threshold") = -300.0, py::arg("fill_internal_holes") = true);
    m.def(
        "resample",
        [](const ImageVolume& volume, const std::array<double, 3>& spacing, const std::string& mode) {
            return resample(volume, to_vec3(spacing), mode_from_string(mode));
        },
        py::arg("volume"), py::arg("target_spacing_mm"), py::arg("mode") = "linear");
    m.def("downsample", &downsample, py::arg("volume"), py::arg("factor"));

    // registration
    py::class_<RegistrationConfig>(m, "RegistrationConfig")
        .def(py::init<>())
        .def_readwrite("pyramid_levels", &RegistrationConfig::pyramid_levels)
        .def_readwrite("iterations_per_level", &RegistrationConfig::iterations_per_level)
        .def_readwrite("cc_window_radius_vox", &RegistrationConfig::cc_window_radius_vox)
        .def_readwrite("update_smoothing_sigma_vox", &RegistrationConfig::update_smoothing_sigma_vox)
        .def_readwrite("total_smoothing_sigma_vox", &RegistrationConfig::total_smoothing_sigma_vox)
        .def_readwrite("step_length_vox", &RegistrationConfig::step_length_vox)
        .def_readwrite("convergence_window", &RegistrationConfig::convergence_window)
        .def_readwrite("convergence_eps", &RegistrationConfig::convergence_eps)
        .def_readwrite("verbose", &RegistrationConfig::verbose)
        .def_property(
            "metric",
            [](const RegistrationConfig& c) {
                return c.metric == SimilarityMetric::ssd ? "ssd" : "local_cross_correlation";
            },
            [](RegistrationConfig& c, const std::string& s) {
                if (s == "ssd") c.metric = SimilarityMetric::ssd;
                else if (s == "local_cross_correlation")
                    c.metric = SimilarityMetric::local_cross_correlation;
                else throw Error("unknown metric: " + s);
            });

    py::class_<DiffeomorphicMap>(m, "DiffeomorphicMap")
        .def_readonly("forward", &DiffeomorphicMap::forward)
        .def_readonly("inverse", &DiffeomorphicMap::inverse)
        .def_readonly("metric_trace", &DiffeomorphicMap::metric_trace)
        .def_readonly("iterations_run", &DiffeomorphicMap::iterations_run);

    m.def("register_symmetric", &register_symmetric, py::arg("static_mask"), py::arg("moving_mask"),
          py::arg("config") = RegistrationConfig{},
          py::call_guard<py::gil_scoped_release>());
    m.def(
        "warp",
        [](const ImageVolume& volume, const DisplacementField& field, const std::string& mode) {
            return warp(volume, field, mode_from_string(mode));
        },
        py::arg("volume"), py::arg("field"), py::arg("mode") = "linear");
    m.def("compose", &compose, py::arg("f"), py::arg("g"));
    m.def("jacobian_determinant", &jacobian_determinant, py::arg("field"));
    m.def(
        "sample_displacement",
        [](const DisplacementField& field, const std::array<double, 3>& point) {
            return from_vec3(sample_displacement(field, to_vec3(point)));
        },
        py::arg("field"), py::arg("point_mm"));

    // strain
    py::class_<StrainVolume>(m, "StrainVolume")
        .def_readonly("grid", &StrainVolume::grid)
        .def("max_principal_to_numpy",
             [](const StrainVolume& s) {
                 const auto& d = s.grid.dims;
                 py::array_t<float> out({d[2], d[1], d[0]});
                 std::memcpy(out.mutable_data(), s.max_principal.data(),
                             sizeof(float) * s.max_principal.size());
                 return out;
             })
        .def("tensors_to_numpy", [](const StrainVolume& s) {
            const auto& d = s.grid.dims;
            py::array_t<float> out({d[2], d[1], d[0], 6});
            std::memcpy(out.mutable_data(), s.tensors.data(), sizeof(float) * s.tensors.size());
            return out;
        });
    m.def("strain_from_field", &strain_from_field, py::arg("field"),
          py::call_guard<py::gil_scoped_release>());
    m.def("max_eigenvalue_sym3", &max_eigenvalue_sym3, py::arg("xx"), py::arg("yy"), py::arg("zz"),
          py::arg("xy"), py::arg("xz"), py::arg("yz"));

    // surface
    py::class_<TriMesh>(m, "TriMesh")
        .def(py::init<>())
        .def_property_readonly("vertices", &vertices_to_numpy)
        .def_property_readonly("triangles", &triangles_to_numpy)
        .def_property_readonly("displacement_mm",
                               [](const TriMesh& mesh) { return mesh.displacement_mm; })
        .def_property_readonly("max_principal_strain",
                               [](const TriMesh& mesh) { return mesh.max_principal_strain; })
        .def_property_readonly("colors", [](const TriMesh& mesh) {
            py::array_t<uint8_t> out({py::ssize_t(mesh.colors.size()), py::ssize_t(3)});
            auto r = out.mutable_unchecked<2>();
            for (py::ssize_t i = 0; i < py::ssize_t(mesh.colors.size()); ++i) {
                r(i, 0) = mesh.colors[size_t(i)].r;
                r(i, 1) = mesh.colors[size_t(i)].g;
                r(i, 2) = mesh.colors[size_t(i)].b;
            }
            return out;
        });

    py::class_<InstabilityConfig>(m, "InstabilityConfig")
        .def(py::init<>())
        .def(py::init([](double t) { return InstabilityConfig{t}; }), py::arg("threshold_mm"))
        .def_readwrite("threshold_mm", &InstabilityConfig::threshold_mm);

    m.def("marching_cubes", &marching_cubes, py::arg("mask"), py::arg("iso") = 0.5,
          py::call_guard<py::gil_scoped_release>());
    m.def("attach_scalars", &attach_scalars, py::arg("mesh"), py::arg("field"), py::arg("strain"));
    m.def("mesh_area_mm2", &mesh_area_mm2, py::arg("mesh"));
    m.def(
        "unstable_area",
        [](const TriMesh& mesh, double threshold_mm) {
            return unstable_area(mesh, InstabilityConfig{threshold_mm});
        },
        py::arg("mesh"), py::arg("threshold_mm") = 15.0);
    m.def(
        "hedi_colormap",
        [](double displacement_mm, double max_mm, double threshold_mm) {
            RGB8 c = hedi_colormap(displacement_mm, max_mm, InstabilityConfig{threshold_mm});
            return std::array<int, 3>{c.r, c.g, c.b};
        },
        py::arg("displacement_mm"), py::arg("max_mm"), py::arg("threshold_mm") = 15.0);
    m.def(
        "apply_hedi_colors",
        [](TriMesh mesh, double max_mm, double threshold_mm) {
            return apply_hedi_colors(std::move(mesh), max_mm, InstabilityConfig{threshold_mm});
        },
        py::arg("mesh"), py::arg("max_mm"), py::arg("threshold_mm") = 15.0);
    m.def(
        "hotspots",
        [](const TriMesh& mesh, const std::string& channel, double percentile) {
            MeshChannel ch;
            if (channel == "displacement") ch = MeshChannel::displacement;
            else if (channel == "strain") ch = MeshChannel::strain;
            else throw Error("unknown channel: " + channel);
            py::list out;
            for (const HotspotRegion& r : hotspots(mesh, ch, percentile)) {
                py::dict d;
                d["triangle_ids"] = r.triangle_ids;
                d["area_mm2"] = r.area_mm2;
                d["peak_value"] = r.peak_value;
                d["centroid_mm"] = from_vec3(r.centroid_mm);
                out.append(d);
            }
            return out;
        },
        py::arg("mesh"), py::arg("channel") = "strain", py::arg("percentile") = 95.0);
    m.def("restrict_to_z_range", &restrict_to_z_range, py::arg("mesh"), py::arg("z_min_mm"),
          py::arg("z_max_mm"));
    m.def("export_mesh", &export_mesh, py::arg("mesh"), py::arg("path"));
    m.def("load_mesh", &load_mesh, py::arg("path"));

    // metrics
    m.def("volume_of_label", &volume_of_label, py::arg("labels"), py::arg("code"));
    m.def("loss_of_domain", &loss_of_domain, py::arg("hernia_mm3"), py::arg("cavity_mm3"));
    m.def("loss_of_domain_hernia_to_cavity", &loss_of_domain_hernia_to_cavity,
          py::arg("hernia_mm3"), py::arg("cavity_mm3"));
    m.def("mesh_defect_ratio", &mesh_defect_ratio, py::arg("mesh_area_cm2"),
          py::arg("defect_area_cm2"));
    m.def(
        "evaluate_landmarks",
        [](const std::string& landmarks_path, const DisplacementField& field) {
            return landmark_eval_to_dict(evaluate_landmarks(load_landmarks(landmarks_path), field));
        },
        py::arg("landmarks_path"), py::arg("field"));

    // phantom
    m.def(
        "make_phantom",
        [](const std::array<int, 3>& dims, double spacing_mm, bool hernia, bool table) {
            PhantomSpec spec = default_phantom_spec(dims, {spacing_mm, spacing_mm, spacing_mm});
            if (table) spec.table_hu = 200.0f;
            if (hernia) {
                Vec3 c = spec.body.center;
                c.y -= spec.body.semi_axes.y;
                spec.hernia = Ellipsoid{c, {0.35 * spec.body.semi_axes.x,
                                            0.30 * spec.body.semi_axes.y,
                                            0.35 * spec.body.semi_axes.z}};
            }
            Phantom ph = make_phantom(spec);
            return py::make_tuple(ph.image, ph.labels);
        },
        py::arg("dims") = std::array<int, 3>{128, 128, 128}, py::arg("spacing_mm") = 1.0,
        py::arg("hernia") = false, py::arg("table") = false);

    py::class_<AnalyticWarp>(m, "AnalyticWarp");
    m.def(
        "make_translation_warp",
        [](const std::array<double, 3>& t) { return make_translation_warp(to_vec3(t)); },
        py::arg("translation_mm"));
    m.def(
        "make_bulge_warp",
        [](const std::array<double, 3>& center, double peak, double sigma,
           const std::array<double, 3>& direction) {
            return make_bulge_warp(to_vec3(center), peak, sigma, to_vec3(direction));
        },
        py::arg("center_mm"), py::arg("peak_mm"), py::arg("sigma_mm"),
        py::arg("direction") = std::array<double, 3>{0, 1, 0});
    m.def(
        "evaluate_warp",
        [](const AnalyticWarp& warp, const std::array<double, 3>& p) {
            return from_vec3(evaluate_warp(warp, to_vec3(p)));
        },
        py::arg("warp"), py::arg("point_mm"));
    m.def("apply_warp", &apply_warp, py::arg("volume"), py::arg("warp"),
          py::call_guard<py::gil_scoped_release>());
    m.def(
        "ground_truth_field",
        [](const AnalyticWarp& warp, const ImageVolume& like) {
            return ground_truth_field(warp, like.grid);
        },
        py::arg("warp"), py::arg("like"));

    // pipeline
    m.def(
        "run_pipeline",
        [](const py::kwargs& kwargs) {
            RunConfig cfg;
            for (auto item : kwargs) {
                std::string key = py::str(item.first);
                if (key == "rest_path") cfg.rest_path = py::str(item.second);
                else if (key == "valsalva_path") cfg.valsalva_path = py::str(item.second);
                else if (key == "labels_rest_path") cfg.labels_rest_path = py::str(item.second);
                else if (key == "labels_valsalva_path") cfg.labels_valsalva_path = py::str(item.second);
                else if (key == "out_dir") cfg.out_dir = py::str(item.second);
                else if (key == "threshold_mm") cfg.threshold_mm = py::cast<double>(item.second);
                else if (key == "downsample") cfg.downsample = py::cast<int>(item.second);
                else if (key == "iso_spacing_mm") cfg.iso_spacing_mm = py::cast<double>(item.second);
                else if (key == "hu_threshold") cfg.hu_threshold = py::cast<double>(item.second);
                else if (key == "defect_area_cm2") cfg.defect_area_cm2 = py::cast<double>(item.second);
                else if (key == "mesh_area_cm2") cfg.mesh_area_cm2 = py::cast<double>(item.second);
                else if (key == "landmarks_path") cfg.landmarks_path = py::str(item.second);
                else if (key == "z_range_mm")
                    cfg.z_range_mm = py::cast<std::array<double, 2>>(item.second);
                else if (key == "force") cfg.force = py::cast<bool>(item.second);
                else if (key == "rigid_prealign") cfg.rigid_prealign = py::cast<bool>(item.second);
                else if (key == "registration")
                    cfg.registration = py::cast<RegistrationConfig>(item.second);
                else throw Error("unknown run_pipeline argument: " + key);
            }
            std::string json;
            {
                py::gil_scoped_release release;
                HerniaReport report = run_pipeline(cfg);
                json = report_to_json(report);
            }
            return json;
        },
        "Runs the full pipeline; returns the report as a JSON string.");
}
