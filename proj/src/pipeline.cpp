#include "hedi/pipeline.hpp"

#include <chrono>
#include <filesystem>

#include "hedi/errors.hpp"
#include "hedi/preprocess.hpp"
#include "hedi/sampling.hpp"
#include "hedi/strain.hpp"
#include "hedi/surface.hpp"
#include "hedi/volume_io.hpp"

namespace hedi {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

ordered_json run_config_to_json(const RunConfig& c) {
    ordered_json j;
    j["rest_path"] = c.rest_path;
    j["valsalva_path"] = c.valsalva_path;
    if (c.labels_rest_path) j["labels_rest_path"] = *c.labels_rest_path;
    if (c.labels_valsalva_path) j["labels_valsalva_path"] = *c.labels_valsalva_path;
    j["out_dir"] = c.out_dir;
    j["threshold_mm"] = c.threshold_mm;
    j["downsample"] = c.downsample;
    j["iso_spacing_mm"] = c.iso_spacing_mm;
    j["hu_threshold"] = c.hu_threshold;
    if (c.defect_area_cm2) j["defect_area_cm2"] = *c.defect_area_cm2;
    if (c.mesh_area_cm2) j["mesh_area_cm2"] = *c.mesh_area_cm2;
    if (c.landmarks_path) j["landmarks_path"] = *c.landmarks_path;
    if (c.z_range_mm) j["z_range_mm"] = {(*c.z_range_mm)[0], (*c.z_range_mm)[1]};
    j["force"] = c.force;
    j["rigid_prealign"] = c.rigid_prealign;

    ordered_json r;
    r["pyramid_levels"] = c.registration.pyramid_levels;
    r["iterations_per_level"] = c.registration.iterations_per_level;
    r["metric"] = c.registration.metric == SimilarityMetric::local_cross_correlation
                      ? "local_cross_correlation"
                      : "ssd";
    r["cc_window_radius_vox"] = c.registration.cc_window_radius_vox;
    r["update_smoothing_sigma_vox"] = c.registration.update_smoothing_sigma_vox;
    r["total_smoothing_sigma_vox"] = c.registration.total_smoothing_sigma_vox;
    r["step_length_vox"] = c.registration.step_length_vox;
    r["convergence_window"] = c.registration.convergence_window;
    r["convergence_eps"] = c.registration.convergence_eps;
    j["registration"] = std::move(r);
    return j;
}

namespace {

Vec3 mask_centroid_world(const ImageVolume& mask) {
    double sx = 0, sy = 0, sz = 0, cnt = 0;
    const Grid& g = mask.grid;
    for (int k = 0; k < g.dims[2]; ++k)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i)
                if (mask.voxels[g.index(i, j, k)] > 0.5f) {
                    Vec3 w = g.index_to_world(i, j, k);
                    sx += w.x;
                    sy += w.y;
                    sz += w.z;
                    cnt += 1.0;
                }
    if (cnt == 0.0) throw EmptyMask("mask has no voxels");
    return {sx / cnt, sy / cnt, sz / cnt};
}

DisplacementField constant_field(const Grid& grid, const Vec3& value) {
    DisplacementField f = make_field(grid);
    const size_t n = grid.voxel_count();
    for (size_t q = 0; q < n; ++q) {
        f.vectors[3 * q] = float(value.x);
        f.vectors[3 * q + 1] = float(value.y);
        f.vectors[3 * q + 2] = float(value.z);
    }
    return f;
}

}  // namespace

HerniaReport run_pipeline(const RunConfig& config) {
    auto t0 = std::chrono::steady_clock::now();

    if (config.threshold_mm <= 0.0) throw Error("threshold_mm must be positive");
    if (config.downsample < 1) throw InvalidSpacing("downsample must be >= 1");
    if (config.iso_spacing_mm <= 0.0) throw InvalidSpacing("iso_spacing_mm must be positive");
    if (config.mesh_area_cm2 && *config.mesh_area_cm2 <= 0.0) throw Error("mesh_area_cm2 must be positive");
    if (config.defect_area_cm2 && *config.defect_area_cm2 <= 0.0)
        throw ZeroDefectArea("defect_area_cm2 must be positive");

    fs::create_directories(config.out_dir);
    auto out_path = [&](const char* name) { return (fs::path(config.out_dir) / name).string(); };

    ImageVolume rest = load_volume(config.rest_path, VoxelKind::intensity_hu);
    ImageVolume valsalva = load_volume(config.valsalva_path, VoxelKind::intensity_hu);

    ValidationReport preflight = validate_scan_pair(rest, valsalva);
    if (!preflight.valid && !config.force) {
        std::string codes;
        for (const auto& f : preflight.findings) {
            if (!codes.empty()) codes += ", ";
            codes += to_string(f.code);
        }
        throw ValidationFailed("scan pair rejected by preflight: " + codes +
                               " (use force to override)");
    }

    PreprocessConfig pre;
    pre.hu_threshold = config.hu_threshold;
    pre.downsample_factor = config.downsample;
    pre.iso_spacing_mm = config.iso_spacing_mm;

    const Vec3 iso{config.iso_spacing_mm, config.iso_spacing_mm, config.iso_spacing_mm};
    ImageVolume rest_iso = resample(rest, iso, InterpMode::linear);
    ImageVolume valsalva_iso = resample(valsalva, iso, InterpMode::linear);

    ImageVolume mask_rest = body_mask(rest_iso, pre);
    ImageVolume mask_valsalva = body_mask(valsalva_iso, pre);
    // A forced run on mismatched geometry is mapped onto the rest grid; shift
    // and truncation artifacts then show up in the result, as documented.
    if (!mask_valsalva.grid.same_geometry(mask_rest.grid, 1e-6))
        mask_valsalva = resample_to_grid(mask_valsalva, mask_rest.grid, InterpMode::linear);
    save_volume(mask_rest, out_path("body_mask_rest.mhd"));
    save_volume(mask_valsalva, out_path("body_mask_valsalva.mhd"));

    ImageVolume work_rest = downsample(mask_rest, config.downsample);
    ImageVolume work_valsalva = downsample(mask_valsalva, config.downsample);

    // Optional translation pre-alignment of the mask centroids; the shift is
    // folded back into the final maps so displacements stay physical.
    Vec3 prealign{0, 0, 0};
    if (config.rigid_prealign) {
        prealign = mask_centroid_world(work_valsalva) - mask_centroid_world(work_rest);
        work_valsalva = warp(work_valsalva, constant_field(work_valsalva.grid, prealign),
                             InterpMode::nearest);
    }

    DiffeomorphicMap map = register_symmetric(work_rest, work_valsalva, config.registration);
    if (config.rigid_prealign && prealign.norm() > 0.0) {
        map.forward = compose(constant_field(map.forward.grid, prealign), map.forward);
        map.inverse = compose(map.inverse, constant_field(map.inverse.grid, -prealign));
    }
    save_field(map.forward, out_path("displacement_field.mhd"));
    save_field(map.inverse, out_path("inverse_displacement_field.mhd"));

    ImageVolume jac = jacobian_determinant(map.forward);
    save_volume(jac, out_path("jacobian_det.mhd"));

    StrainVolume strain = strain_from_field(map.forward);
    ImageVolume strain_scalar{strain.grid, VoxelKind::intensity_hu, strain.max_principal};
    save_volume(strain_scalar, out_path("strain_max_principal.mhd"));

    // Rest (reference) surface carries the reported quantities.
    TriMesh rest_mesh = attach_scalars(marching_cubes(mask_rest), map.forward, strain);
    double max_disp = 0.0;
    for (float d : rest_mesh.displacement_mm) max_disp = std::max(max_disp, double(d));

    InstabilityConfig instab{config.threshold_mm};
    double color_max = std::max(max_disp, config.threshold_mm);
    rest_mesh = apply_hedi_colors(std::move(rest_mesh), color_max, instab);

    double area_mm2;
    if (config.z_range_mm) {
        TriMesh band = restrict_to_z_range(rest_mesh, (*config.z_range_mm)[0], (*config.z_range_mm)[1]);
        area_mm2 = band.triangles.empty() ? 0.0 : unstable_area(band, instab);
    } else {
        area_mm2 = unstable_area(rest_mesh, instab);
    }
    export_mesh(rest_mesh, out_path("rest_surface.vtk"));

    // Valsalva surface: displacement from the inverse map, strain pulled back
    // to the rest frame sample point of each vertex.
    TriMesh val_mesh = marching_cubes(mask_valsalva);
    val_mesh.displacement_mm.resize(val_mesh.vertices.size());
    val_mesh.max_principal_strain.resize(val_mesh.vertices.size());
    for (size_t v = 0; v < val_mesh.vertices.size(); ++v) {
        Vec3 p = val_mesh.vertices[v];
        Vec3 back = sample_field_world_clamped(map.inverse, p);
        val_mesh.displacement_mm[v] = float(back.norm());
        Vec3 rest_point = p + back;
        Vec3 c = strain.grid.world_to_index(rest_point);
        val_mesh.max_principal_strain[v] = float(
            detail::trilinear(strain.max_principal.data(), strain.grid.dims, c.x, c.y, c.z, true));
    }
    val_mesh = apply_hedi_colors(std::move(val_mesh), color_max, instab);
    export_mesh(val_mesh, out_path("valsalva_surface.vtk"));

    HerniaReport report;
    report.threshold_mm = config.threshold_mm;
    report.unstable_area_cm2 = area_mm2 / 100.0;
    report.max_displacement_mm = max_disp;
    report.tool_version = kToolVersion;
    report.rest_path = config.rest_path;
    report.valsalva_path = config.valsalva_path;
    report.config = run_config_to_json(config);
    if (!preflight.valid) {
        ordered_json findings = ordered_json::array();
        for (const auto& f : preflight.findings) findings.push_back(to_string(f.code));
        report.config["forced_despite_findings"] = findings;
    }

    if (config.labels_rest_path) {
        ImageVolume labels = load_volume(*config.labels_rest_path, VoxelKind::label);
        report.cavity_volume_rest_mm3 = volume_of_label(labels, LabelCodes::abdominal_cavity);
        report.hernia_volume_rest_mm3 = volume_of_label(labels, LabelCodes::hernia_sac);
    }
    if (config.labels_valsalva_path) {
        ImageVolume labels = load_volume(*config.labels_valsalva_path, VoxelKind::label);
        report.cavity_volume_valsalva_mm3 = volume_of_label(labels, LabelCodes::abdominal_cavity);
        report.hernia_volume_valsalva_mm3 = volume_of_label(labels, LabelCodes::hernia_sac);
    }
    if (report.hernia_volume_valsalva_mm3 && report.cavity_volume_valsalva_mm3 &&
        *report.hernia_volume_valsalva_mm3 + *report.cavity_volume_valsalva_mm3 > 0.0) {
        report.loss_of_domain_value =
            loss_of_domain(*report.hernia_volume_valsalva_mm3, *report.cavity_volume_valsalva_mm3);
        report.loss_of_domain_frame = "valsalva";
    } else if (report.hernia_volume_rest_mm3 && report.cavity_volume_rest_mm3 &&
               *report.hernia_volume_rest_mm3 + *report.cavity_volume_rest_mm3 > 0.0) {
        report.loss_of_domain_value =
            loss_of_domain(*report.hernia_volume_rest_mm3, *report.cavity_volume_rest_mm3);
        report.loss_of_domain_frame = "rest";
    }

    report.defect_area_cm2 = config.defect_area_cm2;
    report.mesh_area_cm2 = config.mesh_area_cm2;
    if (config.defect_area_cm2 && config.mesh_area_cm2)
        report.mesh_defect_ratio_value =
            mesh_defect_ratio(*config.mesh_area_cm2, *config.defect_area_cm2);

    if (config.landmarks_path) {
        LandmarkSet landmarks = load_landmarks(*config.landmarks_path);
        report.landmark_eval = evaluate_landmarks(landmarks, map.forward);
    }

    report.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_report(report, out_path("report.json"));
    return report;
}

}  // namespace hedi
