#include <cstdio>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hedi/errors.hpp"
#include "hedi/metrics.hpp"
#include "hedi/phantom.hpp"
#include "hedi/pipeline.hpp"
#include "hedi/preprocess.hpp"
#include "hedi/volume_io.hpp"

namespace fs = std::filesystem;
using hedi::Vec3;
using nlohmann::ordered_json;

namespace {

// Exit codes: 0 success, 1 domain rejection, 2 I/O, 3 numerical divergence.
constexpr int kExitOk = 0;
constexpr int kExitDomain = 1;
constexpr int kExitIo = 2;
constexpr int kExitDiverged = 3;

template <typename F>
int guarded(F&& body) {
    try {
        return body();
    } catch (const hedi::IoFailure& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const hedi::UnsupportedFormat& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const hedi::CorruptHeader& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const hedi::TruncatedData& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const hedi::MalformedRow& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const hedi::DuplicateId& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const hedi::DivergenceDetected& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDiverged;
    } catch (const hedi::InversionDiverged& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDiverged;
    } catch (const hedi::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDomain;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDomain;
    }
}

ordered_json validation_to_json(const hedi::ValidationReport& report) {
    ordered_json j;
    j["valid"] = report.valid;
    ordered_json findings = ordered_json::array();
    for (const auto& f : report.findings) {
        ordered_json entry;
        entry["code"] = hedi::to_string(f.code);
        entry["detail"] = f.detail;
        findings.push_back(std::move(entry));
    }
    j["findings"] = std::move(findings);
    j["note"] = report.note;
    return j;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"HEDI: biomechanical evaluation of incisional hernias from rest/Valsalva CT pairs"};
    app.require_subcommand(1);

    // --- validate ---
    auto* validate = app.add_subcommand("validate", "Preflight geometry checks for a scan pair");
    std::string v_rest, v_valsalva;
    double v_tolerance = 1e-3;
    validate->add_option("rest", v_rest, "Rest scan (.mhd/.nii)")->required();
    validate->add_option("valsalva", v_valsalva, "Valsalva scan (.mhd/.nii)")->required();
    validate->add_option("--tolerance", v_tolerance, "Relative spacing tolerance");

    // --- run ---
    auto* run = app.add_subcommand("run", "Full pipeline: masks, registration, strain, surfaces, report");
    hedi::RunConfig rc;
    std::string r_labels_rest, r_labels_valsalva, r_landmarks, r_metric = "local_cross_correlation";
    std::vector<double> r_zrange;
    double r_defect = 0.0, r_mesh = 0.0;
    run->add_option("--rest-path", rc.rest_path, "Rest scan")->required();
    run->add_option("--valsalva-path", rc.valsalva_path, "Valsalva scan")->required();
    run->add_option("--labels-rest-path", r_labels_rest, "Rest-frame label volume");
    run->add_option("--labels-valsalva-path", r_labels_valsalva, "Valsalva-frame label volume");
    run->add_option("--out-dir", rc.out_dir, "Output directory")->required();
    run->add_option("--threshold-mm", rc.threshold_mm, "Instability threshold (mm)");
    run->add_option("--downsample", rc.downsample, "Working-grid downsampling factor");
    run->add_option("--iso-spacing-mm", rc.iso_spacing_mm, "Isotropic resampling spacing (mm)");
    run->add_option("--hu-threshold", rc.hu_threshold, "Body mask HU threshold");
    auto* defect_opt = run->add_option("--defect-area-cm2", r_defect, "Clinician-measured defect area");
    auto* mesh_opt = run->add_option("--mesh-area-cm2", r_mesh, "Planned mesh area");
    run->add_option("--landmarks-path", r_landmarks, "Landmark CSV for registration evaluation");
    run->add_option("--z-range-mm", r_zrange, "Restrict unstable area to z range")->expected(2);
    run->add_flag("--force", rc.force, "Run despite preflight findings");
    run->add_flag("--rigid-prealign", rc.rigid_prealign, "Translation pre-alignment (default off)");
    run->add_option("--pyramid-levels", rc.registration.pyramid_levels, "Registration pyramid depth");
    run->add_option("--iterations-per-level", rc.registration.iterations_per_level,
                    "Iterations per level, coarse to fine");
    run->add_option("--metric", r_metric, "local_cross_correlation or ssd");
    run->add_option("--cc-window-radius-vox", rc.registration.cc_window_radius_vox,
                    "Cross-correlation window radius (voxels)");
    run->add_option("--update-smoothing-sigma-vox", rc.registration.update_smoothing_sigma_vox,
                    "Update field smoothing sigma (voxels)");
    run->add_option("--total-smoothing-sigma-vox", rc.registration.total_smoothing_sigma_vox,
                    "Total field smoothing sigma (voxels)");
    run->add_option("--step-length-vox", rc.registration.step_length_vox,
                    "Max update step (voxels, (0, 0.5])");
    run->add_option("--convergence-window", rc.registration.convergence_window,
                    "Metric window for early stopping");
    run->add_option("--convergence-eps", rc.registration.convergence_eps,
                    "Relative improvement threshold");
    run->add_flag("--verbose", rc.registration.verbose, "Per-iteration metric log to stderr");

    // --- eval-landmarks ---
    auto* eval = app.add_subcommand("eval-landmarks", "Compare a displacement field against landmarks");
    std::string e_field, e_landmarks;
    eval->add_option("field", e_field, "Displacement field (.mhd)")->required();
    eval->add_option("landmarks", e_landmarks, "Landmark CSV")->required();

    // --- phantom ---
    auto* phantom = app.add_subcommand("phantom", "Generate a synthetic scan pair with ground truth");
    std::string p_out, p_warp = "none";
    std::vector<int> p_dims{128, 128, 128};
    double p_spacing = 1.0;
    std::vector<double> p_translation{9.0, 0.0, 0.0};
    double p_bulge_peak = 30.0, p_bulge_sigma = 60.0;
    std::vector<double> p_bulge_center, p_bulge_direction{0.0, 1.0, 0.0};
    bool p_hernia = false, p_table = false, p_labels_valsalva = false;
    phantom->add_option("--out-dir", p_out, "Output directory")->required();
    phantom->add_option("--dims", p_dims, "Grid size")->expected(3);
    phantom->add_option("--spacing-mm", p_spacing, "Isotropic voxel size (mm)");
    phantom->add_option("--warp", p_warp, "none, translation, or bulge");
    phantom->add_option("--translation-mm", p_translation, "Translation vector")->expected(3);
    phantom->add_option("--bulge-peak-mm", p_bulge_peak, "Bulge peak displacement");
    phantom->add_option("--bulge-sigma-mm", p_bulge_sigma, "Bulge Gaussian width");
    phantom->add_option("--bulge-center-mm", p_bulge_center, "Bulge center (default: anterior body surface)")
        ->expected(3);
    phantom->add_option("--bulge-direction", p_bulge_direction, "Bulge direction")->expected(3);
    phantom->add_flag("--hernia", p_hernia, "Add a hernia bump crossing the body surface");
    phantom->add_flag("--table", p_table, "Add a detached patient-table slab");
    phantom->add_flag("--labels-valsalva", p_labels_valsalva, "Also write warped labels");

    CLI11_PARSE(app, argc, argv);

    if (*validate) {
        return guarded([&]() {
            hedi::ImageVolume rest = hedi::load_volume(v_rest);
            hedi::ImageVolume valsalva = hedi::load_volume(v_valsalva);
            hedi::ValidationReport report = hedi::validate_scan_pair(rest, valsalva, v_tolerance);
            std::cout << validation_to_json(report).dump(2) << "\n";
            return report.valid ? kExitOk : kExitDomain;
        });
    }

    if (*run) {
        return guarded([&]() {
            if (!r_labels_rest.empty()) rc.labels_rest_path = r_labels_rest;
            if (!r_labels_valsalva.empty()) rc.labels_valsalva_path = r_labels_valsalva;
            if (!r_landmarks.empty()) rc.landmarks_path = r_landmarks;
            if (*defect_opt) rc.defect_area_cm2 = r_defect;
            if (*mesh_opt) rc.mesh_area_cm2 = r_mesh;
            if (!r_zrange.empty()) rc.z_range_mm = {r_zrange[0], r_zrange[1]};
            if (r_metric == "ssd") rc.registration.metric = hedi::SimilarityMetric::ssd;
            else if (r_metric != "local_cross_correlation")
                throw hedi::Error("unknown metric: " + r_metric);

            hedi::HerniaReport report = hedi::run_pipeline(rc);
            std::cout << hedi::report_to_json(report);
            return kExitOk;
        });
    }

    if (*eval) {
        return guarded([&]() {
            hedi::DisplacementField field = hedi::load_field(e_field);
            hedi::LandmarkSet landmarks = hedi::load_landmarks(e_landmarks);
            hedi::LandmarkEvaluation result = hedi::evaluate_landmarks(landmarks, field);
            std::cout << hedi::landmark_evaluation_to_json(result).dump(2) << "\n";
            return kExitOk;
        });
    }

    if (*phantom) {
        return guarded([&]() {
            hedi::PhantomSpec spec = hedi::default_phantom_spec(
                {p_dims[0], p_dims[1], p_dims[2]}, {p_spacing, p_spacing, p_spacing});
            if (p_table) spec.table_hu = 200.0f;
            if (p_hernia) {
                // bump straddling the anterior (y-min) body surface
                Vec3 c = spec.body.center;
                c.y -= spec.body.semi_axes.y;
                spec.hernia = hedi::Ellipsoid{c, {0.35 * spec.body.semi_axes.x,
                                                  0.30 * spec.body.semi_axes.y,
                                                  0.35 * spec.body.semi_axes.z}};
            }
            hedi::Phantom ph = hedi::make_phantom(spec);

            hedi::AnalyticWarp warp;
            if (p_warp == "translation") {
                warp = hedi::make_translation_warp({p_translation[0], p_translation[1], p_translation[2]});
            } else if (p_warp == "bulge") {
                Vec3 center;
                if (p_bulge_center.size() == 3) {
                    center = {p_bulge_center[0], p_bulge_center[1], p_bulge_center[2]};
                } else {
                    center = spec.body.center;
                    center.y -= spec.body.semi_axes.y;
                    // snap to the grid so the written truth field carries the
                    // exact peak vector at a node
                    center.x = std::round(center.x / p_spacing) * p_spacing;
                    center.y = std::round(center.y / p_spacing) * p_spacing;
                    center.z = std::round(center.z / p_spacing) * p_spacing;
                }
                warp = hedi::make_bulge_warp(center, p_bulge_peak, p_bulge_sigma,
                                             {p_bulge_direction[0], p_bulge_direction[1],
                                              p_bulge_direction[2]});
            } else if (p_warp != "none") {
                throw hedi::Error("unknown warp kind: " + p_warp);
            }

            fs::create_directories(p_out);
            auto out_path = [&](const char* name) { return (fs::path(p_out) / name).string(); };

            hedi::ImageVolume valsalva =
                p_warp == "none" ? ph.image : hedi::apply_warp(ph.image, warp);
            hedi::DisplacementField truth =
                p_warp == "none"
                    ? hedi::make_field(ph.image.grid)
                    : hedi::ground_truth_field(warp, ph.image.grid);

            hedi::save_volume(ph.image, out_path("rest.mhd"));
            hedi::save_volume(valsalva, out_path("valsalva.mhd"));
            hedi::save_volume(ph.labels, out_path("labels_rest.mhd"));
            hedi::save_field(truth, out_path("truth_field.mhd"));
            if (p_labels_valsalva) {
                hedi::ImageVolume warped_labels =
                    p_warp == "none" ? ph.labels : hedi::apply_warp(ph.labels, warp);
                hedi::save_volume(warped_labels, out_path("labels_valsalva.mhd"));
            }
            return kExitOk;
        });
    }

    return kExitOk;
}
