#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hedi/types.hpp"

namespace hedi {

/// Voxel count of `code` times the voxel volume (mm^3); absent codes give 0.
double volume_of_label(const ImageVolume& labels, int code);

/// Sabbagh-style ratio hernia / (hernia + cavity), in [0,1].
double loss_of_domain(double hernia_mm3, double cavity_mm3);

/// Alternative convention hernia / cavity (Tanaka-style), for comparison.
double loss_of_domain_hernia_to_cavity(double hernia_mm3, double cavity_mm3);

double mesh_defect_ratio(double mesh_area_cm2, double defect_area_cm2);

struct LandmarkError {
    std::string id;
    double measured_mm = 0.0;
    double predicted_mm = 0.0;
    double abs_error_mm = 0.0;
    bool out_of_bounds = false;  // excluded from the aggregates
};

struct LandmarkEvaluation {
    std::vector<LandmarkError> per_landmark;
    double mae_mm = 0.0;
    double normalized_error = 0.0;  // mae / max measured displacement
    int excluded_count = 0;
};

/// Compares measured point-pair distances against the field magnitude at each
/// rest point. Out-of-bounds landmarks are flagged and excluded; throws
/// EmptyLandmarkSet when nothing contributes.
LandmarkEvaluation evaluate_landmarks(const LandmarkSet& landmarks, const DisplacementField& field);

nlohmann::ordered_json landmark_evaluation_to_json(const LandmarkEvaluation& eval);

struct HerniaReport {
    std::optional<double> cavity_volume_rest_mm3;
    std::optional<double> cavity_volume_valsalva_mm3;
    std::optional<double> hernia_volume_rest_mm3;
    std::optional<double> hernia_volume_valsalva_mm3;
    std::optional<double> loss_of_domain_value;  // in [0,1]
    std::string loss_of_domain_frame;            // "rest" or "valsalva"
    double unstable_area_cm2 = 0.0;
    double max_displacement_mm = 0.0;
    double threshold_mm = 15.0;
    std::optional<double> defect_area_cm2;  // clinician input
    std::optional<double> mesh_area_cm2;    // clinician input
    std::optional<double> mesh_defect_ratio_value;
    std::optional<LandmarkEvaluation> landmark_eval;

    // provenance
    std::string rest_path;
    std::string valsalva_path;
    nlohmann::ordered_json config = nlohmann::ordered_json::object();
    std::string tool_version;
    double wall_clock_seconds = 0.0;
};

/// Stable serialization: fixed key order, floats rounded to 6 significant
/// digits, so identical inputs yield byte-identical files.
std::string report_to_json(const HerniaReport& report);

/// Validates the report invariants and writes UTF-8 JSON.
void write_report(const HerniaReport& report, const std::string& path);

HerniaReport load_report(const std::string& path);

}  // namespace hedi
