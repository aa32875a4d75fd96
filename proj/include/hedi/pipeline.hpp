#pragma once

#include <array>
#include <optional>
#include <string>

#include <json.hpp>

#include "hedi/metrics.hpp"
#include "hedi/registration.hpp"

namespace hedi {

inline constexpr const char* kToolVersion = "0.1.0";

struct RunConfig {
    std::string rest_path;
    std::string valsalva_path;
    std::optional<std::string> labels_rest_path;
    std::optional<std::string> labels_valsalva_path;
    std::string out_dir;
    double threshold_mm = 15.0;
    int downsample = 3;
    double iso_spacing_mm = 1.0;
    double hu_threshold = -300.0;
    std::optional<double> defect_area_cm2;
    std::optional<double> mesh_area_cm2;
    std::optional<std::string> landmarks_path;
    std::optional<std::array<double, 2>> z_range_mm;  // unstable-area restriction
    bool force = false;           // run despite preflight findings (recorded in provenance)
    bool rigid_prealign = false;  // translation pre-alignment of mask centroids
    RegistrationConfig registration;
};

nlohmann::ordered_json run_config_to_json(const RunConfig& config);

/// Full pipeline: preflight -> body masks -> resample/downsample -> symmetric
/// registration -> strain -> surfaces -> metrics. Writes report.json, both
/// color-coded surfaces, displacement/strain volumes, and mask intermediates
/// into out_dir. Throws ValidationFailed when the preflight rejects the pair
/// and force is not set.
HerniaReport run_pipeline(const RunConfig& config);

}  // namespace hedi
