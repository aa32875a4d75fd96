#include "hedi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "hedi/errors.hpp"
#include "hedi/registration.hpp"

namespace hedi {

using nlohmann::ordered_json;

double volume_of_label(const ImageVolume& labels, int code) {
    if (labels.kind == VoxelKind::intensity_hu)
        throw Error("volume_of_label expects a label or mask volume");
    size_t count = 0;
    for (float v : labels.voxels)
        if (std::lround(v) == code) ++count;
    const Vec3& s = labels.grid.spacing;
    return double(count) * s.x * s.y * s.z;
}

double loss_of_domain(double hernia_mm3, double cavity_mm3) {
    if (hernia_mm3 < 0.0 || cavity_mm3 < 0.0) throw Error("volumes must be non-negative");
    if (hernia_mm3 + cavity_mm3 <= 0.0) throw BothZero("hernia and cavity volumes are both zero");
    return hernia_mm3 / (hernia_mm3 + cavity_mm3);
}

double loss_of_domain_hernia_to_cavity(double hernia_mm3, double cavity_mm3) {
    if (hernia_mm3 < 0.0 || cavity_mm3 < 0.0) throw Error("volumes must be non-negative");
    if (cavity_mm3 <= 0.0) throw BothZero("cavity volume is zero");
    return hernia_mm3 / cavity_mm3;
}

double mesh_defect_ratio(double mesh_area_cm2, double defect_area_cm2) {
    if (defect_area_cm2 <= 0.0) throw ZeroDefectArea("defect area must be positive");
    return mesh_area_cm2 / defect_area_cm2;
}

LandmarkEvaluation evaluate_landmarks(const LandmarkSet& landmarks, const DisplacementField& field) {
    if (landmarks.entries.empty()) throw EmptyLandmarkSet("no landmarks to evaluate");

    LandmarkEvaluation eval;
    std::vector<double> errors;
    double max_measured = 0.0;

    for (const Landmark& lm : landmarks.entries) {
        LandmarkError e;
        e.id = lm.id;
        e.measured_mm = (lm.valsalva_point - lm.rest_point).norm();
        try {
            e.predicted_mm = sample_displacement(field, lm.rest_point).norm();
        } catch (const OutOfBounds&) {
            e.out_of_bounds = true;
            ++eval.excluded_count;
            eval.per_landmark.push_back(std::move(e));
            continue;
        }
        e.abs_error_mm = std::abs(e.measured_mm - e.predicted_mm);
        errors.push_back(e.abs_error_mm);
        max_measured = std::max(max_measured, e.measured_mm);
        eval.per_landmark.push_back(std::move(e));
    }

    if (errors.empty()) throw EmptyLandmarkSet("all landmarks fall outside the field bounds");
    // sorted summation keeps the aggregates exactly permutation invariant
    std::sort(errors.begin(), errors.end());
    double err_sum = 0.0;
    for (double e : errors) err_sum += e;
    eval.mae_mm = err_sum / double(errors.size());
    eval.normalized_error = max_measured > 0.0 ? eval.mae_mm / max_measured : 0.0;
    return eval;
}

namespace {

// Fixed float formatting for schema-stable files.
double round_sig(double v, int digits = 6) {
    if (v == 0.0 || !std::isfinite(v)) return v;
    double mag = std::pow(10.0, digits - 1 - int(std::floor(std::log10(std::abs(v)))));
    return std::round(v * mag) / mag;
}

}  // namespace

ordered_json landmark_evaluation_to_json(const LandmarkEvaluation& eval) {
    ordered_json j;
    j["mae_mm"] = round_sig(eval.mae_mm);
    j["normalized_error"] = round_sig(eval.normalized_error);
    j["excluded_count"] = eval.excluded_count;
    ordered_json arr = ordered_json::array();
    for (const LandmarkError& e : eval.per_landmark) {
        ordered_json le;
        le["id"] = e.id;
        le["measured_mm"] = round_sig(e.measured_mm);
        if (e.out_of_bounds) {
            le["out_of_bounds"] = true;
        } else {
            le["predicted_mm"] = round_sig(e.predicted_mm);
            le["abs_error_mm"] = round_sig(e.abs_error_mm);
        }
        arr.push_back(std::move(le));
    }
    j["per_landmark"] = std::move(arr);
    return j;
}

namespace {

void validate_report(const HerniaReport& r) {
    auto check_nonneg = [](const std::optional<double>& v, const char* name) {
        if (v && (*v < 0.0 || !std::isfinite(*v)))
            throw Error(std::string(name) + " must be finite and non-negative");
    };
    check_nonneg(r.cavity_volume_rest_mm3, "cavity_volume_mm3.rest");
    check_nonneg(r.cavity_volume_valsalva_mm3, "cavity_volume_mm3.valsalva");
    check_nonneg(r.hernia_volume_rest_mm3, "hernia_volume_mm3.rest");
    check_nonneg(r.hernia_volume_valsalva_mm3, "hernia_volume_mm3.valsalva");
    check_nonneg(r.defect_area_cm2, "defect_area_cm2");
    check_nonneg(r.mesh_area_cm2, "mesh_area_cm2");
    if (r.unstable_area_cm2 < 0.0) throw Error("unstable_area_cm2 must be non-negative");
    if (r.max_displacement_mm < 0.0) throw Error("max_displacement_mm must be non-negative");
    if (r.threshold_mm <= 0.0) throw Error("threshold_mm must be positive");
    if (r.loss_of_domain_value && (*r.loss_of_domain_value < 0.0 || *r.loss_of_domain_value > 1.0))
        throw Error("loss_of_domain must lie in [0, 1]");
    bool have_both = r.defect_area_cm2 && r.mesh_area_cm2;
    if (r.mesh_defect_ratio_value.has_value() != have_both)
        throw Error("mesh_defect_ratio must be present exactly when both areas are");
}

}  // namespace

std::string report_to_json(const HerniaReport& report) {
    validate_report(report);

    ordered_json j;
    j["tool"] = "hedi";
    j["version"] = report.tool_version.empty() ? "unknown" : report.tool_version;
    j["threshold_mm"] = round_sig(report.threshold_mm);
    j["unstable_area_cm2"] = round_sig(report.unstable_area_cm2);
    j["max_displacement_mm"] = round_sig(report.max_displacement_mm);

    auto frame_pair = [](const std::optional<double>& rest, const std::optional<double>& valsalva) {
        ordered_json p;
        if (rest) p["rest"] = round_sig(*rest);
        if (valsalva) p["valsalva"] = round_sig(*valsalva);
        return p;
    };
    if (report.cavity_volume_rest_mm3 || report.cavity_volume_valsalva_mm3)
        j["cavity_volume_mm3"] =
            frame_pair(report.cavity_volume_rest_mm3, report.cavity_volume_valsalva_mm3);
    if (report.hernia_volume_rest_mm3 || report.hernia_volume_valsalva_mm3)
        j["hernia_volume_mm3"] =
            frame_pair(report.hernia_volume_rest_mm3, report.hernia_volume_valsalva_mm3);
    if (report.loss_of_domain_value) {
        j["loss_of_domain"] = round_sig(*report.loss_of_domain_value);
        j["loss_of_domain_formula"] = "hernia/(hernia+cavity)";
        j["loss_of_domain_frame"] = report.loss_of_domain_frame;
    }
    if (report.defect_area_cm2) j["defect_area_cm2"] = round_sig(*report.defect_area_cm2);
    if (report.mesh_area_cm2) j["mesh_area_cm2"] = round_sig(*report.mesh_area_cm2);
    if (report.mesh_defect_ratio_value)
        j["mesh_defect_ratio"] = round_sig(*report.mesh_defect_ratio_value);
    if (report.landmark_eval) j["landmark_eval"] = landmark_evaluation_to_json(*report.landmark_eval);

    ordered_json prov;
    prov["rest_path"] = report.rest_path;
    prov["valsalva_path"] = report.valsalva_path;
    prov["config"] = report.config;
    prov["tool_version"] = report.tool_version;
    prov["wall_clock_seconds"] = round_sig(report.wall_clock_seconds);
    j["provenance"] = std::move(prov);

    return j.dump(2) + "\n";
}

void write_report(const HerniaReport& report, const std::string& path) {
    std::string payload = report_to_json(report);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoFailure("cannot write " + path);
    out << payload;
    if (!out) throw IoFailure("failed writing " + path);
}

HerniaReport load_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoFailure("cannot open " + path);
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw CorruptHeader(std::string("invalid report JSON: ") + e.what());
    }

    HerniaReport r;
    r.threshold_mm = j.value("threshold_mm", 15.0);
    r.unstable_area_cm2 = j.value("unstable_area_cm2", 0.0);
    r.max_displacement_mm = j.value("max_displacement_mm", 0.0);
    if (j.contains("cavity_volume_mm3")) {
        const auto& p = j["cavity_volume_mm3"];
        if (p.contains("rest")) r.cavity_volume_rest_mm3 = p["rest"].get<double>();
        if (p.contains("valsalva")) r.cavity_volume_valsalva_mm3 = p["valsalva"].get<double>();
    }
    if (j.contains("hernia_volume_mm3")) {
        const auto& p = j["hernia_volume_mm3"];
        if (p.contains("rest")) r.hernia_volume_rest_mm3 = p["rest"].get<double>();
        if (p.contains("valsalva")) r.hernia_volume_valsalva_mm3 = p["valsalva"].get<double>();
    }
    if (j.contains("loss_of_domain")) {
        r.loss_of_domain_value = j["loss_of_domain"].get<double>();
        r.loss_of_domain_frame = j.value("loss_of_domain_frame", "");
    }
    if (j.contains("defect_area_cm2")) r.defect_area_cm2 = j["defect_area_cm2"].get<double>();
    if (j.contains("mesh_area_cm2")) r.mesh_area_cm2 = j["mesh_area_cm2"].get<double>();
    if (j.contains("mesh_defect_ratio"))
        r.mesh_defect_ratio_value = j["mesh_defect_ratio"].get<double>();
    if (j.contains("landmark_eval")) {
        const auto& le = j["landmark_eval"];
        LandmarkEvaluation eval;
        eval.mae_mm = le.value("mae_mm", 0.0);
        eval.normalized_error = le.value("normalized_error", 0.0);
        eval.excluded_count = le.value("excluded_count", 0);
        for (const auto& e : le.value("per_landmark", ordered_json::array())) {
            LandmarkError lm;
            lm.id = e.value("id", "");
            lm.measured_mm = e.value("measured_mm", 0.0);
            lm.out_of_bounds = e.value("out_of_bounds", false);
            lm.predicted_mm = e.value("predicted_mm", 0.0);
            lm.abs_error_mm = e.value("abs_error_mm", 0.0);
            eval.per_landmark.push_back(std::move(lm));
        }
        r.landmark_eval = std::move(eval);
    }
    if (j.contains("provenance")) {
        const auto& prov = j["provenance"];
        r.rest_path = prov.value("rest_path", "");
        r.valsalva_path = prov.value("valsalva_path", "");
        r.config = prov.value("config", ordered_json::object());
        r.tool_version = prov.value("tool_version", "");
        r.wall_clock_seconds = prov.value("wall_clock_seconds", 0.0);
    }
    return r;
}

}  // namespace hedi
