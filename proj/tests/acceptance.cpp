// Acceptance suite: one pass/fail line per criterion, nonzero exit on failure.
// Oracle values come from closed-form phantoms generated in-process; the
// end-to-end criteria drive the installed CLI binary (argv[1]).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "hedi/errors.hpp"
#include "hedi/metrics.hpp"
#include "hedi/phantom.hpp"
#include "hedi/pipeline.hpp"
#include "hedi/preprocess.hpp"
#include "hedi/registration.hpp"
#include "hedi/strain.hpp"
#include "hedi/surface.hpp"
#include "hedi/volume_io.hpp"

using namespace hedi;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(bool pass, const std::string& line) {
    std::printf("[%s] %s\n", pass ? "PASS" : "FAIL", line.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

std::string fmt(const char* pattern, ...) {
    char buf[512];
    va_list args;
    va_start(args, pattern);
    std::vsnprintf(buf, sizeof buf, pattern, args);
    va_end(args);
    return buf;
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

fs::path work_dir() {
    fs::path p = fs::temp_directory_path() / "hedi_acceptance";
    fs::create_directories(p);
    return p;
}

double mean_ee(const DisplacementField& got, const DisplacementField& truth,
               const std::vector<char>& select) {
    double sum = 0;
    size_t n = 0;
    for (size_t q = 0; q < select.size(); ++q) {
        if (!select[q]) continue;
        Vec3 a{got.vectors[3 * q], got.vectors[3 * q + 1], got.vectors[3 * q + 2]};
        Vec3 b{truth.vectors[3 * q], truth.vectors[3 * q + 1], truth.vectors[3 * q + 2]};
        sum += (a - b).norm();
        ++n;
    }
    return n ? sum / double(n) : 0.0;
}

std::vector<char> body_voxels(const ImageVolume& mask) {
    std::vector<char> out(mask.voxels.size(), 0);
    for (size_t q = 0; q < mask.voxels.size(); ++q) out[q] = mask.voxels[q] > 0.5f ? 1 : 0;
    return out;
}

// 6-neighborhood surface band of a mask (boundary voxels of the body)
std::vector<char> surface_band(const ImageVolume& mask) {
    const Grid& g = mask.grid;
    std::vector<char> out(mask.voxels.size(), 0);
    for (int k = 0; k < g.dims[2]; ++k)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i) {
                if (mask.voxels[g.index(i, j, k)] <= 0.5f) continue;
                bool edge = i == 0 || j == 0 || k == 0 || i == g.dims[0] - 1 ||
                            j == g.dims[1] - 1 || k == g.dims[2] - 1;
                const int d[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
                for (int e = 0; e < 6 && !edge; ++e) {
                    int ii = i + d[e][0], jj = j + d[e][1], kk = k + d[e][2];
                    if (mask.voxels[g.index(ii, jj, kk)] <= 0.5f) edge = true;
                }
                if (edge) out[g.index(i, j, k)] = 1;
            }
    return out;
}

double mean_field_magnitude(const DisplacementField& f, const std::vector<char>& select) {
    double sum = 0;
    size_t n = 0;
    for (size_t q = 0; q < select.size(); ++q) {
        if (!select[q]) continue;
        sum += Vec3{f.vectors[3 * q], f.vectors[3 * q + 1], f.vectors[3 * q + 2]}.norm();
        ++n;
    }
    return n ? sum / double(n) : 0.0;
}

// ---- criterion 1 -----------------------------------------------------------

void criterion_identity() {
    Phantom ph = make_phantom(default_phantom_spec({128, 128, 128}));
    ImageVolume mask = body_mask(ph.image);
    auto t0 = Clock::now();
    DiffeomorphicMap map = register_symmetric(mask, mask);
    double dt = seconds_since(t0);
    double max_mag = 0;
    for (size_t q = 0; q < map.forward.grid.voxel_count(); ++q)
        max_mag = std::max(max_mag, Vec3{map.forward.vectors[3 * q], map.forward.vectors[3 * q + 1],
                                         map.forward.vectors[3 * q + 2]}.norm());
    double limit = 0.5 * mask.grid.spacing.x;
    bool pass = max_mag < limit && dt < 60.0;
    report(pass, fmt("1. registration identity (128^3): max |forward| = %.4f mm (< %.2f), "
                     "runtime %.1f s (< 60)", max_mag, limit, dt));
}

// ---- criterion 2 -----------------------------------------------------------

void criterion_translation() {
    Phantom ph = make_phantom(default_phantom_spec({160, 160, 128}));
    ImageVolume moved = apply_warp(ph.image, make_translation_warp({9, 0, 0}));
    ImageVolume rest = downsample(body_mask(ph.image), 3);
    ImageVolume valsalva = downsample(body_mask(moved), 3);
    DiffeomorphicMap map = register_symmetric(rest, valsalva);
    DisplacementField truth = ground_truth_field(make_translation_warp({9, 0, 0}), rest.grid);
    double ee = mean_ee(map.forward, truth, body_voxels(rest));
    report(ee < 1.5, fmt("2. translation recovery (9 mm): mean endpoint error %.3f mm (< 1.5)", ee));
}

// ---- criteria 3, 4, 7 share one bulge registration -------------------------

struct BulgeRun {
    PhantomSpec spec;
    Phantom ph;
    AnalyticWarp warp;
    ImageVolume rest_work, valsalva_work;
    DiffeomorphicMap map;
    ImageVolume rest_mask_iso;
};

BulgeRun run_bulge_phantom() {
    BulgeRun run;
    run.spec = default_phantom_spec({352, 256, 448});
    run.ph = make_phantom(run.spec);
    Vec3 anterior = run.spec.body.center;
    anterior.y -= run.spec.body.semi_axes.y;
    run.warp = make_bulge_warp(anterior, 30.0, 60.0, {0, -1, 0});
    ImageVolume moved = apply_warp(run.ph.image, run.warp);
    run.rest_mask_iso = body_mask(run.ph.image);
    run.rest_work = downsample(run.rest_mask_iso, 3);
    run.valsalva_work = downsample(body_mask(moved), 3);
    run.map = register_symmetric(run.rest_work, run.valsalva_work);
    return run;
}

void criterion_bulge(const BulgeRun& run) {
    DisplacementField truth = ground_truth_field(run.warp, run.rest_work.grid);
    double ee = mean_ee(run.map.forward, truth, surface_band(run.rest_work));

    TriMesh mesh = attach_scalars(marching_cubes(run.rest_mask_iso), run.map.forward,
                                  strain_from_field(run.map.forward));
    double max_disp = 0;
    for (float d : mesh.displacement_mm) max_disp = std::max(max_disp, double(d));

    bool pass = ee < 2.0 && std::abs(max_disp - 30.0) < 3.0;
    report(pass, fmt("3. bulge recovery (30 mm peak): surface-band mean EE %.3f mm (< 2.0), "
                     "reported max displacement %.2f mm (30 +- 3)", ee, max_disp));
}

void criterion_diffeomorphism(const BulgeRun& run) {
    std::vector<char> body = body_voxels(run.rest_work);
    ImageVolume jac = jacobian_determinant(run.map.forward);
    size_t pos = 0, n = 0;
    for (size_t q = 0; q < body.size(); ++q) {
        if (!body[q]) continue;
        ++n;
        if (jac.voxels[q] > 0.0f) ++pos;
    }
    double frac = double(pos) / double(n);
    double ic1 = mean_field_magnitude(compose(run.map.forward, run.map.inverse), body);
    double ic2 = mean_field_magnitude(compose(run.map.inverse, run.map.forward), body);
    bool pass = frac >= 0.999 && ic1 < 0.5 && ic2 < 0.5;
    report(pass, fmt("4. diffeomorphism: Jacobian > 0 at %.4f%% of body voxels (>= 99.9%%), "
                     "inverse consistency %.3f / %.3f mm (< 0.5)", 100.0 * frac, ic1, ic2));
}

void criterion_landmarks(const BulgeRun& run) {
    // 30 electrodes: 6 planar z-rows, 5 cm apart; per row, 5 positions walked
    // 5 cm apart in arc length along the anterior body cross-section.
    const Vec3 c = run.spec.body.center;
    const Vec3 a = run.spec.body.semi_axes;
    LandmarkSet lms;
    int id = 0;
    for (int row = 0; row < 6; ++row) {
        double dz = -125.0 + 50.0 * row;
        double s = std::sqrt(1.0 - (dz / a.z) * (dz / a.z));
        double ax = a.x * s, ay = a.y * s;
        // arc-length walk from the anterior pole (phi = 0 at y-min)
        for (int col = -2; col <= 2; ++col) {
            double target = 50.0 * col;
            double phi = 0.0, arc = 0.0;
            double dphi = target >= 0 ? 1e-4 : -1e-4;
            while (std::abs(arc) < std::abs(target)) {
                double dx = ax * std::cos(phi), dy = ay * std::sin(phi);
                arc += std::sqrt(dx * dx + dy * dy) * std::abs(dphi) * (target >= 0 ? 1 : 1);
                phi += dphi;
            }
            Vec3 rest{c.x + ax * std::sin(phi), c.y - ay * std::cos(phi), c.z + dz};
            lms.entries.push_back({"e" + std::to_string(id++), rest,
                                   rest + evaluate_warp(run.warp, rest)});
        }
    }

    LandmarkEvaluation eval = evaluate_landmarks(lms, run.map.forward);
    LandmarkSet shuffled = lms;
    std::reverse(shuffled.entries.begin(), shuffled.entries.end());
    std::swap(shuffled.entries[3], shuffled.entries[17]);
    LandmarkEvaluation eval2 = evaluate_landmarks(shuffled, run.map.forward);
    bool permutation_ok = eval.mae_mm == eval2.mae_mm &&
                          eval.normalized_error == eval2.normalized_error;

    bool pass = lms.entries.size() == 30 && eval.excluded_count == 0 && eval.mae_mm < 3.0 &&
                permutation_ok;
    report(pass, fmt("7. landmark protocol: 30-electrode 5 cm grid, MAE %.3f mm (< 3.0), "
                     "normalized error %.3f, permutation invariant: %s",
                     eval.mae_mm, eval.normalized_error, permutation_ok ? "yes" : "no"));
}

// ---- criterion 5 -----------------------------------------------------------

void criterion_strain() {
    bool pass = true;
    std::string detail;

    {  // uniform scaling s = 1.1
        Grid g{{24, 24, 24}, {2, 2, 2}, {0, 0, 0}};
        DisplacementField f = make_field(g);
        for (int k = 0; k < 24; ++k)
            for (int j = 0; j < 24; ++j)
                for (int i = 0; i < 24; ++i) f.set(i, j, k, g.index_to_world(i, j, k) * 0.1);
        StrainVolume s = strain_from_field(f);
        double worst = 0;
        for (int k = 1; k < 23; ++k)
            for (int j = 1; j < 23; ++j)
                for (int i = 1; i < 23; ++i)
                    worst = std::max(worst, std::abs(double(s.max_principal[g.index(i, j, k)]) - 0.105));
        pass = pass && worst <= 1e-3;
        detail += fmt("scaling |err| %.2e", worst);
    }
    {  // simple shear gamma = 0.2
        Grid g{{24, 24, 24}, {2, 2, 2}, {0, 0, 0}};
        DisplacementField f = make_field(g);
        for (int k = 0; k < 24; ++k)
            for (int j = 0; j < 24; ++j)
                for (int i = 0; i < 24; ++i)
                    f.set(i, j, k, {0.2 * g.index_to_world(i, j, k).y, 0.0, 0.0});
        StrainVolume s = strain_from_field(f);
        double expect = (0.02 + std::sqrt(0.04 + 0.0004)) / 2.0;
        double worst = 0;
        for (int k = 1; k < 23; ++k)
            for (int j = 1; j < 23; ++j)
                for (int i = 1; i < 23; ++i)
                    worst = std::max(worst, std::abs(double(s.max_principal[g.index(i, j, k)]) - expect));
        pass = pass && worst <= 1e-3;
        detail += fmt(", shear |err| %.2e", worst);
    }
    {  // rigid 5 degree rotation, refined once
        auto max_interior = [](const Grid& g) {
            const double ang = 5.0 * M_PI / 180.0;
            DisplacementField f = make_field(g);
            for (int k = 0; k < g.dims[2]; ++k)
                for (int j = 0; j < g.dims[1]; ++j)
                    for (int i = 0; i < g.dims[0]; ++i) {
                        Vec3 x = g.index_to_world(i, j, k);
                        f.set(i, j, k, {std::cos(ang) * x.x - std::sin(ang) * x.y - x.x,
                                        std::sin(ang) * x.x + std::cos(ang) * x.y - x.y, 0.0});
                    }
            StrainVolume s = strain_from_field(f);
            double m = 0;
            for (int k = 1; k < g.dims[2] - 1; ++k)
                for (int j = 1; j < g.dims[1] - 1; ++j)
                    for (int i = 1; i < g.dims[0] - 1; ++i)
                        m = std::max(m, std::abs(double(s.max_principal[g.index(i, j, k)])));
            return m;
        };
        double coarse = max_interior(Grid{{16, 16, 16}, {4, 4, 4}, {0, 0, 0}});
        double fine = max_interior(Grid{{31, 31, 31}, {2, 2, 2}, {0, 0, 0}});
        // differencing is exact on linear fields; the halving bound is checked
        // against the float32 noise floor
        bool rot_ok = coarse < 1e-3 && fine < 1e-3 && fine <= std::max(coarse / 2.0, 1e-6);
        pass = pass && rot_ok;
        detail += fmt(", rotation %.2e -> %.2e under halving", coarse, fine);
    }
    report(pass, "5. strain oracles: " + detail);
}

// ---- criterion 6 -----------------------------------------------------------

void criterion_surface() {
    const double r = 50.0;
    Grid g{{128, 128, 128}, {1, 1, 1}, {0, 0, 0}};
    ImageVolume mask = make_volume(g, VoxelKind::binary_mask);
    Vec3 c = g.index_to_world(64, 64, 64);
    for (int k = 0; k < 128; ++k)
        for (int j = 0; j < 128; ++j)
            for (int i = 0; i < 128; ++i)
                mask.voxels[g.index(i, j, k)] = (g.index_to_world(i, j, k) - c).norm() <= r ? 1.0f : 0.0f;
    TriMesh mesh = marching_cubes(mask);
    double sphere_area = mesh_area_mm2(mesh);
    double analytic_area = 4.0 * M_PI * r * r;
    bool area_ok = std::abs(sphere_area - analytic_area) / analytic_area < 0.02;

    // displacement channel that crosses 15 mm exactly at the 60 degree cap edge
    mesh.displacement_mm.resize(mesh.vertices.size());
    for (size_t v = 0; v < mesh.vertices.size(); ++v) {
        double cos_theta = (mesh.vertices[v].z - c.z) / (mesh.vertices[v] - c).norm();
        mesh.displacement_mm[v] = float(15.0 + 15.0 * (cos_theta - 0.5) / 0.5);
    }
    double cap = unstable_area(mesh, {15.0});
    double analytic_cap = 2.0 * M_PI * r * r * (1.0 - 0.5);
    bool cap_ok = std::abs(cap - analytic_cap) / analytic_cap < 0.05;

    bool monotone = true;
    double prev = 1e30;
    for (int s = 0; s < 10; ++s) {
        double area = unstable_area(mesh, {2.0 + 3.0 * s});
        if (area > prev) monotone = false;
        prev = area;
    }
    report(area_ok && cap_ok && monotone,
           fmt("6. surface oracles: sphere area %.0f mm^2 (4*pi*r^2 = %.0f, 2%%), 60-degree cap "
               "%.0f mm^2 (%.0f, 5%%), threshold sweep monotone: %s",
               sphere_area, analytic_area, cap, analytic_cap, monotone ? "yes" : "no"));
}

// ---- criterion 8 -----------------------------------------------------------

void criterion_metrics() {
    double lod = loss_of_domain(93.0, 7.0);
    double ratio = mesh_defect_ratio(1060.0, 220.0);
    ImageVolume labels = make_volume(Grid{{10, 10, 10}, {2, 2, 2}, {0, 0, 0}}, VoxelKind::label);
    for (size_t q = 0; q < 123; ++q) labels.voxels[q] = float(LabelCodes::hernia_sac);
    double vol = volume_of_label(labels, LabelCodes::hernia_sac);
    bool pass = lod == 0.93 && std::abs(ratio - 4.818) <= 1e-3 && vol == 123.0 * 8.0;
    report(pass, fmt("8. metrics arithmetic: loss_of_domain(93,7) = %.4f, "
                     "mesh_defect_ratio(1060,220) = %.4f (4.818 +- 1e-3), label volume exact: %s",
                     lod, ratio, vol == 123.0 * 8.0 ? "yes" : "no"));
}

// ---- criterion 9 -----------------------------------------------------------

void criterion_preflight() {
    auto header = [](std::array<int, 3> dims, Vec3 spacing, Vec3 origin = {0, 0, 0}) {
        return make_volume(Grid{dims, spacing, origin}, VoxelKind::intensity_hu, -1000.0f);
    };
    auto has = [](const ValidationReport& r, FindingCode c) {
        for (const auto& f : r.findings)
            if (f.code == c) return true;
        return false;
    };
    ImageVolume ref = header({256, 256, 200}, {0.85, 0.85, 1.0});

    ValidationReport matched = validate_scan_pair(ref, ref);
    ValidationReport truncated = validate_scan_pair(ref, header({256, 256, 160}, {0.85, 0.85, 1.0}));
    ValidationReport shifted = validate_scan_pair(ref, header({256, 256, 200}, {0.85, 0.85, 1.0}, {20, 0, 0}));
    ValidationReport scaled = validate_scan_pair(ref, header({200, 200, 200}, {0.85, 0.85, 1.0}));
    ValidationReport thick = validate_scan_pair(ref, header({256, 256, 200}, {0.85, 0.85, 5.0}));

    bool pass = matched.valid && !matched.note.empty() &&
                has(truncated, FindingCode::TruncationSuspected) &&
                has(truncated, FindingCode::SliceCountMismatch) &&
                has(shifted, FindingCode::FieldOfViewShift) &&
                has(scaled, FindingCode::ScalingMismatch) &&
                has(thick, FindingCode::SliceThicknessMismatch);
    report(pass, fmt("9. preflight taxonomy: truncation/shift/scaling/thickness fixtures flagged, "
                     "matched pair clean with foreign-object reminder (%zu findings on matched)",
                     matched.findings.size()));
}

// ---- criteria 10 and 11 drive the CLI binary -------------------------------

int run_cli(const std::string& cli, const std::string& args) {
    std::string cmd = "\"" + cli + "\" " + args + " > /dev/null 2>&1";
    int rc = std::system(cmd.c_str());
    return rc == -1 ? -1 : WEXITSTATUS(rc);
}

// quadrature oracle: area of the rest-surface region with |u_true| > threshold
double analytic_unstable_area(const Ellipsoid& body, const AnalyticWarp& warp, double threshold) {
    const int nu = 2048, nv = 1024;
    double area = 0.0;
    for (int vi = 0; vi < nv; ++vi) {
        double theta0 = M_PI * vi / nv, theta1 = M_PI * (vi + 1) / nv;
        double theta = 0.5 * (theta0 + theta1);
        for (int ui = 0; ui < nu; ++ui) {
            double phi = 2.0 * M_PI * (ui + 0.5) / nu;
            Vec3 p{body.center.x + body.semi_axes.x * std::sin(theta) * std::cos(phi),
                   body.center.y + body.semi_axes.y * std::sin(theta) * std::sin(phi),
                   body.center.z + body.semi_axes.z * std::cos(theta)};
            if (evaluate_warp(warp, p).norm() <= threshold) continue;
            // surface element via the cross product of the parametric derivatives
            Vec3 dt{body.semi_axes.x * std::cos(theta) * std::cos(phi),
                    body.semi_axes.y * std::cos(theta) * std::sin(phi),
                    -body.semi_axes.z * std::sin(theta)};
            Vec3 dp{-body.semi_axes.x * std::sin(theta) * std::sin(phi),
                    body.semi_axes.y * std::sin(theta) * std::cos(phi), 0.0};
            area += dt.cross(dp).norm() * (M_PI / nv) * (2.0 * M_PI / nu);
        }
    }
    return area;
}

void criterion_end_to_end(const std::string& cli) {
    fs::path dir = work_dir() / "e2e";
    fs::create_directories(dir);

    // Broad, flat abdominal wall facing -z so the 30 mm bulge and its 15 mm
    // rim stay on gently curved surface within the fixed 256x256x200 frame.
    PhantomSpec spec;
    spec.dims = {256, 256, 200};
    spec.body = Ellipsoid{{128, 128, 118}, {115, 115, 55}};
    spec.cavity = Ellipsoid{{128, 128, 118}, {72, 72, 34}};
    Vec3 anterior = spec.body.center;
    anterior.z -= spec.body.semi_axes.z;
    // hernia sac on the posterior pole: supplies label volumes without
    // perturbing the bulge-facing wall that the area oracle integrates over
    Vec3 posterior = spec.body.center;
    posterior.z += spec.body.semi_axes.z;
    spec.hernia = Ellipsoid{posterior, {26, 26, 8}};
    Phantom ph = make_phantom(spec);
    AnalyticWarp warp = make_bulge_warp(anterior, 30.0, 50.0, {0, 0, -1});
    ImageVolume moved = apply_warp(ph.image, warp);
    ImageVolume moved_labels = apply_warp(ph.labels, warp);
    save_volume(ph.image, (dir / "rest.mhd").string());
    save_volume(moved, (dir / "valsalva.mhd").string());
    save_volume(ph.labels, (dir / "labels_rest.mhd").string());
    save_volume(moved_labels, (dir / "labels_valsalva.mhd").string());

    fs::path out = dir / "out";
    auto t0 = Clock::now();
    int rc = run_cli(cli, "run --rest-path " + (dir / "rest.mhd").string() +
                              " --valsalva-path " + (dir / "valsalva.mhd").string() +
                              " --labels-rest-path " + (dir / "labels_rest.mhd").string() +
                              " --labels-valsalva-path " + (dir / "labels_valsalva.mhd").string() +
                              " --out-dir " + out.string());
    double dt = seconds_since(t0);

    bool outputs_ok = false, labels_ok = false, area_ok = false, maxdisp_ok = false;
    double unstable = 0, analytic = 0, max_disp = 0;
    if (rc == 0) {
        try {
            load_volume((out / "body_mask_rest.mhd").string(), VoxelKind::binary_mask);
            load_field((out / "displacement_field.mhd").string());
            load_volume((out / "strain_max_principal.mhd").string());
            load_mesh((out / "rest_surface.vtk").string());
            load_mesh((out / "valsalva_surface.vtk").string());
            HerniaReport rep = load_report((out / "report.json").string());
            outputs_ok = true;
            unstable = rep.unstable_area_cm2 * 100.0;  // back to mm^2
            max_disp = rep.max_displacement_mm;
            analytic = analytic_unstable_area(spec.body, warp, rep.threshold_mm);
            labels_ok = rep.loss_of_domain_value.has_value() &&
                        rep.hernia_volume_valsalva_mm3.has_value() &&
                        *rep.hernia_volume_valsalva_mm3 > 0;
            area_ok = std::abs(unstable - analytic) / analytic < 0.10;
            maxdisp_ok = std::abs(max_disp - 30.0) < 3.0;
        } catch (const std::exception& e) {
            std::fprintf(stderr, "e2e output check failed: %s\n", e.what());
        }
    }
    bool pass = rc == 0 && dt < 600.0 && outputs_ok && labels_ok && area_ok && maxdisp_ok;
    report(pass, fmt("10. end-to-end cmd_run (256x256x200): exit %d, %.0f s (< 600), unstable area "
                     "%.0f mm^2 vs analytic %.0f (10%%: %s), max displacement %.2f mm (30 +- 3), "
                     "volumes and ratios present: %s",
                     rc, dt, unstable, analytic, area_ok ? "ok" : "off", max_disp,
                     labels_ok ? "yes" : "no"));
}

std::string normalize_report(const fs::path& path, const std::string& out_name) {
    std::ifstream in(path);
    std::stringstream ss;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find("wall_clock_seconds") != std::string::npos) continue;
        ss << std::regex_replace(line, std::regex(out_name), "OUT") << "\n";
    }
    return ss.str();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void criterion_determinism(const std::string& cli) {
    fs::path dir = work_dir() / "determinism";
    fs::create_directories(dir);
    PhantomSpec spec = default_phantom_spec({128, 128, 96});
    Phantom ph = make_phantom(spec);
    Vec3 anterior = spec.body.center;
    anterior.y -= spec.body.semi_axes.y;
    ImageVolume moved = apply_warp(ph.image, make_bulge_warp(anterior, 15.0, 40.0, {0, -1, 0}));
    save_volume(ph.image, (dir / "rest.mhd").string());
    save_volume(moved, (dir / "valsalva.mhd").string());

    std::string base = "run --rest-path " + (dir / "rest.mhd").string() + " --valsalva-path " +
                       (dir / "valsalva.mhd").string() + " --out-dir ";
    int rc1 = run_cli(cli, base + (dir / "out_a").string());
    int rc2 = run_cli(cli, base + (dir / "out_b").string());

    bool pass = rc1 == 0 && rc2 == 0;
    if (pass) {
        std::string ra = normalize_report(dir / "out_a" / "report.json", "out_a");
        std::string rb = normalize_report(dir / "out_b" / "report.json", "out_b");
        bool report_same = ra == rb;
        bool mesh_same = slurp(dir / "out_a" / "rest_surface.vtk") ==
                             slurp(dir / "out_b" / "rest_surface.vtk") &&
                         slurp(dir / "out_a" / "valsalva_surface.vtk") ==
                             slurp(dir / "out_b" / "valsalva_surface.vtk");
        pass = report_same && mesh_same;
        report(pass, fmt("11. determinism: repeated cmd_run byte-identical report (modulo wall "
                         "clock): %s, byte-identical meshes: %s",
                         report_same ? "yes" : "no", mesh_same ? "yes" : "no"));
    } else {
        report(false, fmt("11. determinism: cmd_run exits %d / %d", rc1, rc2));
    }
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: %s <path-to-hedi-cli>\n", argv[0]);
        return 2;
    }
    std::string cli = argv[1];

    criterion_identity();
    criterion_translation();
    BulgeRun bulge = run_bulge_phantom();
    criterion_bulge(bulge);
    criterion_diffeomorphism(bulge);
    criterion_strain();
    criterion_surface();
    criterion_landmarks(bulge);
    criterion_metrics();
    criterion_preflight();
    criterion_end_to_end(cli);
    criterion_determinism(cli);

    if (g_failures == 0) std::printf("all acceptance criteria passed\n");
    else std::printf("%d acceptance criteria FAILED\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
