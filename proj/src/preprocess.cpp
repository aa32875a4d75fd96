#include "hedi/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <queue>

#include "hedi/errors.hpp"
#include "hedi/sampling.hpp"

namespace hedi {

std::string to_string(FindingCode code) {
    switch (code) {
        case FindingCode::SliceCountMismatch: return "SliceCountMismatch";
        case FindingCode::SliceThicknessMismatch: return "SliceThicknessMismatch";
        case FindingCode::PixelSpacingMismatch: return "PixelSpacingMismatch";
        case FindingCode::FieldOfViewShift: return "FieldOfViewShift";
        case FindingCode::ScalingMismatch: return "ScalingMismatch";
        case FindingCode::TruncationSuspected: return "TruncationSuspected";
    }
    return "Unknown";
}

namespace {

std::string fmt(const char* pattern, double a, double b) {
    char buf[256];
    std::snprintf(buf, sizeof buf, pattern, a, b);
    return buf;
}

bool rel_differ(double a, double b, double tol) {
    return std::abs(a - b) > tol * std::max(std::abs(a), std::abs(b));
}

}  // namespace

ValidationReport validate_scan_pair(const ImageVolume& rest, const ImageVolume& valsalva,
                                    double tolerance) {
    ValidationReport report;
    report.note =
        "foreign objects or body parts (e.g. arms) in the field of view are not "
        "detected automatically; inspect both scans visually";

    const Grid& a = rest.grid;
    const Grid& b = valsalva.grid;

    if (a.dims[2] != b.dims[2])
        report.findings.push_back({FindingCode::SliceCountMismatch,
                                   fmt("slice counts %.0f vs %.0f", a.dims[2], b.dims[2])});
    if (rel_differ(a.spacing.z, b.spacing.z, tolerance))
        report.findings.push_back({FindingCode::SliceThicknessMismatch,
                                   fmt("slice thickness %g mm vs %g mm", a.spacing.z, b.spacing.z)});
    if (rel_differ(a.spacing.x, b.spacing.x, tolerance) || rel_differ(a.spacing.y, b.spacing.y, tolerance))
        report.findings.push_back({FindingCode::PixelSpacingMismatch,
                                   fmt("pixel spacing (%g, %g) mm differs between scans",
                                       a.spacing.x, a.spacing.y)});
    if (a.dims[0] != b.dims[0] || a.dims[1] != b.dims[1])
        report.findings.push_back({FindingCode::ScalingMismatch,
                                   fmt("in-plane matrix %.0fx%.0f differs from the other scan",
                                       a.dims[0], a.dims[1])});

    double shift_x = std::abs(a.origin.x - b.origin.x);
    double shift_y = std::abs(a.origin.y - b.origin.y);
    double allow_x = 2.0 * std::max(a.spacing.x, b.spacing.x);
    double allow_y = 2.0 * std::max(a.spacing.y, b.spacing.y);
    if (shift_x > allow_x || shift_y > allow_y)
        report.findings.push_back({FindingCode::FieldOfViewShift,
                                   fmt("in-plane origin offset (%.2f, %.2f) mm", shift_x, shift_y)});

    double zext_a = a.dims[2] * a.spacing.z;
    double zext_b = b.dims[2] * b.spacing.z;
    if (rel_differ(zext_a, zext_b, 0.05))
        report.findings.push_back({FindingCode::TruncationSuspected,
                                   fmt("z extent %.1f mm vs %.1f mm", zext_a, zext_b)});

    report.valid = report.findings.empty();
    return report;
}

namespace {

// Largest 26-connected component of the thresholded foreground; raster-order
// seeding keeps labeling deterministic.
std::vector<uint8_t> largest_component_26(const std::vector<uint8_t>& fg,
                                          const std::array<int, 3>& dims) {
    const int nx = dims[0], ny = dims[1], nz = dims[2];
    const size_t n = size_t(nx) * size_t(ny) * size_t(nz);
    std::vector<int32_t> label(n, 0);
    std::vector<size_t> stack;
    std::vector<size_t> best_sizes;

    int32_t next = 0;
    size_t best_count = 0;
    int32_t best_label = 0;

    for (size_t seed = 0; seed < n; ++seed) {
        if (!fg[seed] || label[seed]) continue;
        ++next;
        size_t count = 0;
        stack.clear();
        stack.push_back(seed);
        label[seed] = next;
        while (!stack.empty()) {
            size_t cur = stack.back();
            stack.pop_back();
            ++count;
            int k = int(cur / (size_t(nx) * size_t(ny)));
            int rem = int(cur % (size_t(nx) * size_t(ny)));
            int j = rem / nx;
            int i = rem % nx;
            for (int dk = -1; dk <= 1; ++dk)
                for (int dj = -1; dj <= 1; ++dj)
                    for (int di = -1; di <= 1; ++di) {
                        if (!di && !dj && !dk) continue;
                        int ii = i + di, jj = j + dj, kk = k + dk;
                        if (ii < 0 || jj < 0 || kk < 0 || ii >= nx || jj >= ny || kk >= nz) continue;
                        size_t q = size_t(ii) + size_t(nx) * (size_t(jj) + size_t(ny) * size_t(kk));
                        if (fg[q] && !label[q]) {
                            label[q] = next;
                            stack.push_back(q);
                        }
                    }
        }
        if (count > best_count) {
            best_count = count;
            best_label = next;
        }
    }

    std::vector<uint8_t> out(n, 0);
    for (size_t i = 0; i < n; ++i) out[i] = (label[i] == best_label) ? 1 : 0;
    return out;
}

// In-slice hole fill: background 4-connected to the slice border stays
// background, anything else is enclosed and becomes body.
void fill_holes_in_slices(std::vector<uint8_t>& mask, const std::array<int, 3>& dims) {
    const int nx = dims[0], ny = dims[1], nz = dims[2];
    const size_t slice = size_t(nx) * size_t(ny);

#pragma omp parallel for schedule(dynamic)
    for (int k = 0; k < nz; ++k) {
        const uint8_t* m = mask.data() + size_t(k) * slice;
        std::vector<uint8_t> outside(slice, 0);
        std::vector<int> stack;
        auto push = [&](int i, int j) {
            size_t q = size_t(i) + size_t(nx) * size_t(j);
            if (!m[q] && !outside[q]) {
                outside[q] = 1;
                stack.push_back(int(q));
            }
        };
        for (int i = 0; i < nx; ++i) {
            push(i, 0);
            push(i, ny - 1);
        }
        for (int j = 0; j < ny; ++j) {
            push(0, j);
            push(nx - 1, j);
        }
        while (!stack.empty()) {
            int cur = stack.back();
            stack.pop_back();
            int j = cur / nx, i = cur % nx;
            if (i > 0) push(i - 1, j);
            if (i + 1 < nx) push(i + 1, j);
            if (j > 0) push(i, j - 1);
            if (j + 1 < ny) push(i, j + 1);
        }
        uint8_t* mw = mask.data() + size_t(k) * slice;
        for (size_t q = 0; q < slice; ++q)
            if (!mw[q] && !outside[q]) mw[q] = 1;
    }
}

}  // namespace

ImageVolume body_mask(const ImageVolume& volume, const PreprocessConfig& config) {
    if (volume.kind != VoxelKind::intensity_hu)
        throw Error("body_mask expects an HU intensity volume");

    const size_t n = volume.grid.voxel_count();
    std::vector<uint8_t> fg(n, 0);
    size_t above = 0;
    for (size_t i = 0; i < n; ++i) {
        if (volume.voxels[i] >= config.hu_threshold) {
            fg[i] = 1;
            ++above;
        }
    }
    if (above == 0) throw EmptyMask("no voxel above HU threshold");

    std::vector<uint8_t> comp = largest_component_26(fg, volume.grid.dims);
    if (config.fill_internal_holes) fill_holes_in_slices(comp, volume.grid.dims);

    ImageVolume mask = make_volume(volume.grid, VoxelKind::binary_mask);
    for (size_t i = 0; i < n; ++i) mask.voxels[i] = comp[i] ? 1.0f : 0.0f;
    return mask;
}

ImageVolume resample(const ImageVolume& volume, const Vec3& target_spacing_mm, InterpMode mode) {
    if (target_spacing_mm.x <= 0 || target_spacing_mm.y <= 0 || target_spacing_mm.z <= 0)
        throw InvalidSpacing("target spacing must be positive");
    if (volume.kind == VoxelKind::label && mode == InterpMode::linear)
        throw Error("label volumes require nearest-neighbor resampling");

    const Grid& in = volume.grid;
    Grid out_grid;
    out_grid.spacing = target_spacing_mm;
    out_grid.origin = in.origin;
    Vec3 extent = in.extent();
    for (int axis = 0; axis < 3; ++axis) {
        double d = extent[axis] / target_spacing_mm[axis];
        out_grid.dims[axis] = std::max(1, int(std::ceil(d - 1e-9)));
    }

    ImageVolume out = make_volume(out_grid, volume.kind);
    const bool rebinarize = volume.kind == VoxelKind::binary_mask && mode == InterpMode::linear;

    const double rx = target_spacing_mm.x / in.spacing.x;
    const double ry = target_spacing_mm.y / in.spacing.y;
    const double rz = target_spacing_mm.z / in.spacing.z;

#pragma omp parallel for schedule(static)
    for (int k = 0; k < out_grid.dims[2]; ++k) {
        for (int j = 0; j < out_grid.dims[1]; ++j) {
            size_t row = out_grid.index(0, j, k);
            for (int i = 0; i < out_grid.dims[0]; ++i) {
                double v = sample_volume_index(volume, i * rx, j * ry, k * rz, mode);
                if (rebinarize) v = v >= 0.5 ? 1.0 : 0.0;
                out.voxels[row + size_t(i)] = float(v);
            }
        }
    }
    return out;
}

ImageVolume downsample(const ImageVolume& volume, int factor) {
    if (factor < 1) throw InvalidSpacing("downsample factor must be >= 1");
    Vec3 target = volume.grid.spacing * double(factor);
    InterpMode mode = volume.kind == VoxelKind::label ? InterpMode::nearest : InterpMode::linear;
    return resample(volume, target, mode);
}

ImageVolume resample_to_grid(const ImageVolume& volume, const Grid& target, InterpMode mode) {
    if (target.spacing.x <= 0 || target.spacing.y <= 0 || target.spacing.z <= 0)
        throw InvalidSpacing("target spacing must be positive");
    if (volume.kind == VoxelKind::label && mode == InterpMode::linear)
        throw Error("label volumes require nearest-neighbor resampling");

    ImageVolume out = make_volume(target, volume.kind);
    const bool rebinarize = volume.kind == VoxelKind::binary_mask && mode == InterpMode::linear;

#pragma omp parallel for schedule(static)
    for (int k = 0; k < target.dims[2]; ++k)
        for (int j = 0; j < target.dims[1]; ++j)
            for (int i = 0; i < target.dims[0]; ++i) {
                Vec3 c = volume.grid.world_to_index(target.index_to_world(i, j, k));
                double v = sample_volume_index(volume, c.x, c.y, c.z, mode);
                if (rebinarize) v = v >= 0.5 ? 1.0 : 0.0;
                out.voxels[target.index(i, j, k)] = float(v);
            }
    return out;
}

}  // namespace hedi
