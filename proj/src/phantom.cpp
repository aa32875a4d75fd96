#include "hedi/phantom.hpp"

#include <cmath>

#include "hedi/errors.hpp"
#include "hedi/sampling.hpp"

namespace hedi {

namespace {

// Deterministic unit directions (spherical Fibonacci lattice) for the numeric
// containment/overlap checks of the geometric preconditions.
std::vector<Vec3> sphere_directions(int n) {
    std::vector<Vec3> dirs;
    dirs.reserve(size_t(n));
    const double golden = (1.0 + std::sqrt(5.0)) / 2.0;
    for (int i = 0; i < n; ++i) {
        double z = 1.0 - 2.0 * (i + 0.5) / n;
        double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        double phi = 2.0 * M_PI * (i / golden - std::floor(i / golden));
        dirs.push_back({r * std::cos(phi), r * std::sin(phi), z});
    }
    return dirs;
}

Vec3 surface_point(const Ellipsoid& e, const Vec3& dir) {
    return {e.center.x + e.semi_axes.x * dir.x, e.center.y + e.semi_axes.y * dir.y,
            e.center.z + e.semi_axes.z * dir.z};
}

void validate_spec(const PhantomSpec& spec) {
    if (spec.dims[0] <= 0 || spec.dims[1] <= 0 || spec.dims[2] <= 0)
        throw InvalidSpec("phantom dims must be positive");
    if (spec.spacing.x <= 0 || spec.spacing.y <= 0 || spec.spacing.z <= 0)
        throw InvalidSpec("phantom spacing must be positive");
    if (spec.body.semi_axes.x <= 0 || spec.body.semi_axes.y <= 0 || spec.body.semi_axes.z <= 0)
        throw InvalidSpec("body semi-axes must be positive");
    if (spec.cavity.semi_axes.x <= 0 || spec.cavity.semi_axes.y <= 0 || spec.cavity.semi_axes.z <= 0)
        throw InvalidSpec("cavity semi-axes must be positive");

    const auto dirs = sphere_directions(256);
    for (const Vec3& d : dirs) {
        if (spec.body.level(surface_point(spec.cavity, d)) >= 1.0 - 1e-9)
            throw InvalidSpec("cavity must lie strictly inside the body");
    }
    if (spec.hernia) {
        bool any_inside = false, any_outside = false;
        for (const Vec3& d : dirs) {
            double lv = spec.body.level(surface_point(*spec.hernia, d));
            if (lv < 1.0) any_inside = true;
            if (lv > 1.0) any_outside = true;
        }
        if (!any_inside || !any_outside)
            throw InvalidSpec("hernia ellipsoid must overlap the body boundary");
    }
}

}  // namespace

PhantomSpec default_phantom_spec(std::array<int, 3> dims, Vec3 spacing) {
    PhantomSpec spec;
    spec.dims = dims;
    spec.spacing = spacing;
    Vec3 extent{dims[0] * spacing.x, dims[1] * spacing.y, dims[2] * spacing.z};
    Vec3 center = extent * 0.5;
    spec.body = {center, {0.35 * extent.x, 0.30 * extent.y, 0.40 * extent.z}};
    spec.cavity = {center, {0.22 * extent.x, 0.18 * extent.y, 0.26 * extent.z}};
    return spec;
}

Phantom make_phantom(const PhantomSpec& spec) {
    validate_spec(spec);

    Grid grid{spec.dims, spec.spacing, spec.origin};
    Phantom ph{make_volume(grid, VoxelKind::intensity_hu, spec.air_hu),
               make_volume(grid, VoxelKind::label, 0.0f)};

    const int nx = spec.dims[0], ny = spec.dims[1], nz = spec.dims[2];
    // Table slab: full x/z extent, 3 voxels thick, one voxel row off the y-max face.
    const int slab_lo = ny - 4, slab_hi = ny - 2;

#pragma omp parallel for schedule(static)
    for (int k = 0; k < nz; ++k) {
        for (int j = 0; j < ny; ++j) {
            for (int i = 0; i < nx; ++i) {
                Vec3 p = grid.index_to_world(i, j, k);
                size_t idx = grid.index(i, j, k);
                bool in_body = spec.body.contains(p);
                bool in_hernia = spec.hernia && spec.hernia->contains(p);
                if (in_body || in_hernia) {
                    ph.image.voxels[idx] = spec.soft_tissue_hu;
                    if (spec.cavity.contains(p))
                        ph.labels.voxels[idx] = float(LabelCodes::abdominal_cavity);
                    else if (in_hernia)
                        ph.labels.voxels[idx] = float(LabelCodes::hernia_sac);
                } else if (spec.table_hu && j >= slab_lo && j <= slab_hi) {
                    ph.image.voxels[idx] = *spec.table_hu;
                }
            }
        }
    }
    return ph;
}

AnalyticWarp make_translation_warp(const Vec3& t_mm) {
    AnalyticWarp w;
    w.kind = AnalyticWarp::Kind::translation;
    w.translation = t_mm;
    return w;
}

AnalyticWarp make_linear_warp(const Mat3& a) {
    AnalyticWarp w;
    w.kind = AnalyticWarp::Kind::linear;
    w.linear_matrix = a;
    return w;
}

AnalyticWarp make_bulge_warp(const Vec3& center_mm, double peak_mm, double sigma_mm,
                             const Vec3& direction) {
    if (sigma_mm <= 0.0) throw InvalidSpec("bulge sigma must be positive");
    if (direction.norm() == 0.0) throw InvalidSpec("bulge direction must be non-zero");
    if (std::abs(peak_mm) / sigma_mm > 0.6)
        throw InvalidSpec("bulge peak/sigma must not exceed 0.6 (invertibility margin)");

    AnalyticWarp w;
    w.kind = AnalyticWarp::Kind::radial_bulge;
    w.bulge_center = center_mm;
    w.bulge_peak_mm = peak_mm;
    w.bulge_sigma_mm = sigma_mm;
    w.bulge_direction = direction.normalized();

    // The determinant minimum lies on the bulge axis; scan it numerically.
    for (int s = -40; s <= 40; ++s) {
        Vec3 p = center_mm + w.bulge_direction * (s * 0.1 * sigma_mm);
        Mat3 f = Mat3::identity() + warp_displacement_jacobian(w, p);
        if (f.det() <= 0.0)
            throw InvalidSpec("bulge warp is not invertible (non-positive Jacobian)");
    }
    return w;
}

Vec3 evaluate_warp(const AnalyticWarp& warp, const Vec3& point_mm) {
    switch (warp.kind) {
        case AnalyticWarp::Kind::translation:
            return warp.translation;
        case AnalyticWarp::Kind::linear:
            return warp.linear_matrix * point_mm;
        case AnalyticWarp::Kind::radial_bulge: {
            Vec3 d = point_mm - warp.bulge_center;
            double s2 = warp.bulge_sigma_mm * warp.bulge_sigma_mm;
            double g = std::exp(-d.dot(d) / (2.0 * s2));
            return warp.bulge_direction * (warp.bulge_peak_mm * g);
        }
    }
    return {};
}

Mat3 warp_displacement_jacobian(const AnalyticWarp& warp, const Vec3& point_mm) {
    Mat3 j{};
    switch (warp.kind) {
        case AnalyticWarp::Kind::translation:
            return j;
        case AnalyticWarp::Kind::linear:
            return warp.linear_matrix;
        case AnalyticWarp::Kind::radial_bulge: {
            // grad u = n (x) grad g * peak, grad g = -g (x-c)/sigma^2
            Vec3 d = point_mm - warp.bulge_center;
            double s2 = warp.bulge_sigma_mm * warp.bulge_sigma_mm;
            double g = std::exp(-d.dot(d) / (2.0 * s2));
            Vec3 gg = d * (-g / s2);
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c)
                    j(r, c) = warp.bulge_peak_mm * warp.bulge_direction[r] * gg[c];
            return j;
        }
    }
    return j;
}

ImageVolume apply_warp(const ImageVolume& volume, const AnalyticWarp& warp) {
    const Grid& grid = volume.grid;
    ImageVolume out = make_volume(grid, volume.kind);
    const bool nearest = volume.kind != VoxelKind::intensity_hu;
    const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];

    bool diverged = false;
#pragma omp parallel for schedule(static) reduction(|| : diverged)
    for (int k = 0; k < nz; ++k) {
        for (int j = 0; j < ny; ++j) {
            for (int i = 0; i < nx; ++i) {
                Vec3 y = grid.index_to_world(i, j, k);
                // solve v = u(y - v) so that y - v is the rest-frame source point
                Vec3 v = evaluate_warp(warp, y);
                bool converged = false;
                for (int it = 0; it < 20; ++it) {
                    Vec3 next = evaluate_warp(warp, y - v);
                    if ((next - v).norm() < 1e-3) {
                        v = next;
                        converged = true;
                        break;
                    }
                    v = next;
                }
                if (!converged) {
                    diverged = true;
                    continue;
                }
                Vec3 src = grid.world_to_index(y - v);
                double val = nearest
                                 ? detail::nearest(volume.voxels.data(), grid.dims, src.x, src.y, src.z)
                                 : detail::trilinear(volume.voxels.data(), grid.dims, src.x, src.y,
                                                     src.z, true);
                out.voxels[grid.index(i, j, k)] = float(val);
            }
        }
    }
    if (diverged) throw InversionDiverged("analytic warp inversion did not reach 1e-3 mm in 20 iterations");
    return out;
}

DisplacementField ground_truth_field(const AnalyticWarp& warp, const Grid& grid) {
    DisplacementField field = make_field(grid);
    const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];
#pragma omp parallel for schedule(static)
    for (int k = 0; k < nz; ++k)
        for (int j = 0; j < ny; ++j)
            for (int i = 0; i < nx; ++i)
                field.set(i, j, k, evaluate_warp(warp, grid.index_to_world(i, j, k)));
    return field;
}

}  // namespace hedi
