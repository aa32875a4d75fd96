#pragma once

#include <optional>

#include "hedi/types.hpp"

namespace hedi {

struct Ellipsoid {
    Vec3 center;
    Vec3 semi_axes;  // mm

    /// Scaled squared radius; < 1 inside, 1 on the surface.
    double level(const Vec3& p) const {
        double u = (p.x - center.x) / semi_axes.x;
        double v = (p.y - center.y) / semi_axes.y;
        double w = (p.z - center.z) / semi_axes.z;
        return u * u + v * v + w * w;
    }
    bool contains(const Vec3& p) const { return level(p) <= 1.0; }
};

/// Synthetic body phantom: soft-tissue ellipsoid in air, inner cavity,
/// optional hernia bump crossing the body surface, optional patient-table slab.
struct PhantomSpec {
    std::array<int, 3> dims{128, 128, 128};
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{0.0, 0.0, 0.0};
    Ellipsoid body;
    Ellipsoid cavity;
    std::optional<Ellipsoid> hernia;
    float air_hu = -1000.0f;
    float soft_tissue_hu = 0.0f;
    std::optional<float> table_hu;  // adds a detached 3-voxel slab when set
};

/// Body/cavity ellipsoids scaled to the grid; no hernia, no table.
PhantomSpec default_phantom_spec(std::array<int, 3> dims = {128, 128, 128},
                                 Vec3 spacing = {1.0, 1.0, 1.0});

struct Phantom {
    ImageVolume image;   // HU
    ImageVolume labels;  // LabelCodes
};

Phantom make_phantom(const PhantomSpec& spec);

/// Closed-form diffeomorphic warps used as registration/strain ground truth.
/// The forward displacement u(x) is exact; only image resampling approximates.
struct AnalyticWarp {
    enum class Kind { translation, linear, radial_bulge };
    Kind kind = Kind::translation;
    Vec3 translation{};
    Mat3 linear_matrix{};     // u(x) = A x
    Vec3 bulge_center{};      // u(x) = peak * exp(-|x-c|^2 / (2 sigma^2)) * direction
    double bulge_peak_mm = 0.0;
    double bulge_sigma_mm = 1.0;
    Vec3 bulge_direction{0.0, 1.0, 0.0};
};

AnalyticWarp make_translation_warp(const Vec3& t_mm);
AnalyticWarp make_linear_warp(const Mat3& a);
/// Rejects peak/sigma > 0.6 (invertibility margin) and verifies det(I + grad u) > 0
/// on a sample lattice.
AnalyticWarp make_bulge_warp(const Vec3& center_mm, double peak_mm, double sigma_mm,
                             const Vec3& direction);

/// Exact u(x) at a world point (mm).
Vec3 evaluate_warp(const AnalyticWarp& warp, const Vec3& point_mm);

/// Closed-form displacement Jacobian grad u at a world point.
Mat3 warp_displacement_jacobian(const AnalyticWarp& warp, const Vec3& point_mm);

/// Resamples `volume` through the inverted warp so that the forward ground-truth
/// field of the output pair equals evaluate_warp. Inversion is fixed-point,
/// <= 20 iterations to 1e-3 mm. Linear interpolation for intensities, nearest
/// for masks/labels.
ImageVolume apply_warp(const ImageVolume& volume, const AnalyticWarp& warp);

/// evaluate_warp sampled at every node of `grid`.
DisplacementField ground_truth_field(const AnalyticWarp& warp, const Grid& grid);

}  // namespace hedi
