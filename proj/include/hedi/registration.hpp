#pragma once

#include <vector>

#include "hedi/types.hpp"

namespace hedi {

enum class SimilarityMetric { local_cross_correlation, ssd };

struct RegistrationConfig {
    int pyramid_levels = 3;
    std::vector<int> iterations_per_level{100, 50, 25};  // coarse -> fine
    SimilarityMetric metric = SimilarityMetric::local_cross_correlation;
    int cc_window_radius_vox = 4;
    double update_smoothing_sigma_vox = 2.0;
    double total_smoothing_sigma_vox = 1.0;  // per-iteration field regularization
    double step_length_vox = 0.25;  // max update displacement, in voxels; (0, 0.5]
    int convergence_window = 10;
    double convergence_eps = 1e-5;
    bool verbose = false;
};

struct DiffeomorphicMap {
    DisplacementField forward;  // rest -> Valsalva, mm world vectors
    DisplacementField inverse;  // Valsalva -> rest
    std::vector<double> metric_trace;
    std::vector<int> iterations_run;  // per pyramid level, coarse -> fine
};

/// Greedy symmetric diffeomorphic registration: both masks deform toward a
/// midpoint; per iteration the metric-gradient updates are smoothed, scaled to
/// step_length_vox, composed into the running half-maps, and the half-map
/// inverses are maintained by negated-update composition plus fixed-point
/// correction. Deterministic for fixed config.
DiffeomorphicMap register_symmetric(const ImageVolume& static_mask, const ImageVolume& moving_mask,
                                    const RegistrationConfig& config = {});

/// output(x) = input(x + u(x)); trilinear (or nearest) sampling, background 0.
ImageVolume warp(const ImageVolume& volume, const DisplacementField& field, InterpMode mode);

/// (f o g)(x) = g(x) + f(x + g(x)), f sampled trilinearly (clamped at borders).
DisplacementField compose(const DisplacementField& f, const DisplacementField& g);

/// det(I + grad u) per voxel; central differences interior, one-sided at borders.
ImageVolume jacobian_determinant(const DisplacementField& field);

/// Trilinear interpolation of the field at a world point (mm); throws
/// OutOfBounds outside the voxel-center hull.
Vec3 sample_displacement(const DisplacementField& field, const Vec3& point_mm);

}  // namespace hedi
