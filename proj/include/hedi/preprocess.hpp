#pragma once

#include <string>
#include <vector>

#include "hedi/types.hpp"

namespace hedi {

enum class FindingCode {
    SliceCountMismatch,
    SliceThicknessMismatch,
    PixelSpacingMismatch,
    FieldOfViewShift,
    ScalingMismatch,
    TruncationSuspected,
};

std::string to_string(FindingCode code);

struct ValidationFinding {
    FindingCode code;
    std::string detail;
};

struct ValidationReport {
    bool valid = true;
    std::vector<ValidationFinding> findings;
    /// Manual-check reminder; foreign objects (arms, cables) are not detected automatically.
    std::string note;
};

/// Geometry preflight for a rest/Valsalva pair. Every violated check becomes a
/// finding; nothing throws. Symmetric in its two arguments.
ValidationReport validate_scan_pair(const ImageVolume& rest, const ImageVolume& valsalva,
                                    double tolerance = 1e-3);

struct PreprocessConfig {
    double hu_threshold = -300.0;
    double iso_spacing_mm = 1.0;
    int downsample_factor = 3;
    bool fill_internal_holes = true;
};

/// Body outline: largest 26-connected component above hu_threshold, patient
/// table and other detached objects dropped, internal holes filled per axial slice.
ImageVolume body_mask(const ImageVolume& volume, const PreprocessConfig& config = {});

/// Resamples onto a grid with the given spacing, same origin,
/// dims = ceil(physical extent / target spacing). Masks passed with linear mode
/// are averaged as [0,1] probabilities and re-thresholded at 0.5; labels require
/// nearest mode.
ImageVolume resample(const ImageVolume& volume, const Vec3& target_spacing_mm, InterpMode mode);

/// resample() with target spacing = input spacing * factor; interpolation mode
/// picked by voxel kind (nearest for labels, linear otherwise).
ImageVolume downsample(const ImageVolume& volume, int factor);

/// Samples the volume at the world points of `target`, clamping at the source
/// bounds. Used to force mismatched pairs onto a common grid.
ImageVolume resample_to_grid(const ImageVolume& volume, const Grid& target, InterpMode mode);

}  // namespace hedi
