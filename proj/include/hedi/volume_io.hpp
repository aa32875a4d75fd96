#pragma once

#include <string>

#include "hedi/types.hpp"

namespace hedi {

/// Reads a MetaImage (.mhd + .raw) or uncompressed NIfTI-1 (.nii) scalar volume.
/// Header dims/spacing/origin are carried over verbatim; voxel order is
/// normalized to x-fastest; integer intensities survive bit-exact.
/// `kind` tags the returned volume (the formats themselves carry no such notion).
ImageVolume load_volume(const std::string& path, VoxelKind kind = VoxelKind::intensity_hu);

/// Writes a volume readable back by load_volume with identical metadata and
/// voxels. Format chosen by extension: .mhd (with sibling .raw) or .nii.
void save_volume(const ImageVolume& volume, const std::string& path);

/// 3-channel MetaImage displacement field, vectors in mm world frame.
DisplacementField load_field(const std::string& path);
void save_field(const DisplacementField& field, const std::string& path);

/// Landmark CSV with header `id,rx,ry,rz,vx,vy,vz`, coordinates in mm world frame.
LandmarkSet load_landmarks(const std::string& path);
void save_landmarks(const LandmarkSet& landmarks, const std::string& path);

}  // namespace hedi
