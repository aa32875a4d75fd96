#pragma once

#include <array>
#include <vector>

namespace hedi::detail {

/// Separable Gaussian on an x-fastest scalar buffer, sigma in voxels,
/// truncated-renormalized kernel at the borders.
void gaussian_smooth(std::vector<float>& data, const std::array<int, 3>& dims, double sigma);

}  // namespace hedi::detail
