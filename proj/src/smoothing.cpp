#include "smoothing.hpp"

#include <algorithm>
#include <cmath>

namespace hedi::detail {

void gaussian_smooth(std::vector<float>& data, const std::array<int, 3>& dims, double sigma) {
    if (sigma <= 0.0) return;
    int radius = std::max(1, int(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(size_t(radius) + 1);
    for (int r = 0; r <= radius; ++r) kernel[size_t(r)] = std::exp(-0.5 * r * r / (sigma * sigma));

    std::vector<float> tmp(data.size());
    const int nx = dims[0], ny = dims[1];

    auto lin = [&](int i, int j, int k) {
        return size_t(i) + size_t(dims[0]) * (size_t(j) + size_t(dims[1]) * size_t(k));
    };

    auto pass = [&](const std::vector<float>& src, std::vector<float>& dst, int axis) {
        const int n = dims[axis];
        const size_t stride = axis == 0 ? 1 : (axis == 1 ? size_t(nx) : size_t(nx) * size_t(ny));
        const int outer0 = axis == 0 ? dims[1] : dims[0];
        const int outer1 = axis == 2 ? dims[1] : dims[2];
#pragma omp parallel for schedule(static)
        for (int b = 0; b < outer1; ++b) {
            for (int a = 0; a < outer0; ++a) {
                size_t base;
                if (axis == 0) base = lin(0, a, b);
                else if (axis == 1) base = lin(a, 0, b);
                else base = lin(a, b, 0);
                for (int i = 0; i < n; ++i) {
                    double acc = kernel[0] * src[base + size_t(i) * stride];
                    double wsum = kernel[0];
                    int lo = std::min(radius, i);
                    int hi = std::min(radius, n - 1 - i);
                    for (int r = 1; r <= lo; ++r) {
                        acc += kernel[size_t(r)] * src[base + size_t(i - r) * stride];
                        wsum += kernel[size_t(r)];
                    }
                    for (int r = 1; r <= hi; ++r) {
                        acc += kernel[size_t(r)] * src[base + size_t(i + r) * stride];
                        wsum += kernel[size_t(r)];
                    }
                    dst[base + size_t(i) * stride] = float(acc / wsum);
                }
            }
        }
    };
    pass(data, tmp, 0);
    pass(tmp, data, 1);
    pass(data, tmp, 2);
    data.swap(tmp);
}

}  // namespace hedi::detail
