#pragma once

#include <algorithm>
#include <cmath>

#include "hedi/types.hpp"

namespace hedi {

namespace detail {

struct TrilinearWeights {
    int i0, j0, k0, i1, j1, k1;
    double tx, ty, tz;
    bool inside;  // false when the request lies outside the voxel-center hull
};

inline TrilinearWeights trilinear_setup(const std::array<int, 3>& dims, double ci, double cj, double ck) {
    TrilinearWeights w;
    w.inside = ci >= 0.0 && cj >= 0.0 && ck >= 0.0 && ci <= dims[0] - 1.0 && cj <= dims[1] - 1.0 &&
               ck <= dims[2] - 1.0;
    ci = std::clamp(ci, 0.0, double(dims[0] - 1));
    cj = std::clamp(cj, 0.0, double(dims[1] - 1));
    ck = std::clamp(ck, 0.0, double(dims[2] - 1));
    // NaN coordinates (degenerate fields) would otherwise hit int(NaN)
    if (!(ci >= 0.0)) ci = 0.0;
    if (!(cj >= 0.0)) cj = 0.0;
    if (!(ck >= 0.0)) ck = 0.0;
    w.i0 = std::min(int(ci), dims[0] - 2 >= 0 ? dims[0] - 2 : 0);
    w.j0 = std::min(int(cj), dims[1] - 2 >= 0 ? dims[1] - 2 : 0);
    w.k0 = std::min(int(ck), dims[2] - 2 >= 0 ? dims[2] - 2 : 0);
    w.i1 = std::min(w.i0 + 1, dims[0] - 1);
    w.j1 = std::min(w.j0 + 1, dims[1] - 1);
    w.k1 = std::min(w.k0 + 1, dims[2] - 1);
    w.tx = ci - w.i0;
    w.ty = cj - w.j0;
    w.tz = ck - w.k0;
    return w;
}

/// Trilinear sample of a scalar buffer at a continuous voxel index.
/// Outside the voxel-center hull: clamped when `clamp`, 0 otherwise.
inline double trilinear(const float* data, const std::array<int, 3>& dims, double ci, double cj,
                        double ck, bool clamp) {
    TrilinearWeights w = trilinear_setup(dims, ci, cj, ck);
    if (!w.inside && !clamp) return 0.0;
    auto idx = [&](int i, int j, int k) {
        return std::size_t(i) + std::size_t(dims[0]) * (std::size_t(j) + std::size_t(dims[1]) * std::size_t(k));
    };
    double c00 = data[idx(w.i0, w.j0, w.k0)] * (1 - w.tx) + data[idx(w.i1, w.j0, w.k0)] * w.tx;
    double c10 = data[idx(w.i0, w.j1, w.k0)] * (1 - w.tx) + data[idx(w.i1, w.j1, w.k0)] * w.tx;
    double c01 = data[idx(w.i0, w.j0, w.k1)] * (1 - w.tx) + data[idx(w.i1, w.j0, w.k1)] * w.tx;
    double c11 = data[idx(w.i0, w.j1, w.k1)] * (1 - w.tx) + data[idx(w.i1, w.j1, w.k1)] * w.tx;
    double c0 = c00 * (1 - w.ty) + c10 * w.ty;
    double c1 = c01 * (1 - w.ty) + c11 * w.ty;
    return c0 * (1 - w.tz) + c1 * w.tz;
}

/// Trilinear sample of an interleaved 3-vector buffer at a continuous voxel index.
inline Vec3 trilinear_vec(const float* vecs, const std::array<int, 3>& dims, double ci, double cj,
                          double ck, bool clamp) {
    TrilinearWeights w = trilinear_setup(dims, ci, cj, ck);
    if (!w.inside && !clamp) return {0, 0, 0};
    auto idx = [&](int i, int j, int k) {
        return 3 * (std::size_t(i) + std::size_t(dims[0]) * (std::size_t(j) + std::size_t(dims[1]) * std::size_t(k)));
    };
    Vec3 out;
    const std::size_t b000 = idx(w.i0, w.j0, w.k0), b100 = idx(w.i1, w.j0, w.k0);
    const std::size_t b010 = idx(w.i0, w.j1, w.k0), b110 = idx(w.i1, w.j1, w.k0);
    const std::size_t b001 = idx(w.i0, w.j0, w.k1), b101 = idx(w.i1, w.j0, w.k1);
    const std::size_t b011 = idx(w.i0, w.j1, w.k1), b111 = idx(w.i1, w.j1, w.k1);
    for (int c = 0; c < 3; ++c) {
        double c00 = vecs[b000 + std::size_t(c)] * (1 - w.tx) + vecs[b100 + std::size_t(c)] * w.tx;
        double c10 = vecs[b010 + std::size_t(c)] * (1 - w.tx) + vecs[b110 + std::size_t(c)] * w.tx;
        double c01 = vecs[b001 + std::size_t(c)] * (1 - w.tx) + vecs[b101 + std::size_t(c)] * w.tx;
        double c11 = vecs[b011 + std::size_t(c)] * (1 - w.tx) + vecs[b111 + std::size_t(c)] * w.tx;
        double c0 = c00 * (1 - w.ty) + c10 * w.ty;
        double c1 = c01 * (1 - w.ty) + c11 * w.ty;
        out[c] = c0 * (1 - w.tz) + c1 * w.tz;
    }
    return out;
}

inline double nearest(const float* data, const std::array<int, 3>& dims, double ci, double cj,
                      double ck) {
    if (!(ci >= 0.0)) ci = 0.0;
    if (!(cj >= 0.0)) cj = 0.0;
    if (!(ck >= 0.0)) ck = 0.0;
    int i = std::clamp(int(std::lround(std::min(ci, double(dims[0] - 1)))), 0, dims[0] - 1);
    int j = std::clamp(int(std::lround(std::min(cj, double(dims[1] - 1)))), 0, dims[1] - 1);
    int k = std::clamp(int(std::lround(std::min(ck, double(dims[2] - 1)))), 0, dims[2] - 1);
    return data[std::size_t(i) + std::size_t(dims[0]) * (std::size_t(j) + std::size_t(dims[1]) * std::size_t(k))];
}

}  // namespace detail

/// Clamped sample of a scalar volume at a continuous voxel index.
inline double sample_volume_index(const ImageVolume& v, double ci, double cj, double ck,
                                  InterpMode mode) {
    if (mode == InterpMode::nearest) return detail::nearest(v.voxels.data(), v.grid.dims, ci, cj, ck);
    return detail::trilinear(v.voxels.data(), v.grid.dims, ci, cj, ck, true);
}

/// Clamped trilinear sample of a displacement field at a world point (mm).
inline Vec3 sample_field_world_clamped(const DisplacementField& f, const Vec3& world) {
    Vec3 c = f.grid.world_to_index(world);
    return detail::trilinear_vec(f.vectors.data(), f.grid.dims, c.x, c.y, c.z, true);
}

}  // namespace hedi
