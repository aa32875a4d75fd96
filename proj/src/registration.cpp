#include "hedi/registration.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "hedi/errors.hpp"
#include "hedi/sampling.hpp"
#include "smoothing.hpp"

namespace hedi {

namespace {

using Dims = std::array<int, 3>;

inline size_t lin(const Dims& d, int i, int j, int k) {
    return size_t(i) + size_t(d[0]) * (size_t(j) + size_t(d[1]) * size_t(k));
}

inline size_t count(const Dims& d) { return size_t(d[0]) * size_t(d[1]) * size_t(d[2]); }

/// Vector field with one contiguous buffer per component, values in mm.
struct VField {
    Dims dims{0, 0, 0};
    std::array<std::vector<float>, 3> c;

    void resize(const Dims& d) {
        dims = d;
        for (auto& v : c) v.assign(count(d), 0.0f);
    }
};

/// Single trilinear weight setup shared by the three components. Clamped.
inline Vec3 sample_vfield(const VField& f, double ci, double cj, double ck) {
    detail::TrilinearWeights w = detail::trilinear_setup(f.dims, ci, cj, ck);
    auto at = [&](const std::vector<float>& v, int i, int j, int k) {
        return double(v[lin(f.dims, i, j, k)]);
    };
    Vec3 out;
    for (int n = 0; n < 3; ++n) {
        const auto& v = f.c[size_t(n)];
        double c00 = at(v, w.i0, w.j0, w.k0) * (1 - w.tx) + at(v, w.i1, w.j0, w.k0) * w.tx;
        double c10 = at(v, w.i0, w.j1, w.k0) * (1 - w.tx) + at(v, w.i1, w.j1, w.k0) * w.tx;
        double c01 = at(v, w.i0, w.j0, w.k1) * (1 - w.tx) + at(v, w.i1, w.j0, w.k1) * w.tx;
        double c11 = at(v, w.i0, w.j1, w.k1) * (1 - w.tx) + at(v, w.i1, w.j1, w.k1) * w.tx;
        out[n] = (c00 * (1 - w.ty) + c10 * w.ty) * (1 - w.tz) + (c01 * (1 - w.ty) + c11 * w.ty) * w.tz;
    }
    return out;
}

using detail::gaussian_smooth;

void smooth_field(VField& f, double sigma) {
    if (sigma <= 0.0) return;
    for (auto& comp : f.c) gaussian_smooth(comp, f.dims, sigma);
}

void zero_border(VField& f) {
    const int nx = f.dims[0], ny = f.dims[1], nz = f.dims[2];
    for (int k = 0; k < nz; ++k)
        for (int j = 0; j < ny; ++j)
            for (int i = 0; i < nx; ++i) {
                if (i > 0 && j > 0 && k > 0 && i < nx - 1 && j < ny - 1 && k < nz - 1) continue;
                size_t q = lin(f.dims, i, j, k);
                f.c[0][q] = f.c[1][q] = f.c[2][q] = 0.0f;
            }
}

// out(x) = img(x + u(x)/spacing), zero outside.
void warp_image(const std::vector<float>& img, const Dims& dims, const Vec3& spacing,
                const VField& u, std::vector<float>& out) {
    out.resize(count(dims));
#pragma omp parallel for schedule(static)
    for (int k = 0; k < dims[2]; ++k)
        for (int j = 0; j < dims[1]; ++j)
            for (int i = 0; i < dims[0]; ++i) {
                size_t q = lin(dims, i, j, k);
                double ci = i + u.c[0][q] / spacing.x;
                double cj = j + u.c[1][q] / spacing.y;
                double ck = k + u.c[2][q] / spacing.z;
                out[q] = float(detail::trilinear(img.data(), dims, ci, cj, ck, false));
            }
}

// dst(x) = inner(x) + outer(x + inner(x)/spacing); dst may not alias inner/outer.
void compose_into(VField& dst, const VField& outer, const VField& inner, const Vec3& spacing) {
    const Dims dims = inner.dims;
    dst.resize(dims);
#pragma omp parallel for schedule(static)
    for (int k = 0; k < dims[2]; ++k)
        for (int j = 0; j < dims[1]; ++j)
            for (int i = 0; i < dims[0]; ++i) {
                size_t q = lin(dims, i, j, k);
                Vec3 g{double(inner.c[0][q]), double(inner.c[1][q]), double(inner.c[2][q])};
                Vec3 f = sample_vfield(outer, i + g.x / spacing.x, j + g.y / spacing.y,
                                       k + g.z / spacing.z);
                dst.c[0][q] = float(g.x + f.x);
                dst.c[1][q] = float(g.y + f.y);
                dst.c[2][q] = float(g.z + f.z);
            }
}

// v(x) <- -u(x + v(x)/spacing), Jacobi-style sweeps with double buffering.
void invert_sweeps(const VField& u, VField& v, const Vec3& spacing, int sweeps) {
    const Dims dims = u.dims;
    VField next;
    next.resize(dims);
    for (int s = 0; s < sweeps; ++s) {
#pragma omp parallel for schedule(static)
        for (int k = 0; k < dims[2]; ++k)
            for (int j = 0; j < dims[1]; ++j)
                for (int i = 0; i < dims[0]; ++i) {
                    size_t q = lin(dims, i, j, k);
                    Vec3 uv = sample_vfield(u, i + v.c[0][q] / spacing.x, j + v.c[1][q] / spacing.y,
                                            k + v.c[2][q] / spacing.z);
                    next.c[0][q] = float(-uv.x);
                    next.c[1][q] = float(-uv.y);
                    next.c[2][q] = float(-uv.z);
                }
        std::swap(v.c, next.c);
    }
}

// Sliding box sum along one axis, radius r, zero outside.
void box_sum_axis(const std::vector<float>& src, std::vector<float>& dst, const Dims& dims,
                  int radius, int axis) {
    const int n = dims[axis];
    const size_t stride = axis == 0 ? 1 : (axis == 1 ? size_t(dims[0]) : size_t(dims[0]) * size_t(dims[1]));
    const int outer0 = axis == 0 ? dims[1] : dims[0];
    const int outer1 = axis == 2 ? dims[1] : dims[2];
#pragma omp parallel for schedule(static)
    for (int b = 0; b < outer1; ++b) {
        for (int a = 0; a < outer0; ++a) {
            size_t base;
            if (axis == 0) base = lin(dims, 0, a, b);
            else if (axis == 1) base = lin(dims, a, 0, b);
            else base = lin(dims, a, b, 0);
            double run = 0.0;
            for (int i = 0; i <= std::min(radius, n - 1); ++i) run += src[base + size_t(i) * stride];
            for (int i = 0; i < n; ++i) {
                dst[base + size_t(i) * stride] = float(run);
                int add = i + radius + 1;
                int sub = i - radius;
                if (add < n) run += src[base + size_t(add) * stride];
                if (sub >= 0) run -= src[base + size_t(sub) * stride];
            }
        }
    }
}

void box_sum(const std::vector<float>& src, std::vector<float>& dst, std::vector<float>& tmp,
             const Dims& dims, int radius) {
    dst.resize(src.size());
    tmp.resize(src.size());
    box_sum_axis(src, tmp, dims, radius, 0);
    box_sum_axis(tmp, dst, dims, radius, 1);
    box_sum_axis(dst, tmp, dims, radius, 2);
    dst.swap(tmp);
}

// Central-difference image gradient (mm^-1), zero at the volume border.
inline Vec3 image_gradient(const std::vector<float>& img, const Dims& dims, const Vec3& spacing,
                           int i, int j, int k) {
    Vec3 g;
    if (i > 0 && i < dims[0] - 1)
        g.x = (img[lin(dims, i + 1, j, k)] - img[lin(dims, i - 1, j, k)]) / (2.0 * spacing.x);
    if (j > 0 && j < dims[1] - 1)
        g.y = (img[lin(dims, i, j + 1, k)] - img[lin(dims, i, j - 1, k)]) / (2.0 * spacing.y);
    if (k > 0 && k < dims[2] - 1)
        g.z = (img[lin(dims, i, j, k + 1)] - img[lin(dims, i, j, k - 1)]) / (2.0 * spacing.z);
    return g;
}

struct ForceBuffers {
    std::vector<float> s1, s2, s11, s22, s12, prod, tmp, counts;
};

// Local normalized cross-correlation forces with symmetric gradients for both
// half-maps. Returns the metric value: mean of -CC over the grid.
double cc_forces(const std::vector<float>& is, const std::vector<float>& im, const Dims& dims,
                 const Vec3& spacing, int radius, ForceBuffers& bufs, VField& fs, VField& fm) {
    const size_t n = count(dims);
    fs.resize(dims);
    fm.resize(dims);

    if (bufs.counts.size() != n) {
        std::vector<float> ones(n, 1.0f);
        box_sum(ones, bufs.counts, bufs.tmp, dims, radius);
    }
    box_sum(is, bufs.s1, bufs.tmp, dims, radius);
    box_sum(im, bufs.s2, bufs.tmp, dims, radius);
    bufs.prod.resize(n);
    for (size_t q = 0; q < n; ++q) bufs.prod[q] = is[q] * is[q];
    box_sum(bufs.prod, bufs.s11, bufs.tmp, dims, radius);
    for (size_t q = 0; q < n; ++q) bufs.prod[q] = im[q] * im[q];
    box_sum(bufs.prod, bufs.s22, bufs.tmp, dims, radius);
    for (size_t q = 0; q < n; ++q) bufs.prod[q] = is[q] * im[q];
    box_sum(bufs.prod, bufs.s12, bufs.tmp, dims, radius);

    std::vector<double> slice_metric(size_t(dims[2]), 0.0);

#pragma omp parallel for schedule(static)
    for (int k = 0; k < dims[2]; ++k) {
        double acc = 0.0;
        for (int j = 0; j < dims[1]; ++j)
            for (int i = 0; i < dims[0]; ++i) {
                size_t q = lin(dims, i, j, k);
                double cnt = bufs.counts[q];
                double sa = bufs.s1[q], sb = bufs.s2[q];
                double a = bufs.s12[q] - sa * sb / cnt;
                double bb = bufs.s11[q] - sa * sa / cnt;
                double cc = bufs.s22[q] - sb * sb / cnt;
                double denom = bb * cc;
                // Windows fade in between one and two times the variance floor:
                // near-flat content otherwise produces gradient outliers, and a
                // hard cutoff would make the metric jump whenever a window
                // crosses the floor, breaking monotone step acceptance.
                const double floor = 1e-5 * cnt;
                double v = std::min(bb, cc);
                if (v > floor) {
                    double w = std::min(1.0, v / floor - 1.0);
                    double gi = is[q] - sa / cnt;
                    double gj = im[q] - sb / cnt;
                    acc -= w * a * a / denom;
                    double common = w * 2.0 * a / denom;
                    double fac_m = common * (gi - (a / cc) * gj);
                    double fac_s = common * (gj - (a / bb) * gi);
                    Vec3 grad_s = image_gradient(is, dims, spacing, i, j, k);
                    Vec3 grad_m = image_gradient(im, dims, spacing, i, j, k);
                    fm.c[0][q] = float(fac_m * grad_m.x);
                    fm.c[1][q] = float(fac_m * grad_m.y);
                    fm.c[2][q] = float(fac_m * grad_m.z);
                    fs.c[0][q] = float(fac_s * grad_s.x);
                    fs.c[1][q] = float(fac_s * grad_s.y);
                    fs.c[2][q] = float(fac_s * grad_s.z);
                }
            }
        slice_metric[size_t(k)] = acc;
    }

    double total = 0.0;
    for (double s : slice_metric) total += s;
    return total / double(n);
}

// Sum-of-squared-differences forces; metric is the mean squared difference.
double ssd_forces(const std::vector<float>& is, const std::vector<float>& im, const Dims& dims,
                  const Vec3& spacing, VField& fs, VField& fm) {
    const size_t n = count(dims);
    fs.resize(dims);
    fm.resize(dims);
    std::vector<double> slice_metric(size_t(dims[2]), 0.0);

#pragma omp parallel for schedule(static)
    for (int k = 0; k < dims[2]; ++k) {
        double acc = 0.0;
        for (int j = 0; j < dims[1]; ++j)
            for (int i = 0; i < dims[0]; ++i) {
                size_t q = lin(dims, i, j, k);
                double diff = double(is[q]) - double(im[q]);
                acc += diff * diff;
                Vec3 grad_s = image_gradient(is, dims, spacing, i, j, k);
                Vec3 grad_m = image_gradient(im, dims, spacing, i, j, k);
                fm.c[0][q] = float(diff * grad_m.x);
                fm.c[1][q] = float(diff * grad_m.y);
                fm.c[2][q] = float(diff * grad_m.z);
                fs.c[0][q] = float(-diff * grad_s.x);
                fs.c[1][q] = float(-diff * grad_s.y);
                fs.c[2][q] = float(-diff * grad_s.z);
            }
        slice_metric[size_t(k)] = acc;
    }
    double total = 0.0;
    for (double s : slice_metric) total += s;
    return total / double(n);
}

double max_magnitude(const VField& f) {
    const size_t n = count(f.dims);
    double max2 = 0.0;
    for (size_t q = 0; q < n; ++q) {
        double m2 = double(f.c[0][q]) * f.c[0][q] + double(f.c[1][q]) * f.c[1][q] +
                    double(f.c[2][q]) * f.c[2][q];
        max2 = std::max(max2, m2);
    }
    return std::sqrt(max2);
}

// Fixed per-level gain with a per-voxel cap: the first update of a level is
// scaled so its maximum displacement equals max_mm, later ones reuse that gain
// (letting updates decay near convergence) and are clamped to max_mm.
void scale_update(VField& f, double gain, double max_mm) {
    const size_t n = count(f.dims);
#pragma omp parallel for schedule(static)
    for (long long qq = 0; qq < (long long)n; ++qq) {
        size_t q = size_t(qq);
        double x = f.c[0][q] * gain, y = f.c[1][q] * gain, z = f.c[2][q] * gain;
        double mag = std::sqrt(x * x + y * y + z * z);
        if (mag > max_mm) {
            double s = max_mm / mag;
            x *= s;
            y *= s;
            z *= s;
        }
        f.c[0][q] = float(x);
        f.c[1][q] = float(y);
        f.c[2][q] = float(z);
    }
}

struct Level {
    Grid grid;
    std::vector<float> is, im;  // smoothed mask images, [0,1]
};

// Gaussian pyramid, finest first in construction, returned coarse -> fine.
std::vector<Level> build_pyramid(const ImageVolume& stat, const ImageVolume& mov, int levels) {
    std::vector<Level> pyr;
    pyr.resize(size_t(levels));
    Level fine;
    fine.grid = stat.grid;
    fine.is = stat.voxels;
    fine.im = mov.voxels;
    gaussian_smooth(fine.is, fine.grid.dims, 1.0);
    gaussian_smooth(fine.im, fine.grid.dims, 1.0);
    pyr[size_t(levels) - 1] = std::move(fine);

    for (int l = levels - 2; l >= 0; --l) {
        const Level& src = pyr[size_t(l) + 1];
        Level dst;
        dst.grid.dims = {(src.grid.dims[0] + 1) / 2, (src.grid.dims[1] + 1) / 2,
                         (src.grid.dims[2] + 1) / 2};
        dst.grid.spacing = src.grid.spacing * 2.0;
        dst.grid.origin = src.grid.origin;

        std::vector<float> ss = src.is, sm = src.im;
        gaussian_smooth(ss, src.grid.dims, 1.0);
        gaussian_smooth(sm, src.grid.dims, 1.0);
        dst.is.resize(count(dst.grid.dims));
        dst.im.resize(count(dst.grid.dims));
        for (int k = 0; k < dst.grid.dims[2]; ++k)
            for (int j = 0; j < dst.grid.dims[1]; ++j)
                for (int i = 0; i < dst.grid.dims[0]; ++i) {
                    size_t q = lin(dst.grid.dims, i, j, k);
                    size_t s = lin(src.grid.dims, 2 * i, 2 * j, 2 * k);
                    dst.is[q] = ss[s];
                    dst.im[q] = sm[s];
                }
        pyr[size_t(l)] = std::move(dst);
    }
    return pyr;
}

void upsample_field(const VField& coarse, const Grid& coarse_grid, const Grid& fine_grid,
                    VField& fine) {
    fine.resize(fine_grid.dims);
#pragma omp parallel for schedule(static)
    for (int k = 0; k < fine_grid.dims[2]; ++k)
        for (int j = 0; j < fine_grid.dims[1]; ++j)
            for (int i = 0; i < fine_grid.dims[0]; ++i) {
                Vec3 w = fine_grid.index_to_world(i, j, k);
                Vec3 c = coarse_grid.world_to_index(w);
                Vec3 v = sample_vfield(coarse, c.x, c.y, c.z);
                size_t q = lin(fine_grid.dims, i, j, k);
                fine.c[0][q] = float(v.x);
                fine.c[1][q] = float(v.y);
                fine.c[2][q] = float(v.z);
            }
}

DisplacementField to_displacement_field(const VField& f, const Grid& grid) {
    DisplacementField out = make_field(grid);
    const size_t n = grid.voxel_count();
    for (size_t q = 0; q < n; ++q) {
        out.vectors[3 * q] = f.c[0][q];
        out.vectors[3 * q + 1] = f.c[1][q];
        out.vectors[3 * q + 2] = f.c[2][q];
    }
    return out;
}

// Closest-point extension: background voxels take the field value of their
// nearest mask voxel (multi-source BFS, 26-neighborhood). Mask registration
// carries no data in the air, so the raw field decays right at the body
// boundary and surface sampling would underestimate systematically.
void extend_outside_mask(VField& f, const std::vector<float>& mask) {
    const Dims dims = f.dims;
    const size_t n = count(dims);
    std::vector<int32_t> source(n, -1);
    std::vector<int32_t> queue;
    queue.reserve(n);
    for (size_t q = 0; q < n; ++q)
        if (mask[q] >= 0.5f) {
            source[q] = int32_t(q);
            queue.push_back(int32_t(q));
        }
    if (queue.empty() || queue.size() == n) return;

    size_t head = 0;
    const int nx = dims[0], ny = dims[1], nz = dims[2];
    while (head < queue.size()) {
        int32_t cur = queue[head++];
        int k = int(cur / (nx * ny));
        int rem = int(cur % (nx * ny));
        int j = rem / nx, i = rem % nx;
        for (int dk = -1; dk <= 1; ++dk)
            for (int dj = -1; dj <= 1; ++dj)
                for (int di = -1; di <= 1; ++di) {
                    if (!di && !dj && !dk) continue;
                    int ii = i + di, jj = j + dj, kk = k + dk;
                    if (ii < 0 || jj < 0 || kk < 0 || ii >= nx || jj >= ny || kk >= nz) continue;
                    size_t q = lin(dims, ii, jj, kk);
                    if (source[q] < 0) {
                        source[q] = source[size_t(cur)];
                        queue.push_back(int32_t(q));
                    }
                }
    }
    for (size_t q = 0; q < n; ++q) {
        size_t s = size_t(source[q]);
        if (s == q) continue;
        f.c[0][q] = f.c[0][s];
        f.c[1][q] = f.c[1][s];
        f.c[2][q] = f.c[2][s];
    }
}

void validate_config(const RegistrationConfig& cfg) {
    if (cfg.pyramid_levels < 1) throw Error("pyramid_levels must be >= 1");
    if (int(cfg.iterations_per_level.size()) != cfg.pyramid_levels)
        throw Error("iterations_per_level length must equal pyramid_levels");
    for (int it : cfg.iterations_per_level)
        if (it < 1) throw Error("iterations_per_level entries must be >= 1");
    if (cfg.step_length_vox <= 0.0 || cfg.step_length_vox > 0.5)
        throw Error("step_length_vox must be in (0, 0.5]");
    if (cfg.cc_window_radius_vox < 1) throw Error("cc_window_radius_vox must be >= 1");
    if (cfg.convergence_window < 1) throw Error("convergence_window must be >= 1");
}

}  // namespace

DiffeomorphicMap register_symmetric(const ImageVolume& static_mask, const ImageVolume& moving_mask,
                                    const RegistrationConfig& config) {
    validate_config(config);
    if (!static_mask.grid.same_geometry(moving_mask.grid, 1e-6))
        throw GridMismatch("static and moving masks must share dims/spacing/origin");

    auto nonzero = [](const ImageVolume& v) {
        for (float x : v.voxels)
            if (x != 0.0f) return true;
        return false;
    };
    if (!nonzero(static_mask) || !nonzero(moving_mask)) throw EmptyInput("empty input mask");

    std::vector<Level> pyramid = build_pyramid(static_mask, moving_mask, config.pyramid_levels);

    VField us, um, usi, umi;  // half-maps (midpoint -> end frames) and their inverses
    us.resize(pyramid[0].grid.dims);
    um.resize(pyramid[0].grid.dims);
    usi.resize(pyramid[0].grid.dims);
    umi.resize(pyramid[0].grid.dims);

    DiffeomorphicMap result;
    std::vector<float> ws, wm;
    VField fs, fm, scratch;
    ForceBuffers bufs;

    for (int level = 0; level < config.pyramid_levels; ++level) {
        const Level& lv = pyramid[size_t(level)];
        const Vec3 sp = lv.grid.spacing;

        if (level > 0) {
            const Grid& prev = pyramid[size_t(level) - 1].grid;
            VField up;
            upsample_field(us, prev, lv.grid, up);
            us = std::move(up);
            upsample_field(um, prev, lv.grid, up);
            um = std::move(up);
            upsample_field(usi, prev, lv.grid, up);
            usi = std::move(up);
            upsample_field(umi, prev, lv.grid, up);
            umi = std::move(up);
        }
        bufs.counts.clear();

        const double step_mm =
            config.step_length_vox * std::min({sp.x, sp.y, sp.z});
        std::vector<double> level_trace;
        double gain = -1.0, initial_gain = -1.0;
        result.iterations_run.push_back(0);

        // State of the last accepted iteration; a worsening update is rolled
        // back and retried at half gain so the recorded metric trace stays
        // monotone non-increasing per level.
        VField us_bak, um_bak, usi_bak, umi_bak, neg;
        VField fs_acc, fm_acc;  // the last accepted (scaled) updates, for retries
        bool have_accepted = false;
        double last_metric = 0.0;

        auto apply_update = [&](const VField& dfs, const VField& dfm) {
            compose_into(scratch, us, dfs, sp);
            std::swap(us.c, scratch.c);
            smooth_field(us, config.total_smoothing_sigma_vox);
            compose_into(scratch, um, dfm, sp);
            std::swap(um.c, scratch.c);
            smooth_field(um, config.total_smoothing_sigma_vox);

            // inverse half-maps: compose with the negated update, then correct
            neg = dfs;
            for (auto& comp : neg.c)
                for (float& v : comp) v = -v;
            compose_into(scratch, neg, usi, sp);
            std::swap(usi.c, scratch.c);
            neg = dfm;
            for (auto& comp : neg.c)
                for (float& v : comp) v = -v;
            compose_into(scratch, neg, umi, sp);
            std::swap(umi.c, scratch.c);
            invert_sweeps(us, usi, sp, 2);
            invert_sweeps(um, umi, sp, 2);
        };

        for (int iter = 0; iter < config.iterations_per_level[size_t(level)]; ++iter) {
            warp_image(lv.is, lv.grid.dims, sp, us, ws);
            warp_image(lv.im, lv.grid.dims, sp, um, wm);

            double metric;
            if (config.metric == SimilarityMetric::local_cross_correlation)
                metric = cc_forces(ws, wm, lv.grid.dims, sp, config.cc_window_radius_vox, bufs, fs, fm);
            else
                metric = ssd_forces(ws, wm, lv.grid.dims, sp, fs, fm);
            if (!std::isfinite(metric))
                throw DivergenceDetected("similarity metric became non-finite");

            if (have_accepted && metric > last_metric + 1e-12 * std::abs(last_metric)) {
                // reject: restore the accepted state and take a smaller step
                us = us_bak;
                um = um_bak;
                usi = usi_bak;
                umi = umi_bak;
                gain *= 0.5;
                if (config.verbose)
                    std::fprintf(stderr, "level %d iter %3d rejected (%.8f > %.8f), gain %.3g\n",
                                 level, iter, metric, last_metric, gain);
                if (gain < 1e-3 * initial_gain) break;  // stalled at the optimum
                scale_update(fs_acc, 0.5, step_mm);
                scale_update(fm_acc, 0.5, step_mm);
                apply_update(fs_acc, fm_acc);
                continue;
            }

            level_trace.push_back(metric);
            result.metric_trace.push_back(metric);
            ++result.iterations_run.back();
            last_metric = metric;
            have_accepted = true;
            if (config.verbose)
                std::fprintf(stderr, "level %d iter %3d metric %.8f\n", level, iter, metric);

            size_t n = level_trace.size();
            if (n > size_t(config.convergence_window)) {
                double past = level_trace[n - 1 - size_t(config.convergence_window)];
                double improvement = (past - level_trace[n - 1]) / (std::abs(past) + 1e-30);
                if (improvement < config.convergence_eps) break;
            }

            smooth_field(fs, config.update_smoothing_sigma_vox);
            smooth_field(fm, config.update_smoothing_sigma_vox);
            zero_border(fs);
            zero_border(fm);
            double mx = std::max(max_magnitude(fs), max_magnitude(fm));
            if (!std::isfinite(mx))
                throw DivergenceDetected("metric gradient overflowed (non-finite update field)");
            if (gain < 0.0) {
                gain = mx > 0.0 ? step_mm / mx : 0.0;
                initial_gain = gain > 0.0 ? gain : 1.0;
            }
            scale_update(fs, gain, step_mm);
            scale_update(fm, gain, step_mm);

            us_bak = us;
            um_bak = um;
            usi_bak = usi;
            umi_bak = umi;
            fs_acc = fs;
            fm_acc = fm;
            apply_update(fs, fm);
        }
    }

    const Grid& out_grid = pyramid.back().grid;
    const Vec3 sp = out_grid.spacing;
    VField fwd, inv;
    compose_into(fwd, um, usi, sp);   // rest -> midpoint -> Valsalva
    compose_into(inv, us, umi, sp);   // Valsalva -> midpoint -> rest
    invert_sweeps(fwd, inv, sp, 3);   // final inverse-consistency polish

    extend_outside_mask(fwd, static_mask.voxels);
    extend_outside_mask(inv, moving_mask.voxels);

    result.forward = to_displacement_field(fwd, out_grid);
    result.inverse = to_displacement_field(inv, out_grid);
    return result;
}

ImageVolume warp(const ImageVolume& volume, const DisplacementField& field, InterpMode mode) {
    if (!volume.grid.same_geometry(field.grid, 1e-6))
        throw GridMismatch("warp expects volume and field on the same grid");

    const Grid& grid = field.grid;
    ImageVolume out = make_volume(grid, volume.kind);
#pragma omp parallel for schedule(static)
    for (int k = 0; k < grid.dims[2]; ++k)
        for (int j = 0; j < grid.dims[1]; ++j)
            for (int i = 0; i < grid.dims[0]; ++i) {
                Vec3 u = field.at(i, j, k);
                double ci = i + u.x / grid.spacing.x;
                double cj = j + u.y / grid.spacing.y;
                double ck = k + u.z / grid.spacing.z;
                double v;
                if (mode == InterpMode::nearest) {
                    bool inside = ci >= -0.5 && cj >= -0.5 && ck >= -0.5 &&
                                  ci <= grid.dims[0] - 0.5 && cj <= grid.dims[1] - 0.5 &&
                                  ck <= grid.dims[2] - 0.5;
                    v = inside ? detail::nearest(volume.voxels.data(), grid.dims, ci, cj, ck) : 0.0;
                } else {
                    v = detail::trilinear(volume.voxels.data(), grid.dims, ci, cj, ck, false);
                }
                out.voxels[grid.index(i, j, k)] = float(v);
            }
    return out;
}

DisplacementField compose(const DisplacementField& f, const DisplacementField& g) {
    if (!f.grid.same_geometry(g.grid, 1e-6))
        throw GridMismatch("compose expects fields on the same grid");

    const Grid& grid = f.grid;
    DisplacementField out = make_field(grid);
#pragma omp parallel for schedule(static)
    for (int k = 0; k < grid.dims[2]; ++k)
        for (int j = 0; j < grid.dims[1]; ++j)
            for (int i = 0; i < grid.dims[0]; ++i) {
                Vec3 gv = g.at(i, j, k);
                double ci = i + gv.x / grid.spacing.x;
                double cj = j + gv.y / grid.spacing.y;
                double ck = k + gv.z / grid.spacing.z;
                Vec3 fv = detail::trilinear_vec(f.vectors.data(), grid.dims, ci, cj, ck, true);
                out.set(i, j, k, gv + fv);
            }
    return out;
}

ImageVolume jacobian_determinant(const DisplacementField& field) {
    const Grid& grid = field.grid;
    if (grid.dims[0] < 2 || grid.dims[1] < 2 || grid.dims[2] < 2)
        throw DegenerateGrid("jacobian_determinant needs at least 2 voxels per axis");

    ImageVolume out = make_volume(grid, VoxelKind::intensity_hu);
#pragma omp parallel for schedule(static)
    for (int k = 0; k < grid.dims[2]; ++k)
        for (int j = 0; j < grid.dims[1]; ++j)
            for (int i = 0; i < grid.dims[0]; ++i) {
                Mat3 jac = Mat3::identity();
                int idx[3] = {i, j, k};
                for (int a = 0; a < 3; ++a) {
                    int lo = std::max(0, idx[a] - 1);
                    int hi = std::min(grid.dims[a] - 1, idx[a] + 1);
                    int pl[3] = {i, j, k}, ph[3] = {i, j, k};
                    pl[a] = lo;
                    ph[a] = hi;
                    Vec3 vl = field.at(pl[0], pl[1], pl[2]);
                    Vec3 vh = field.at(ph[0], ph[1], ph[2]);
                    double h = (hi - lo) * grid.spacing[a];
                    for (int c = 0; c < 3; ++c) jac(c, a) += (vh[c] - vl[c]) / h;
                }
                out.voxels[grid.index(i, j, k)] = float(jac.det());
            }
    return out;
}

Vec3 sample_displacement(const DisplacementField& field, const Vec3& point_mm) {
    Vec3 c = field.grid.world_to_index(point_mm);
    const auto& d = field.grid.dims;
    if (c.x < 0.0 || c.y < 0.0 || c.z < 0.0 || c.x > d[0] - 1.0 || c.y > d[1] - 1.0 ||
        c.z > d[2] - 1.0)
        throw OutOfBounds("sample point outside the field's world bounding box");
    return detail::trilinear_vec(field.vectors.data(), field.grid.dims, c.x, c.y, c.z, true);
}

}  // namespace hedi
