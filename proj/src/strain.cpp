#include "hedi/strain.hpp"

#include <algorithm>
#include <cmath>

#include "hedi/errors.hpp"

namespace hedi {

namespace {

// d(component c of u)/d(axis a) at one voxel, spacing-aware.
inline double derivative(const DisplacementField& f, int i, int j, int k, int c, int a) {
    const auto& dims = f.grid.dims;
    int idx[3] = {i, j, k};
    double h = f.grid.spacing[a];

    int lo = idx[a] - 1, hi = idx[a] + 1;
    if (lo < 0) lo = idx[a];
    if (hi > dims[a] - 1) hi = idx[a];

    int pl[3] = {i, j, k}, ph[3] = {i, j, k};
    pl[a] = lo;
    ph[a] = hi;
    double vl = f.vectors[3 * f.grid.index(pl[0], pl[1], pl[2]) + size_t(c)];
    double vh = f.vectors[3 * f.grid.index(ph[0], ph[1], ph[2]) + size_t(c)];
    return (vh - vl) / ((hi - lo) * h);
}

}  // namespace

TensorVolume deformation_gradient(const DisplacementField& field) {
    const auto& dims = field.grid.dims;
    if (dims[0] < 3 || dims[1] < 3 || dims[2] < 3)
        throw DegenerateGrid("deformation_gradient needs at least 3 voxels per axis");

    TensorVolume out{field.grid, std::vector<float>(9 * field.grid.voxel_count())};

#pragma omp parallel for schedule(static)
    for (int k = 0; k < dims[2]; ++k) {
        for (int j = 0; j < dims[1]; ++j) {
            for (int i = 0; i < dims[0]; ++i) {
                size_t b = 9 * field.grid.index(i, j, k);
                for (int r = 0; r < 3; ++r)
                    for (int c = 0; c < 3; ++c)
                        out.tensors[b + size_t(3 * r + c)] =
                            float(derivative(field, i, j, k, r, c) + (r == c ? 1.0 : 0.0));
            }
        }
    }
    return out;
}

SymTensorVolume green_lagrange(const TensorVolume& f) {
    SymTensorVolume out{f.grid, std::vector<float>(6 * f.grid.voxel_count())};
    const size_t n = f.grid.voxel_count();

#pragma omp parallel for schedule(static)
    for (long long vi = 0; vi < (long long)n; ++vi) {
        const float* F = f.tensors.data() + 9 * size_t(vi);
        // C = F^T F
        double c[6];  // xx, yy, zz, xy, xz, yz
        c[0] = double(F[0]) * F[0] + double(F[3]) * F[3] + double(F[6]) * F[6];
        c[1] = double(F[1]) * F[1] + double(F[4]) * F[4] + double(F[7]) * F[7];
        c[2] = double(F[2]) * F[2] + double(F[5]) * F[5] + double(F[8]) * F[8];
        c[3] = double(F[0]) * F[1] + double(F[3]) * F[4] + double(F[6]) * F[7];
        c[4] = double(F[0]) * F[2] + double(F[3]) * F[5] + double(F[6]) * F[8];
        c[5] = double(F[1]) * F[2] + double(F[4]) * F[5] + double(F[7]) * F[8];
        float* e = out.tensors.data() + 6 * size_t(vi);
        e[0] = float(0.5 * (c[0] - 1.0));
        e[1] = float(0.5 * (c[1] - 1.0));
        e[2] = float(0.5 * (c[2] - 1.0));
        e[3] = float(0.5 * c[3]);
        e[4] = float(0.5 * c[4]);
        e[5] = float(0.5 * c[5]);
    }
    return out;
}

std::array<double, 3> eigenvalues_sym3_jacobi(double xx, double yy, double zz, double xy,
                                              double xz, double yz) {
    double a[3][3] = {{xx, xy, xz}, {xy, yy, yz}, {xz, yz, zz}};
    for (int sweep = 0; sweep < 32; ++sweep) {
        double off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        if (off < 1e-30) break;
        for (int p = 0; p < 2; ++p) {
            for (int q = p + 1; q < 3; ++q) {
                if (std::abs(a[p][q]) < 1e-300) continue;
                double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (int r = 0; r < 3; ++r) {
                    double arp = a[r][p], arq = a[r][q];
                    a[r][p] = c * arp - s * arq;
                    a[r][q] = s * arp + c * arq;
                }
                for (int r = 0; r < 3; ++r) {
                    double apr = a[p][r], aqr = a[q][r];
                    a[p][r] = c * apr - s * aqr;
                    a[q][r] = s * apr + c * aqr;
                }
            }
        }
    }
    std::array<double, 3> eig{a[0][0], a[1][1], a[2][2]};
    std::sort(eig.begin(), eig.end());
    return eig;
}

double max_eigenvalue_sym3(double xx, double yy, double zz, double xy, double xz, double yz) {
    double p1 = xy * xy + xz * xz + yz * yz;
    if (p1 == 0.0) return std::max({xx, yy, zz});

    double q = (xx + yy + zz) / 3.0;
    double p2 = (xx - q) * (xx - q) + (yy - q) * (yy - q) + (zz - q) * (zz - q) + 2.0 * p1;
    if (p2 <= 0.0) return q;
    double p = std::sqrt(p2 / 6.0);

    // r = det((A - q I) / p) / 2
    double bxx = (xx - q) / p, byy = (yy - q) / p, bzz = (zz - q) / p;
    double bxy = xy / p, bxz = xz / p, byz = yz / p;
    double detb = bxx * (byy * bzz - byz * byz) - bxy * (bxy * bzz - byz * bxz) +
                  bxz * (bxy * byz - byy * bxz);
    double r = detb / 2.0;

    if (!std::isfinite(r) || std::abs(r) > 1.0 + 1e-8)
        return eigenvalues_sym3_jacobi(xx, yy, zz, xy, xz, yz)[2];

    r = std::clamp(r, -1.0, 1.0);
    double phi = std::acos(r) / 3.0;
    return q + 2.0 * p * std::cos(phi);
}

ImageVolume max_principal_strain(const SymTensorVolume& e) {
    ImageVolume out = make_volume(e.grid, VoxelKind::intensity_hu);
    const size_t n = e.grid.voxel_count();

#pragma omp parallel for schedule(static)
    for (long long vi = 0; vi < (long long)n; ++vi) {
        const float* t = e.tensors.data() + 6 * size_t(vi);
        out.voxels[size_t(vi)] = float(max_eigenvalue_sym3(t[0], t[1], t[2], t[3], t[4], t[5]));
    }
    return out;
}

StrainVolume strain_from_field(const DisplacementField& field) {
    TensorVolume f = deformation_gradient(field);
    SymTensorVolume e = green_lagrange(f);
    ImageVolume mp = max_principal_strain(e);

    StrainVolume out;
    out.grid = field.grid;
    out.tensors = std::move(e.tensors);
    out.max_principal = std::move(mp.voxels);
    out.border.assign(field.grid.voxel_count(), 0);

    const auto& dims = field.grid.dims;
    for (int k = 0; k < dims[2]; ++k)
        for (int j = 0; j < dims[1]; ++j)
            for (int i = 0; i < dims[0]; ++i)
                if (i == 0 || j == 0 || k == 0 || i == dims[0] - 1 || j == dims[1] - 1 ||
                    k == dims[2] - 1)
                    out.border[field.grid.index(i, j, k)] = 1;
    return out;
}

}  // namespace hedi
