#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "hedi/types.hpp"

namespace hedi {

/// Per-voxel 3x3 tensors, row-major, 9 floats per voxel, x-fastest voxel order.
struct TensorVolume {
    Grid grid;
    std::vector<float> tensors;

    Mat3 at(int i, int j, int k) const {
        Mat3 t;
        size_t b = 9 * grid.index(i, j, k);
        for (int n = 0; n < 9; ++n) t.m[size_t(n)] = tensors[b + size_t(n)];
        return t;
    }
};

/// Per-voxel symmetric 3x3 tensors, 6 stored components: xx, yy, zz, xy, xz, yz.
struct SymTensorVolume {
    Grid grid;
    std::vector<float> tensors;

    std::array<double, 6> at(int i, int j, int k) const {
        size_t b = 6 * grid.index(i, j, k);
        return {tensors[b], tensors[b + 1], tensors[b + 2],
                tensors[b + 3], tensors[b + 4], tensors[b + 5]};
    }
};

/// Green-Lagrange strain tensors plus the maximum principal strain scalar.
/// `border` flags voxels whose derivatives used one-sided differences.
struct StrainVolume {
    Grid grid;
    std::vector<float> tensors;        // 6 per voxel: Exx,Eyy,Ezz,Exy,Exz,Eyz
    std::vector<float> max_principal;  // 1 per voxel
    std::vector<uint8_t> border;
};

/// F = I + grad u; central differences in the interior, one-sided at borders,
/// per-axis spacing division so F is dimensionless.
TensorVolume deformation_gradient(const DisplacementField& field);

/// E = 1/2 (F^T F - I), symmetric by construction.
SymTensorVolume green_lagrange(const TensorVolume& f);

/// Largest eigenvalue per voxel, closed-form trigonometric solve with a Jacobi
/// fallback on degenerate discriminants.
ImageVolume max_principal_strain(const SymTensorVolume& e);

/// deformation_gradient -> green_lagrange -> max_principal_strain.
StrainVolume strain_from_field(const DisplacementField& field);

double max_eigenvalue_sym3(double xx, double yy, double zz, double xy, double xz, double yz);
std::array<double, 3> eigenvalues_sym3_jacobi(double xx, double yy, double zz, double xy,
                                              double xz, double yz);

}  // namespace hedi
