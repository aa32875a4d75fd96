#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace hedi {

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
    Vec3 operator-() const { return {-x, -y, -z}; }

    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const { return std::sqrt(dot(*this)); }
    Vec3 normalized() const {
        double n = norm();
        return n > 0.0 ? *this / n : Vec3{0, 0, 0};
    }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

/// Row-major 3x3 matrix, just enough for deformation gradients and warps.
struct Mat3 {
    std::array<double, 9> m{};

    static Mat3 identity() { return {{1, 0, 0, 0, 1, 0, 0, 0, 1}}; }
    double& operator()(int r, int c) { return m[size_t(3 * r + c)]; }
    double operator()(int r, int c) const { return m[size_t(3 * r + c)]; }

    Vec3 operator*(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
                m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }
    Mat3 operator+(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 9; ++i) r.m[size_t(i)] = m[size_t(i)] + o.m[size_t(i)];
        return r;
    }
    double det() const {
        return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
               m[2] * (m[3] * m[7] - m[4] * m[6]);
    }
};

/// Voxel grid geometry. World position of voxel (i,j,k) center is
/// origin + (i,j,k) * spacing per axis; this convention is shared by every module.
struct Grid {
    std::array<int, 3> dims{0, 0, 0};
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{0.0, 0.0, 0.0};

    std::size_t voxel_count() const {
        return std::size_t(dims[0]) * std::size_t(dims[1]) * std::size_t(dims[2]);
    }
    std::size_t index(int i, int j, int k) const {
        return std::size_t(i) + std::size_t(dims[0]) * (std::size_t(j) + std::size_t(dims[1]) * std::size_t(k));
    }
    Vec3 index_to_world(double i, double j, double k) const {
        return {origin.x + i * spacing.x, origin.y + j * spacing.y, origin.z + k * spacing.z};
    }
    Vec3 world_to_index(const Vec3& p) const {
        return {(p.x - origin.x) / spacing.x, (p.y - origin.y) / spacing.y,
                (p.z - origin.z) / spacing.z};
    }
    /// Physical extent dims*spacing per axis (mm).
    Vec3 extent() const {
        return {dims[0] * spacing.x, dims[1] * spacing.y, dims[2] * spacing.z};
    }
    bool same_geometry(const Grid& o, double tol = 0.0) const {
        auto close = [tol](double a, double b) { return std::abs(a - b) <= tol; };
        return dims == o.dims && close(spacing.x, o.spacing.x) && close(spacing.y, o.spacing.y) &&
               close(spacing.z, o.spacing.z) && close(origin.x, o.origin.x) &&
               close(origin.y, o.origin.y) && close(origin.z, o.origin.z);
    }
};

enum class VoxelKind { intensity_hu, binary_mask, label };

/// Dense 3D scalar volume, voxels stored x-fastest. Carries HU intensities,
/// {0,1} masks, or non-negative integer labels depending on `kind`.
struct ImageVolume {
    Grid grid;
    VoxelKind kind = VoxelKind::intensity_hu;
    std::vector<float> voxels;

    float& at(int i, int j, int k) { return voxels[grid.index(i, j, k)]; }
    float at(int i, int j, int k) const { return voxels[grid.index(i, j, k)]; }
};

inline ImageVolume make_volume(const Grid& grid, VoxelKind kind, float fill = 0.0f) {
    return ImageVolume{grid, kind, std::vector<float>(grid.voxel_count(), fill)};
}

/// Fixed label enumeration for segmentation volumes; 0 is reserved for background.
struct LabelCodes {
    static constexpr int background = 0;
    static constexpr int abdominal_cavity = 1;
    static constexpr int rectus_muscles = 2;
    static constexpr int lateral_muscles = 3;
    static constexpr int hernia_sac = 4;
};

/// Per-voxel displacement vectors in mm, world frame, interleaved xyz, x-fastest
/// voxel order. A vector is the motion of the grid point to its counterpart in
/// the other scan.
struct DisplacementField {
    Grid grid;
    std::vector<float> vectors;  // 3 * voxel_count

    Vec3 at(int i, int j, int k) const {
        std::size_t b = 3 * grid.index(i, j, k);
        return {vectors[b], vectors[b + 1], vectors[b + 2]};
    }
    void set(int i, int j, int k, const Vec3& v) {
        std::size_t b = 3 * grid.index(i, j, k);
        vectors[b] = float(v.x);
        vectors[b + 1] = float(v.y);
        vectors[b + 2] = float(v.z);
    }
};

inline DisplacementField make_field(const Grid& grid) {
    return DisplacementField{grid, std::vector<float>(3 * grid.voxel_count(), 0.0f)};
}

struct Landmark {
    std::string id;
    Vec3 rest_point;
    Vec3 valsalva_point;
};

struct LandmarkSet {
    std::vector<Landmark> entries;
};

enum class InterpMode { linear, nearest };

}  // namespace hedi
