#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hedi/strain.hpp"
#include "hedi/types.hpp"

namespace hedi {

struct RGB8 {
    uint8_t r = 0, g = 0, b = 0;
    bool operator==(const RGB8&) const = default;
};

/// Triangulated body surface in world coordinates (mm) with optional per-vertex
/// channels. An empty channel vector means the channel is absent.
struct TriMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;
    std::vector<float> displacement_mm;
    std::vector<float> max_principal_strain;
    std::vector<RGB8> colors;
};

struct InstabilityConfig {
    double threshold_mm = 15.0;
};

/// Iso-surface triangulation (standard 15-case tables, outward orientation,
/// deterministic cell-index-major generation). Throws EmptySurface when the iso
/// level is never crossed.
TriMesh marching_cubes(const ImageVolume& mask, double iso = 0.5);

/// Fills displacement_mm = |field| and max_principal_strain sampled at each
/// vertex; sampling clamps at grid borders.
TriMesh attach_scalars(TriMesh mesh, const DisplacementField& field, const StrainVolume& strain);

double mesh_area_mm2(const TriMesh& mesh);

/// Total area of triangles whose three-vertex mean displacement exceeds the
/// instability threshold.
double unstable_area(const TriMesh& mesh, const InstabilityConfig& config);

/// Piecewise-linear HEDI color scale: blue->cyan below the threshold, a hard
/// jump to red at the threshold, then red->yellow->white up to max_mm.
RGB8 hedi_colormap(double displacement_mm, double max_mm, const InstabilityConfig& config);

/// Colors every vertex from its displacement channel via hedi_colormap.
TriMesh apply_hedi_colors(TriMesh mesh, double max_mm, const InstabilityConfig& config);

enum class MeshChannel { displacement, strain };

struct HotspotRegion {
    std::vector<int> triangle_ids;
    double area_mm2 = 0.0;
    double peak_value = 0.0;
    Vec3 centroid_mm;
};

/// Edge-connected components of triangles whose mean vertex value reaches the
/// given channel percentile, sorted by descending area.
std::vector<HotspotRegion> hotspots(const TriMesh& mesh, MeshChannel channel,
                                    double percentile = 95.0);

/// Sub-mesh of triangles whose centroid z lies in [z_min_mm, z_max_mm];
/// vertices are re-indexed, channels carried over.
TriMesh restrict_to_z_range(const TriMesh& mesh, double z_min_mm, double z_max_mm);

/// VTK legacy ASCII PolyData: POINTS, POLYGONS, POINT_DATA with SCALARS
/// channels and COLOR_SCALARS, in that order.
void export_mesh(const TriMesh& mesh, const std::string& path);
TriMesh load_mesh(const std::string& path);

}  // namespace hedi
