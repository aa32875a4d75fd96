#include "hedi/surface.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "hedi/errors.hpp"
#include "hedi/sampling.hpp"
#include "mc_tables.hpp"
#include "smoothing.hpp"

namespace hedi {

namespace {

// Cube corner offsets and the corner pairs of the 12 edges, matching the
// lookup tables' layout.
constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdgeCorners[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                     {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
// Canonical lattice anchor and axis of each edge, for vertex deduplication.
constexpr int kEdgeAnchor[12][4] = {
    // di, dj, dk, axis
    {0, 0, 0, 0}, {1, 0, 0, 1}, {0, 1, 0, 0}, {0, 0, 0, 1},
    {0, 0, 1, 0}, {1, 0, 1, 1}, {0, 1, 1, 0}, {0, 0, 1, 1},
    {0, 0, 0, 2}, {1, 0, 0, 2}, {1, 1, 0, 2}, {0, 1, 0, 2},
};

}  // namespace

TriMesh marching_cubes(const ImageVolume& mask, double iso) {
    const Grid& grid = mask.grid;
    const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];
    if (nx < 2 || ny < 2 || nz < 2) throw EmptySurface("grid too small for an iso-surface");

    // Binary masks are anti-aliased first; midpoint-only crossings otherwise
    // inflate the surface area by ~8% (staircase artifact).
    const std::vector<float>* values_ptr = &mask.voxels;
    std::vector<float> smoothed;
    if (mask.kind == VoxelKind::binary_mask) {
        smoothed = mask.voxels;
        detail::gaussian_smooth(smoothed, grid.dims, 1.0);
        values_ptr = &smoothed;
    }
    const std::vector<float>& values_buf = *values_ptr;

    TriMesh mesh;
    std::unordered_map<size_t, int> edge_vertex;
    edge_vertex.reserve(1 << 16);

    auto value = [&](int i, int j, int k) { return double(values_buf[grid.index(i, j, k)]); };

    auto edge_key = [&](int i, int j, int k, int e) {
        size_t lin = size_t(i + kEdgeAnchor[e][0]) +
                     size_t(nx) * (size_t(j + kEdgeAnchor[e][1]) +
                                   size_t(ny) * size_t(k + kEdgeAnchor[e][2]));
        return 3 * lin + size_t(kEdgeAnchor[e][3]);
    };

    double corner_val[8];
    int vert_ids[12];

    for (int k = 0; k + 1 < nz; ++k) {
        for (int j = 0; j + 1 < ny; ++j) {
            for (int i = 0; i + 1 < nx; ++i) {
                int cube = 0;
                for (int c = 0; c < 8; ++c) {
                    corner_val[c] = value(i + kCorner[c][0], j + kCorner[c][1], k + kCorner[c][2]);
                    if (corner_val[c] < iso) cube |= 1 << c;
                }
                uint16_t edges = detail::kMcEdgeTable[cube];
                if (!edges) continue;

                for (int e = 0; e < 12; ++e) {
                    if (!(edges & (1 << e))) continue;
                    size_t key = edge_key(i, j, k, e);
                    auto it = edge_vertex.find(key);
                    if (it != edge_vertex.end()) {
                        vert_ids[e] = it->second;
                        continue;
                    }
                    int c0 = kEdgeCorners[e][0], c1 = kEdgeCorners[e][1];
                    double v0 = corner_val[c0], v1 = corner_val[c1];
                    double t = std::abs(v1 - v0) < 1e-12 ? 0.5 : (iso - v0) / (v1 - v0);
                    t = std::clamp(t, 0.0, 1.0);
                    double pi = i + kCorner[c0][0] + t * (kCorner[c1][0] - kCorner[c0][0]);
                    double pj = j + kCorner[c0][1] + t * (kCorner[c1][1] - kCorner[c0][1]);
                    double pk = k + kCorner[c0][2] + t * (kCorner[c1][2] - kCorner[c0][2]);
                    int id = int(mesh.vertices.size());
                    mesh.vertices.push_back(grid.index_to_world(pi, pj, pk));
                    edge_vertex.emplace(key, id);
                    vert_ids[e] = id;
                }

                const int8_t* row = detail::kMcTriTable[cube];
                for (int t = 0; row[t] != -1; t += 3) {
                    int a = vert_ids[row[t]], b = vert_ids[row[t + 1]], c = vert_ids[row[t + 2]];
                    if (a == b || b == c || a == c) continue;
                    mesh.triangles.push_back({a, b, c});
                }
            }
        }
    }

    if (mesh.triangles.empty()) throw EmptySurface("iso level is never crossed");
    return mesh;
}

TriMesh attach_scalars(TriMesh mesh, const DisplacementField& field, const StrainVolume& strain) {
    const size_t n = mesh.vertices.size();
    mesh.displacement_mm.resize(n);
    mesh.max_principal_strain.resize(n);

#pragma omp parallel for schedule(static)
    for (long long v = 0; v < (long long)n; ++v) {
        const Vec3& p = mesh.vertices[size_t(v)];
        mesh.displacement_mm[size_t(v)] = float(sample_field_world_clamped(field, p).norm());
        Vec3 c = strain.grid.world_to_index(p);
        mesh.max_principal_strain[size_t(v)] =
            float(detail::trilinear(strain.max_principal.data(), strain.grid.dims, c.x, c.y, c.z, true));
    }
    return mesh;
}

namespace {

double triangle_area(const TriMesh& mesh, const std::array<int, 3>& tri) {
    const Vec3& a = mesh.vertices[size_t(tri[0])];
    const Vec3& b = mesh.vertices[size_t(tri[1])];
    const Vec3& c = mesh.vertices[size_t(tri[2])];
    return 0.5 * (b - a).cross(c - a).norm();
}

}  // namespace

double mesh_area_mm2(const TriMesh& mesh) {
    double area = 0.0;
    for (const auto& tri : mesh.triangles) area += triangle_area(mesh, tri);
    return area;
}

double unstable_area(const TriMesh& mesh, const InstabilityConfig& config) {
    if (mesh.displacement_mm.size() != mesh.vertices.size())
        throw MissingChannel("displacement_mm channel absent");
    double area = 0.0;
    for (const auto& tri : mesh.triangles) {
        double mean = (mesh.displacement_mm[size_t(tri[0])] + mesh.displacement_mm[size_t(tri[1])] +
                       mesh.displacement_mm[size_t(tri[2])]) /
                      3.0;
        if (mean > config.threshold_mm) area += triangle_area(mesh, tri);
    }
    return area;
}

RGB8 hedi_colormap(double displacement_mm, double max_mm, const InstabilityConfig& config) {
    const double t = config.threshold_mm;
    const double m = std::max(max_mm, t * (1.0 + 1e-12));
    auto lerp8 = [](double a, double b, double s) {
        return uint8_t(std::lround(a + (b - a) * std::clamp(s, 0.0, 1.0)));
    };

    double d = std::max(displacement_mm, 0.0);
    if (d < t) {
        // blue -> cyan
        double s = d / t;
        return {0, lerp8(0, 255, s), 255};
    }
    d = std::min(d, m);
    double mid = 0.5 * (t + m);
    if (d <= mid) {
        // red -> yellow
        double s = (d - t) / (mid - t);
        return {255, lerp8(0, 255, s), 0};
    }
    // yellow -> white
    double s = (d - mid) / (m - mid);
    return {255, 255, lerp8(0, 255, s)};
}

TriMesh apply_hedi_colors(TriMesh mesh, double max_mm, const InstabilityConfig& config) {
    if (mesh.displacement_mm.size() != mesh.vertices.size())
        throw MissingChannel("displacement_mm channel absent");
    mesh.colors.resize(mesh.vertices.size());
    for (size_t v = 0; v < mesh.vertices.size(); ++v)
        mesh.colors[v] = hedi_colormap(mesh.displacement_mm[v], max_mm, config);
    return mesh;
}

namespace {

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(size_t(n)) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int a) {
        while (parent[size_t(a)] != a) {
            parent[size_t(a)] = parent[size_t(parent[size_t(a)])];
            a = parent[size_t(a)];
        }
        return a;
    }
    void unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[size_t(std::max(a, b))] = std::min(a, b);
    }
};

}  // namespace

std::vector<HotspotRegion> hotspots(const TriMesh& mesh, MeshChannel channel, double percentile) {
    const std::vector<float>& values =
        channel == MeshChannel::displacement ? mesh.displacement_mm : mesh.max_principal_strain;
    if (values.size() != mesh.vertices.size())
        throw MissingChannel(channel == MeshChannel::displacement ? "displacement_mm channel absent"
                                                                  : "strain channel absent");
    if (percentile <= 0.0 || percentile >= 100.0) throw Error("percentile must be in (0, 100)");
    if (values.empty()) return {};

    std::vector<float> sorted(values);
    std::sort(sorted.begin(), sorted.end());
    double rank = percentile / 100.0 * double(sorted.size() - 1);
    size_t lo = size_t(rank);
    size_t hi = std::min(lo + 1, sorted.size() - 1);
    double frac = rank - double(lo);
    double threshold = sorted[lo] * (1.0 - frac) + sorted[hi] * frac;

    const int nt = int(mesh.triangles.size());
    std::vector<char> hot(size_t(nt), 0);
    for (int t = 0; t < nt; ++t) {
        const auto& tri = mesh.triangles[size_t(t)];
        double mean =
            (values[size_t(tri[0])] + values[size_t(tri[1])] + values[size_t(tri[2])]) / 3.0;
        if (mean >= threshold) hot[size_t(t)] = 1;
    }

    // Edge-connect hot triangles through shared undirected edges.
    UnionFind uf(nt);
    std::unordered_map<uint64_t, int> edge_owner;
    edge_owner.reserve(size_t(nt) * 3);
    for (int t = 0; t < nt; ++t) {
        if (!hot[size_t(t)]) continue;
        const auto& tri = mesh.triangles[size_t(t)];
        for (int e = 0; e < 3; ++e) {
            int a = tri[size_t(e)], b = tri[size_t((e + 1) % 3)];
            uint64_t key = (uint64_t(std::min(a, b)) << 32) | uint64_t(std::max(a, b));
            auto [it, inserted] = edge_owner.emplace(key, t);
            if (!inserted) uf.unite(it->second, t);
        }
    }

    std::unordered_map<int, size_t> root_to_region;
    std::vector<HotspotRegion> regions;
    for (int t = 0; t < nt; ++t) {
        if (!hot[size_t(t)]) continue;
        int root = uf.find(t);
        auto [it, inserted] = root_to_region.emplace(root, regions.size());
        if (inserted) regions.emplace_back();
        HotspotRegion& region = regions[it->second];
        region.triangle_ids.push_back(t);
        double area = triangle_area(mesh, mesh.triangles[size_t(t)]);
        const auto& tri = mesh.triangles[size_t(t)];
        Vec3 centroid = (mesh.vertices[size_t(tri[0])] + mesh.vertices[size_t(tri[1])] +
                         mesh.vertices[size_t(tri[2])]) /
                        3.0;
        region.centroid_mm += centroid * area;
        region.area_mm2 += area;
        for (int v : tri)
            region.peak_value = std::max(region.peak_value, double(values[size_t(v)]));
    }
    for (HotspotRegion& region : regions)
        if (region.area_mm2 > 0.0) region.centroid_mm = region.centroid_mm / region.area_mm2;

    std::sort(regions.begin(), regions.end(), [](const HotspotRegion& a, const HotspotRegion& b) {
        if (a.area_mm2 != b.area_mm2) return a.area_mm2 > b.area_mm2;
        return a.triangle_ids.front() < b.triangle_ids.front();
    });
    return regions;
}

TriMesh restrict_to_z_range(const TriMesh& mesh, double z_min_mm, double z_max_mm) {
    TriMesh out;
    std::vector<int> vertex_map(mesh.vertices.size(), -1);
    auto remap = [&](int v) {
        if (vertex_map[size_t(v)] < 0) {
            vertex_map[size_t(v)] = int(out.vertices.size());
            out.vertices.push_back(mesh.vertices[size_t(v)]);
            if (!mesh.displacement_mm.empty())
                out.displacement_mm.push_back(mesh.displacement_mm[size_t(v)]);
            if (!mesh.max_principal_strain.empty())
                out.max_principal_strain.push_back(mesh.max_principal_strain[size_t(v)]);
            if (!mesh.colors.empty()) out.colors.push_back(mesh.colors[size_t(v)]);
        }
        return vertex_map[size_t(v)];
    };
    for (const auto& tri : mesh.triangles) {
        double cz = (mesh.vertices[size_t(tri[0])].z + mesh.vertices[size_t(tri[1])].z +
                     mesh.vertices[size_t(tri[2])].z) /
                    3.0;
        if (cz < z_min_mm || cz > z_max_mm) continue;
        out.triangles.push_back({remap(tri[0]), remap(tri[1]), remap(tri[2])});
    }
    return out;
}

void export_mesh(const TriMesh& mesh, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoFailure("cannot write " + path);

    char buf[256];
    out << "# vtk DataFile Version 3.0\n";
    out << "hedi surface\n";
    out << "ASCII\n";
    out << "DATASET POLYDATA\n";
    out << "POINTS " << mesh.vertices.size() << " float\n";
    for (const Vec3& v : mesh.vertices) {
        std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g\n", double(float(v.x)), double(float(v.y)),
                      double(float(v.z)));
        out << buf;
    }
    out << "POLYGONS " << mesh.triangles.size() << " " << 4 * mesh.triangles.size() << "\n";
    for (const auto& t : mesh.triangles)
        out << "3 " << t[0] << " " << t[1] << " " << t[2] << "\n";

    bool has_disp = mesh.displacement_mm.size() == mesh.vertices.size();
    bool has_strain = mesh.max_principal_strain.size() == mesh.vertices.size();
    bool has_colors = mesh.colors.size() == mesh.vertices.size();
    if (has_disp || has_strain || has_colors) {
        out << "POINT_DATA " << mesh.vertices.size() << "\n";
        auto write_scalars = [&](const char* name, const std::vector<float>& values) {
            out << "SCALARS " << name << " float 1\n";
            out << "LOOKUP_TABLE default\n";
            for (float v : values) {
                std::snprintf(buf, sizeof buf, "%.9g\n", double(v));
                out << buf;
            }
        };
        if (has_disp) write_scalars("displacement_mm", mesh.displacement_mm);
        if (has_strain) write_scalars("max_principal_strain", mesh.max_principal_strain);
        if (has_colors) {
            out << "COLOR_SCALARS rgb 3\n";
            for (const RGB8& c : mesh.colors) {
                std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g\n", c.r / 255.0, c.g / 255.0,
                              c.b / 255.0);
                out << buf;
            }
        }
    }
    if (!out) throw IoFailure("failed writing " + path);
}

TriMesh load_mesh(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoFailure("cannot open " + path);

    std::string line;
    if (!std::getline(in, line) || line.rfind("# vtk DataFile", 0) != 0)
        throw UnsupportedFormat("not a VTK legacy file: " + path);
    std::getline(in, line);  // title
    if (!std::getline(in, line) || line.substr(0, 5) != "ASCII")
        throw UnsupportedFormat("only ASCII VTK files are supported");
    if (!std::getline(in, line) || line.find("POLYDATA") == std::string::npos)
        throw UnsupportedFormat("only POLYDATA datasets are supported");

    TriMesh mesh;
    std::string tok;
    while (in >> tok) {
        if (tok == "POINTS") {
            size_t n;
            std::string type;
            if (!(in >> n >> type)) throw CorruptHeader("bad POINTS header");
            mesh.vertices.resize(n);
            for (size_t i = 0; i < n; ++i)
                if (!(in >> mesh.vertices[i].x >> mesh.vertices[i].y >> mesh.vertices[i].z))
                    throw TruncatedData("POINTS section shorter than declared");
        } else if (tok == "POLYGONS") {
            size_t m, total;
            if (!(in >> m >> total)) throw CorruptHeader("bad POLYGONS header");
            mesh.triangles.resize(m);
            for (size_t i = 0; i < m; ++i) {
                int cnt;
                if (!(in >> cnt)) throw TruncatedData("POLYGONS section shorter than declared");
                if (cnt != 3) throw UnsupportedFormat("only triangles are supported");
                auto& t = mesh.triangles[i];
                if (!(in >> t[0] >> t[1] >> t[2]))
                    throw TruncatedData("POLYGONS section shorter than declared");
            }
        } else if (tok == "POINT_DATA") {
            size_t n;
            if (!(in >> n)) throw CorruptHeader("bad POINT_DATA header");
            if (n != mesh.vertices.size()) throw CorruptHeader("POINT_DATA count mismatch");
        } else if (tok == "SCALARS") {
            std::string name, type;
            if (!(in >> name >> type)) throw CorruptHeader("bad SCALARS header");
            int comps = 1;
            std::string next;
            if (!(in >> next)) throw TruncatedData("SCALARS section truncated");
            if (next != "LOOKUP_TABLE") {
                comps = std::stoi(next);
                if (!(in >> next) || next != "LOOKUP_TABLE")
                    throw CorruptHeader("expected LOOKUP_TABLE after SCALARS");
            }
            in >> next;  // table name
            size_t count = mesh.vertices.size() * size_t(comps);
            std::vector<float> values(count);
            for (size_t i = 0; i < count; ++i)
                if (!(in >> values[i])) throw TruncatedData("SCALARS values shorter than declared");
            if (comps == 1 && name == "displacement_mm") mesh.displacement_mm = std::move(values);
            else if (comps == 1 && name == "max_principal_strain")
                mesh.max_principal_strain = std::move(values);
            // unknown scalar channels are read and dropped
        } else if (tok == "COLOR_SCALARS") {
            std::string name;
            int comps;
            if (!(in >> name >> comps)) throw CorruptHeader("bad COLOR_SCALARS header");
            if (comps != 3) throw UnsupportedFormat("COLOR_SCALARS must have 3 components");
            mesh.colors.resize(mesh.vertices.size());
            for (auto& c : mesh.colors) {
                double r, g, b;
                if (!(in >> r >> g >> b)) throw TruncatedData("COLOR_SCALARS shorter than declared");
                c = {uint8_t(std::lround(r * 255.0)), uint8_t(std::lround(g * 255.0)),
                     uint8_t(std::lround(b * 255.0))};
            }
        } else {
            throw UnsupportedFormat("unexpected VTK section: " + tok);
        }
    }
    return mesh;
}

}  // namespace hedi
