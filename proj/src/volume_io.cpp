#include "hedi/volume_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "hedi/errors.hpp"

namespace hedi {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little,
              "raw payloads are little-endian; big-endian hosts are not supported");

namespace {

enum class ElementType { uint8, int8, int16, uint16, int32, uint32, float32, float64 };

size_t element_size(ElementType t) {
    switch (t) {
        case ElementType::uint8:
        case ElementType::int8: return 1;
        case ElementType::int16:
        case ElementType::uint16: return 2;
        case ElementType::int32:
        case ElementType::uint32:
        case ElementType::float32: return 4;
        case ElementType::float64: return 8;
    }
    return 0;
}

ElementType parse_met_type(const std::string& s) {
    if (s == "MET_UCHAR") return ElementType::uint8;
    if (s == "MET_CHAR") return ElementType::int8;
    if (s == "MET_SHORT") return ElementType::int16;
    if (s == "MET_USHORT") return ElementType::uint16;
    if (s == "MET_INT") return ElementType::int32;
    if (s == "MET_UINT") return ElementType::uint32;
    if (s == "MET_FLOAT") return ElementType::float32;
    if (s == "MET_DOUBLE") return ElementType::float64;
    throw UnsupportedFormat("unsupported MetaImage ElementType: " + s);
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

struct MetaHeader {
    std::array<int, 3> dims{0, 0, 0};
    Vec3 spacing{0, 0, 0};
    Vec3 origin{0, 0, 0};
    ElementType type = ElementType::float32;
    int channels = 1;
    std::string data_file;      // "LOCAL" or filename
    std::streamoff local_offset = 0;  // payload start when data_file == LOCAL
    bool have_dims = false, have_spacing = false, have_type = false;
};

MetaHeader read_meta_header(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open " + path);

    MetaHeader h;
    std::string line;
    while (std::getline(in, line)) {
        size_t eq = line.find('=');
        if (eq == std::string::npos) throw CorruptHeader("malformed MetaImage header line: " + line);
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));

        if (key == "ObjectType") {
            if (val != "Image") throw UnsupportedFormat("MetaImage ObjectType must be Image, got " + val);
        } else if (key == "NDims") {
            if (val != "3") throw UnsupportedFormat("only NDims = 3 is supported, got " + val);
        } else if (key == "DimSize") {
            std::istringstream ss(val);
            if (!(ss >> h.dims[0] >> h.dims[1] >> h.dims[2])) throw CorruptHeader("bad DimSize: " + val);
            h.have_dims = true;
        } else if (key == "ElementSpacing") {
            std::istringstream ss(val);
            if (!(ss >> h.spacing.x >> h.spacing.y >> h.spacing.z))
                throw CorruptHeader("bad ElementSpacing: " + val);
            h.have_spacing = true;
        } else if (key == "Offset" || key == "Origin" || key == "Position") {
            std::istringstream ss(val);
            if (!(ss >> h.origin.x >> h.origin.y >> h.origin.z)) throw CorruptHeader("bad Offset: " + val);
        } else if (key == "ElementType") {
            h.type = parse_met_type(val);
            h.have_type = true;
        } else if (key == "ElementNumberOfChannels") {
            h.channels = std::stoi(val);
        } else if (key == "TransformMatrix") {
            std::istringstream ss(val);
            double m[9];
            for (double& v : m)
                if (!(ss >> v)) throw CorruptHeader("bad TransformMatrix: " + val);
            const double id[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};
            for (int i = 0; i < 9; ++i)
                if (std::abs(m[i] - id[i]) > 1e-9)
                    throw UnsupportedFormat("non-identity direction matrices are not supported");
        } else if (key == "CompressedData") {
            if (val == "True" || val == "true")
                throw UnsupportedFormat("compressed MetaImage payloads are not supported");
        } else if (key == "BinaryDataByteOrderMSB" || key == "ElementByteOrderMSB") {
            if (val == "True" || val == "true")
                throw UnsupportedFormat("big-endian payloads are not supported");
        } else if (key == "ElementDataFile") {
            h.data_file = val;
            h.local_offset = in.tellg();
            break;  // ElementDataFile terminates the header
        }
        // other keys (BinaryData, CenterOfRotation, AnatomicalOrientation, ...) are ignored
    }
    if (h.data_file.empty()) throw CorruptHeader("missing ElementDataFile in " + path);
    if (!h.have_dims || h.dims[0] <= 0 || h.dims[1] <= 0 || h.dims[2] <= 0)
        throw CorruptHeader("DimSize missing or non-positive in " + path);
    if (!h.have_spacing || h.spacing.x <= 0 || h.spacing.y <= 0 || h.spacing.z <= 0)
        throw CorruptHeader("ElementSpacing missing or non-positive in " + path);
    if (!h.have_type) throw CorruptHeader("missing ElementType in " + path);
    return h;
}

std::vector<float> decode_payload(const std::vector<char>& raw, ElementType type, size_t count) {
    std::vector<float> out(count);
    const char* p = raw.data();
    switch (type) {
        case ElementType::uint8: {
            for (size_t i = 0; i < count; ++i) out[i] = float(reinterpret_cast<const uint8_t*>(p)[i]);
            break;
        }
        case ElementType::int8: {
            for (size_t i = 0; i < count; ++i) out[i] = float(reinterpret_cast<const int8_t*>(p)[i]);
            break;
        }
        case ElementType::int16: {
            int16_t v;
            for (size_t i = 0; i < count; ++i) { std::memcpy(&v, p + 2 * i, 2); out[i] = float(v); }
            break;
        }
        case ElementType::uint16: {
            uint16_t v;
            for (size_t i = 0; i < count; ++i) { std::memcpy(&v, p + 2 * i, 2); out[i] = float(v); }
            break;
        }
        case ElementType::int32: {
            int32_t v;
            for (size_t i = 0; i < count; ++i) { std::memcpy(&v, p + 4 * i, 4); out[i] = float(v); }
            break;
        }
        case ElementType::uint32: {
            uint32_t v;
            for (size_t i = 0; i < count; ++i) { std::memcpy(&v, p + 4 * i, 4); out[i] = float(v); }
            break;
        }
        case ElementType::float32: {
            out.resize(count);
            std::memcpy(out.data(), p, 4 * count);
            break;
        }
        case ElementType::float64: {
            double v;
            for (size_t i = 0; i < count; ++i) { std::memcpy(&v, p + 8 * i, 8); out[i] = float(v); }
            break;
        }
    }
    return out;
}

std::vector<char> read_meta_payload(const std::string& header_path, const MetaHeader& h, size_t count) {
    size_t bytes = count * element_size(h.type);
    std::vector<char> raw(bytes);

    if (h.data_file == "LOCAL") {
        std::ifstream in(header_path, std::ios::binary);
        if (!in) throw IoFailure("cannot open " + header_path);
        in.seekg(h.local_offset);
        in.read(raw.data(), std::streamsize(bytes));
        if (size_t(in.gcount()) < bytes) throw TruncatedData("payload shorter than header-declared size");
    } else {
        fs::path data_path = fs::path(header_path).parent_path() / h.data_file;
        std::ifstream in(data_path, std::ios::binary);
        if (!in) throw IoFailure("cannot open data file " + data_path.string());
        in.read(raw.data(), std::streamsize(bytes));
        if (size_t(in.gcount()) < bytes)
            throw TruncatedData("payload shorter than header-declared size in " + data_path.string());
    }
    return raw;
}

void write_meta(const std::string& path, const Grid& grid, ElementType type, int channels,
                const void* data, size_t bytes) {
    fs::path header_path(path);
    fs::path raw_path = header_path;
    raw_path.replace_extension(".raw");

    char buf[512];
    std::ostringstream hdr;
    hdr << "ObjectType = Image\n";
    hdr << "NDims = 3\n";
    hdr << "DimSize = " << grid.dims[0] << " " << grid.dims[1] << " " << grid.dims[2] << "\n";
    std::snprintf(buf, sizeof buf, "ElementSpacing = %.17g %.17g %.17g\n", grid.spacing.x,
                  grid.spacing.y, grid.spacing.z);
    hdr << buf;
    std::snprintf(buf, sizeof buf, "Offset = %.17g %.17g %.17g\n", grid.origin.x, grid.origin.y,
                  grid.origin.z);
    hdr << buf;
    const char* tname = nullptr;
    switch (type) {
        case ElementType::uint8: tname = "MET_UCHAR"; break;
        case ElementType::uint16: tname = "MET_USHORT"; break;
        case ElementType::float32: tname = "MET_FLOAT"; break;
        default: throw Error("unexpected writer element type");
    }
    hdr << "ElementType = " << tname << "\n";
    hdr << "ElementNumberOfChannels = " << channels << "\n";
    hdr << "ElementDataFile = " << raw_path.filename().string() << "\n";

    std::ofstream out(header_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoFailure("cannot write " + path);
    out << hdr.str();
    if (!out) throw IoFailure("failed writing header " + path);

    std::ofstream rout(raw_path, std::ios::binary | std::ios::trunc);
    if (!rout) throw IoFailure("cannot write " + raw_path.string());
    rout.write(static_cast<const char*>(data), std::streamsize(bytes));
    if (!rout) throw IoFailure("failed writing payload " + raw_path.string());
}

// --- minimal uncompressed NIfTI-1 ---

struct Nifti1Header {
    int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    int32_t extents;
    int16_t session_error;
    char regular;
    char dim_info;
    int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    int16_t intent_code;
    int16_t datatype;
    int16_t bitpix;
    int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration;
    float toffset;
    int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    int16_t qform_code;
    int16_t sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4], srow_y[4], srow_z[4];
    char intent_name[16];
    char magic[4];
};
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must pack to 348 bytes");

constexpr int16_t kNiftiUint8 = 2;
constexpr int16_t kNiftiInt16 = 4;
constexpr int16_t kNiftiFloat32 = 16;

ImageVolume load_nifti(const std::string& path, VoxelKind kind) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open " + path);

    Nifti1Header h{};
    in.read(reinterpret_cast<char*>(&h), sizeof h);
    if (size_t(in.gcount()) < sizeof h) throw CorruptHeader("file shorter than NIfTI-1 header");
    if (h.sizeof_hdr != 348) throw UnsupportedFormat("not a little-endian NIfTI-1 file (sizeof_hdr)");
    if (std::strncmp(h.magic, "n+1", 3) != 0)
        throw UnsupportedFormat("only single-file NIfTI-1 (magic n+1) is supported");
    if (h.dim[0] < 3 || h.dim[0] > 7) throw CorruptHeader("NIfTI dim[0] out of range");
    for (int d = 4; d <= h.dim[0]; ++d)
        if (h.dim[d] > 1) throw UnsupportedFormat("multi-volume NIfTI files are not supported");

    ElementType type;
    if (h.datatype == kNiftiUint8) type = ElementType::uint8;
    else if (h.datatype == kNiftiInt16) type = ElementType::int16;
    else if (h.datatype == kNiftiFloat32) type = ElementType::float32;
    else throw UnsupportedFormat("NIfTI datatype " + std::to_string(h.datatype) + " not supported");

    if (h.scl_slope != 0.0f && h.scl_slope != 1.0f)
        throw UnsupportedFormat("NIfTI intensity rescaling (scl_slope) is not supported");
    if (h.scl_inter != 0.0f) throw UnsupportedFormat("NIfTI intensity offset (scl_inter) is not supported");

    ImageVolume vol;
    vol.kind = kind;
    vol.grid.dims = {h.dim[1], h.dim[2], h.dim[3]};
    vol.grid.spacing = {h.pixdim[1], h.pixdim[2], h.pixdim[3]};
    if (vol.grid.dims[0] <= 0 || vol.grid.dims[1] <= 0 || vol.grid.dims[2] <= 0)
        throw CorruptHeader("NIfTI dims non-positive");
    if (vol.grid.spacing.x <= 0 || vol.grid.spacing.y <= 0 || vol.grid.spacing.z <= 0)
        throw CorruptHeader("NIfTI pixdim non-positive");

    if (h.sform_code > 0) {
        const float* rows[3] = {h.srow_x, h.srow_y, h.srow_z};
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
                double expect = (r == c) ? vol.grid.spacing[r] : 0.0;
                if (std::abs(double(rows[r][c]) - expect) > 1e-4 * vol.grid.spacing[r])
                    throw UnsupportedFormat("non-identity direction cosines are not supported");
            }
        vol.grid.origin = {h.srow_x[3], h.srow_y[3], h.srow_z[3]};
    } else if (h.qform_code > 0) {
        if (h.quatern_b != 0.0f || h.quatern_c != 0.0f || h.quatern_d != 0.0f || h.pixdim[0] < 0.0f)
            throw UnsupportedFormat("non-identity direction cosines are not supported");
        vol.grid.origin = {h.qoffset_x, h.qoffset_y, h.qoffset_z};
    }

    size_t count = vol.grid.voxel_count();
    size_t offset = size_t(h.vox_offset);
    if (offset < sizeof h) throw CorruptHeader("NIfTI vox_offset inside header");
    size_t bytes = count * element_size(type);
    std::vector<char> raw(bytes);
    in.seekg(std::streamoff(offset));
    in.read(raw.data(), std::streamsize(bytes));
    if (size_t(in.gcount()) < bytes) throw TruncatedData("NIfTI payload shorter than declared dims");
    vol.voxels = decode_payload(raw, type, count);
    return vol;
}

void save_nifti(const ImageVolume& vol, const std::string& path) {
    Nifti1Header h{};
    h.sizeof_hdr = 348;
    h.regular = 'r';
    h.dim[0] = 3;
    h.dim[1] = int16_t(vol.grid.dims[0]);
    h.dim[2] = int16_t(vol.grid.dims[1]);
    h.dim[3] = int16_t(vol.grid.dims[2]);
    for (int d = 4; d < 8; ++d) h.dim[d] = 1;
    h.pixdim[0] = 1.0f;
    h.pixdim[1] = float(vol.grid.spacing.x);
    h.pixdim[2] = float(vol.grid.spacing.y);
    h.pixdim[3] = float(vol.grid.spacing.z);
    h.vox_offset = 352.0f;
    h.scl_slope = 1.0f;
    h.sform_code = 1;
    h.srow_x[0] = float(vol.grid.spacing.x);
    h.srow_y[1] = float(vol.grid.spacing.y);
    h.srow_z[2] = float(vol.grid.spacing.z);
    h.srow_x[3] = float(vol.grid.origin.x);
    h.srow_y[3] = float(vol.grid.origin.y);
    h.srow_z[3] = float(vol.grid.origin.z);
    std::memcpy(h.magic, "n+1", 4);

    size_t count = vol.grid.voxel_count();
    std::vector<char> payload;
    if (vol.kind == VoxelKind::binary_mask) {
        h.datatype = kNiftiUint8;
        h.bitpix = 8;
        payload.resize(count);
        for (size_t i = 0; i < count; ++i)
            payload[i] = char(uint8_t(std::lround(vol.voxels[i])));
    } else if (vol.kind == VoxelKind::label) {
        h.datatype = kNiftiInt16;
        h.bitpix = 16;
        payload.resize(2 * count);
        for (size_t i = 0; i < count; ++i) {
            int16_t v = int16_t(std::lround(vol.voxels[i]));
            std::memcpy(payload.data() + 2 * i, &v, 2);
        }
    } else {
        h.datatype = kNiftiFloat32;
        h.bitpix = 32;
        payload.resize(4 * count);
        std::memcpy(payload.data(), vol.voxels.data(), 4 * count);
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoFailure("cannot write " + path);
    out.write(reinterpret_cast<const char*>(&h), sizeof h);
    const char ext[4] = {0, 0, 0, 0};
    out.write(ext, 4);
    out.write(payload.data(), std::streamsize(payload.size()));
    if (!out) throw IoFailure("failed writing " + path);
}

std::string lower_extension(const std::string& path) {
    std::string ext = fs::path(path).extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext;
}

}  // namespace

ImageVolume load_volume(const std::string& path, VoxelKind kind) {
    std::string ext = lower_extension(path);
    if (ext == ".nii") return load_nifti(path, kind);
    if (ext != ".mhd" && ext != ".mha")
        throw UnsupportedFormat("unsupported volume format: " + path);

    MetaHeader h = read_meta_header(path);
    if (h.channels != 1)
        throw UnsupportedFormat("scalar volume expected, header declares " +
                                std::to_string(h.channels) + " channels");
    ImageVolume vol;
    vol.kind = kind;
    vol.grid = Grid{h.dims, h.spacing, h.origin};
    size_t count = vol.grid.voxel_count();
    std::vector<char> raw = read_meta_payload(path, h, count);
    vol.voxels = decode_payload(raw, h.type, count);
    return vol;
}

void save_volume(const ImageVolume& volume, const std::string& path) {
    std::string ext = lower_extension(path);
    if (ext == ".nii") {
        save_nifti(volume, path);
        return;
    }
    if (ext != ".mhd") throw UnsupportedFormat("unsupported volume format for writing: " + path);

    size_t count = volume.grid.voxel_count();
    if (volume.kind == VoxelKind::binary_mask) {
        std::vector<uint8_t> buf(count);
        for (size_t i = 0; i < count; ++i) buf[i] = uint8_t(std::lround(volume.voxels[i]));
        write_meta(path, volume.grid, ElementType::uint8, 1, buf.data(), buf.size());
    } else if (volume.kind == VoxelKind::label) {
        std::vector<uint16_t> buf(count);
        for (size_t i = 0; i < count; ++i) buf[i] = uint16_t(std::lround(volume.voxels[i]));
        write_meta(path, volume.grid, ElementType::uint16, 1, buf.data(), 2 * buf.size());
    } else {
        write_meta(path, volume.grid, ElementType::float32, 1, volume.voxels.data(), 4 * count);
    }
}

DisplacementField load_field(const std::string& path) {
    std::string ext = lower_extension(path);
    if (ext != ".mhd" && ext != ".mha")
        throw UnsupportedFormat("displacement fields use MetaImage format: " + path);

    MetaHeader h = read_meta_header(path);
    if (h.channels != 3)
        throw UnsupportedFormat("displacement field expects 3 channels, header declares " +
                                std::to_string(h.channels));
    if (h.type != ElementType::float32)
        throw UnsupportedFormat("displacement field payload must be MET_FLOAT");

    DisplacementField field;
    field.grid = Grid{h.dims, h.spacing, h.origin};
    size_t count = 3 * field.grid.voxel_count();
    std::vector<char> raw = read_meta_payload(path, h, count);
    field.vectors.resize(count);
    std::memcpy(field.vectors.data(), raw.data(), 4 * count);
    return field;
}

void save_field(const DisplacementField& field, const std::string& path) {
    if (lower_extension(path) != ".mhd")
        throw UnsupportedFormat("displacement fields are written as MetaImage (.mhd): " + path);
    write_meta(path, field.grid, ElementType::float32, 3, field.vectors.data(),
               4 * field.vectors.size());
}

LandmarkSet load_landmarks(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoFailure("cannot open " + path);

    std::string line;
    if (!std::getline(in, line)) throw MalformedRow("empty landmark file, expected header row");
    if (trim(line) != "id,rx,ry,rz,vx,vy,vz")
        throw MalformedRow("unexpected landmark header: " + trim(line));

    LandmarkSet set;
    std::set<std::string> seen;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        std::string t = trim(line);
        if (t.empty()) continue;

        std::vector<std::string> cols;
        std::istringstream ss(t);
        std::string col;
        while (std::getline(ss, col, ',')) cols.push_back(trim(col));
        if (t.back() == ',') cols.push_back("");
        if (cols.size() != 7)
            throw MalformedRow("row " + std::to_string(row) + ": expected 7 columns, got " +
                               std::to_string(cols.size()));

        Landmark lm;
        lm.id = cols[0];
        double v[6];
        for (int i = 0; i < 6; ++i) {
            try {
                size_t pos = 0;
                v[i] = std::stod(cols[size_t(i) + 1], &pos);
                if (pos != cols[size_t(i) + 1].size()) throw std::invalid_argument("trailing chars");
            } catch (const std::exception&) {
                throw MalformedRow("row " + std::to_string(row) + ": non-numeric value '" +
                                   cols[size_t(i) + 1] + "'");
            }
            if (!std::isfinite(v[i]))
                throw MalformedRow("row " + std::to_string(row) + ": non-finite coordinate");
        }
        lm.rest_point = {v[0], v[1], v[2]};
        lm.valsalva_point = {v[3], v[4], v[5]};
        if (!seen.insert(lm.id).second) throw DuplicateId("duplicate landmark id: " + lm.id);
        set.entries.push_back(std::move(lm));
    }
    return set;
}

void save_landmarks(const LandmarkSet& landmarks, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoFailure("cannot write " + path);
    out << "id,rx,ry,rz,vx,vy,vz\n";
    char buf[512];
    for (const Landmark& lm : landmarks.entries) {
        std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", lm.id.c_str(),
                      lm.rest_point.x, lm.rest_point.y, lm.rest_point.z, lm.valsalva_point.x,
                      lm.valsalva_point.y, lm.valsalva_point.z);
        out << buf;
    }
    if (!out) throw IoFailure("failed writing " + path);
}

}  // namespace hedi
