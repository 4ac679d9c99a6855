#include "rockseg/io.hpp"

#include "rockseg/error.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <system_error>

namespace fs = std::filesystem;

namespace rockseg {

ByteOrder parse_byte_order(const std::string& s) {
    if (s == "little" || s == "le") return ByteOrder::little;
    if (s == "big" || s == "be") return ByteOrder::big;
    fail(ErrorCode::parameter, "byte order must be little or big, got '" + s + "'");
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) fail(ErrorCode::io, "read failed for " + path.string());
    return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
    fs::path tmp = path;
    tmp += ".part";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorCode::io, "cannot write " + path.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) fail(ErrorCode::io, "write failed for " + path.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        fail(ErrorCode::io, "cannot write " + path.string());
    }
}

// ---------------------------------------------------------------------------
// raw

VoxelVolume load_raw(const fs::path& path, const RawGeometry& g) {
    const Dims& d = g.dims;
    if (d.nx == 0 || d.ny == 0 || d.nz == 0) fail(ErrorCode::parameter, "raw dimensions must be positive");
    if (g.bit_depth != 8 && g.bit_depth != 16) fail(ErrorCode::parameter, "raw bit depth must be 8 or 16");

    std::error_code ec;
    const auto actual = fs::file_size(path, ec);
    if (ec) fail(ErrorCode::io, "cannot read " + path.string() + ": " + ec.message());
    const std::size_t bps = static_cast<std::size_t>(g.bit_depth / 8);
    const std::size_t expected = d.count() * bps;
    if (actual < expected)
        fail(ErrorCode::dimension_mismatch, path.string() + ": geometry " + d.str() + " x " +
                                                std::to_string(bps) + " bytes needs " + std::to_string(expected) +
                                                " bytes, file has " + std::to_string(actual));

    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::io, "cannot open " + path.string());
    std::vector<unsigned char> bytes(expected);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(expected));
    if (static_cast<std::size_t>(in.gcount()) != expected) fail(ErrorCode::io, "short read from " + path.string());

    std::vector<std::uint16_t> data(d.count());
    const std::size_t plane = d.slice_size();
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::uint16_t v;
        if (bps == 1) {
            v = bytes[i];
        } else if (g.byte_order == ByteOrder::little) {
            v = static_cast<std::uint16_t>(bytes[2 * i] | (bytes[2 * i + 1] << 8));
        } else {
            v = static_cast<std::uint16_t>((bytes[2 * i] << 8) | bytes[2 * i + 1]);
        }
        std::size_t dst = i;
        if (g.transpose) {
            const std::size_t z = i / plane, r = i % plane;
            const std::size_t y = r % d.ny, x = r / d.ny;
            dst = d.index(x, y, z);
        }
        data[dst] = v;
    }
    return VoxelVolume(d, g.bit_depth, g.voxel_size, std::move(data));
}

void export_raw(const VoxelVolume& vol, const fs::path& path, ByteOrder order, bool transpose) {
    const Dims& d = vol.dims();
    const std::size_t bps = vol.bit_depth() == 8 ? 1 : 2;
    std::string out(vol.size() * bps, '\0');
    const std::size_t plane = d.slice_size();
    for (std::size_t i = 0; i < vol.size(); ++i) {
        std::size_t src = i;
        if (transpose) {
            const std::size_t z = i / plane, r = i % plane;
            src = d.index(r / d.ny, r % d.ny, z);
        }
        const std::uint16_t v = vol.data()[src];
        if (bps == 1) {
            out[i] = static_cast<char>(v);
        } else if (order == ByteOrder::little) {
            out[2 * i] = static_cast<char>(v & 0xff);
            out[2 * i + 1] = static_cast<char>(v >> 8);
        } else {
            out[2 * i] = static_cast<char>(v >> 8);
            out[2 * i + 1] = static_cast<char>(v & 0xff);
        }
    }
    write_file(path, out);
}

void export_labels_raw(const LabelVolume& labels, const fs::path& path) {
    write_file(path, std::string(labels.labels().begin(), labels.labels().end()));
}

LabelVolume load_labels_raw(const fs::path& path, const Dims& dims, double voxel_size) {
    const std::string bytes = read_file(path);
    if (bytes.size() < dims.count())
        fail(ErrorCode::dimension_mismatch, path.string() + ": label geometry " + dims.str() + " needs " +
                                                std::to_string(dims.count()) + " bytes, file has " +
                                                std::to_string(bytes.size()));
    std::vector<std::uint8_t> labels(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(dims.count()));
    const int k = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end());
    return LabelVolume(dims, voxel_size, std::move(labels), k);
}

// ---------------------------------------------------------------------------
// TIFF

namespace {

struct TiffReader {
    const std::string& buf;
    bool little = true;
    std::string name;

    std::uint16_t u16(std::size_t off) const {
        if (off + 2 > buf.size()) fail(ErrorCode::unsupported_format, name + ": truncated TIFF");
        const auto b0 = static_cast<unsigned char>(buf[off]), b1 = static_cast<unsigned char>(buf[off + 1]);
        return little ? static_cast<std::uint16_t>(b0 | (b1 << 8)) : static_cast<std::uint16_t>((b0 << 8) | b1);
    }
    std::uint32_t u32(std::size_t off) const {
        if (off + 4 > buf.size()) fail(ErrorCode::unsupported_format, name + ": truncated TIFF");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            const std::uint32_t b = static_cast<unsigned char>(buf[off + static_cast<std::size_t>(i)]);
            v |= little ? b << (8 * i) : b << (8 * (3 - i));
        }
        return v;
    }
};

struct TiffImage {
    std::size_t width = 0, height = 0;
    int bits = 0;
    std::vector<std::uint16_t> pixels;
};

TiffImage read_tiff(const fs::path& path) {
    const std::string buf = read_file(path);
    TiffReader r{buf, true, path.string()};
    if (buf.size() < 8) fail(ErrorCode::unsupported_format, r.name + ": not a TIFF file");
    if (buf[0] == 'I' && buf[1] == 'I') r.little = true;
    else if (buf[0] == 'M' && buf[1] == 'M') r.little = false;
    else fail(ErrorCode::unsupported_format, r.name + ": not a TIFF file");
    if (r.u16(2) != 42) fail(ErrorCode::unsupported_format, r.name + ": BigTIFF and non-baseline TIFF are not supported");

    const std::size_t ifd = r.u32(4);
    const std::size_t n = r.u16(ifd);
    std::map<int, std::vector<std::uint32_t>> tags;
    for (std::size_t e = 0; e < n; ++e) {
        const std::size_t off = ifd + 2 + 12 * e;
        const int tag = r.u16(off);
        const int type = r.u16(off + 2);
        const std::size_t count = r.u32(off + 4);
        std::size_t size = 0;
        switch (type) {
        case 1: case 2: case 6: case 7: size = 1; break;
        case 3: case 8: size = 2; break;
        case 4: case 9: size = 4; break;
        default: continue;  // rationals and doubles carry nothing we need
        }
        const std::size_t data_off = count * size <= 4 ? off + 8 : r.u32(off + 8);
        std::vector<std::uint32_t> values(count);
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t p = data_off + i * size;
            if (size == 1) {
                if (p >= buf.size()) fail(ErrorCode::unsupported_format, r.name + ": truncated TIFF");
                values[i] = static_cast<unsigned char>(buf[p]);
            } else if (size == 2) {
                values[i] = r.u16(p);
            } else {
                values[i] = r.u32(p);
            }
        }
        tags[tag] = std::move(values);
    }

    auto get = [&](int tag, std::uint32_t fallback) -> std::uint32_t {
        auto it = tags.find(tag);
        return it == tags.end() || it->second.empty() ? fallback : it->second[0];
    };
    auto require = [&](int tag, const char* what) -> const std::vector<std::uint32_t>& {
        auto it = tags.find(tag);
        if (it == tags.end()) fail(ErrorCode::unsupported_format, r.name + ": missing " + what + " tag");
        return it->second;
    };

    TiffImage img;
    img.width = require(256, "ImageWidth")[0];
    img.height = require(257, "ImageLength")[0];
    const std::uint32_t spp = get(277, 1);
    const std::uint32_t photometric = get(262, 1);
    if (spp != 1 || (photometric != 0 && photometric != 1))
        fail(ErrorCode::unsupported_format, r.name + ": only single-channel grayscale TIFF is supported");
    img.bits = static_cast<int>(get(258, 1));
    if (img.bits != 8 && img.bits != 16)
        fail(ErrorCode::unsupported_format, r.name + ": unsupported bits per sample " + std::to_string(img.bits));
    if (get(339, 1) != 1) fail(ErrorCode::unsupported_format, r.name + ": only unsigned integer samples are supported");
    if (tags.count(322) || tags.count(324)) fail(ErrorCode::unsupported_format, r.name + ": tiled TIFF is not supported");
    const std::uint32_t compression = get(259, 1);
    if (compression != 1 && compression != 8 && compression != 32946)
        fail(ErrorCode::unsupported_format, r.name + ": unsupported compression " + std::to_string(compression));
    const std::uint32_t predictor = get(317, 1);
    if (predictor != 1 && predictor != 2)
        fail(ErrorCode::unsupported_format, r.name + ": unsupported predictor " + std::to_string(predictor));

    const auto& offsets = require(273, "StripOffsets");
    const auto& counts = require(279, "StripByteCounts");
    if (offsets.size() != counts.size()) fail(ErrorCode::unsupported_format, r.name + ": inconsistent strip tables");
    const std::size_t rows_per_strip = std::min<std::size_t>(get(278, 0xffffffffu), img.height);
    const std::size_t bps = static_cast<std::size_t>(img.bits / 8);
    const std::size_t row_bytes = img.width * bps;

    std::string raster;
    raster.reserve(row_bytes * img.height);
    for (std::size_t s = 0; s < offsets.size(); ++s) {
        if (static_cast<std::size_t>(offsets[s]) + counts[s] > buf.size())
            fail(ErrorCode::unsupported_format, r.name + ": strip outside file");
        const std::size_t rows = std::min(rows_per_strip, img.height - std::min(img.height, s * rows_per_strip));
        const std::size_t want = rows * row_bytes;
        if (compression == 1) {
            raster.append(buf, offsets[s], std::min<std::size_t>(counts[s], want));
        } else {
            std::string out(want, '\0');
            uLongf out_len = static_cast<uLongf>(want);
            const int rc = uncompress(reinterpret_cast<Bytef*>(out.data()), &out_len,
                                      reinterpret_cast<const Bytef*>(buf.data() + offsets[s]), counts[s]);
            if (rc != Z_OK && rc != Z_BUF_ERROR) fail(ErrorCode::unsupported_format, r.name + ": corrupt deflate strip");
            out.resize(out_len);
            raster += out;
        }
    }
    if (raster.size() < row_bytes * img.height) fail(ErrorCode::unsupported_format, r.name + ": image data truncated");

    img.pixels.resize(img.width * img.height);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        if (bps == 1) {
            img.pixels[i] = static_cast<unsigned char>(raster[i]);
        } else {
            const auto b0 = static_cast<unsigned char>(raster[2 * i]), b1 = static_cast<unsigned char>(raster[2 * i + 1]);
            img.pixels[i] = r.little ? static_cast<std::uint16_t>(b0 | (b1 << 8)) : static_cast<std::uint16_t>((b0 << 8) | b1);
        }
    }
    if (predictor == 2) {
        const std::uint32_t mask = bps == 1 ? 0xffu : 0xffffu;
        for (std::size_t y = 0; y < img.height; ++y)
            for (std::size_t x = 1; x < img.width; ++x) {
                auto& p = img.pixels[y * img.width + x];
                p = static_cast<std::uint16_t>((p + img.pixels[y * img.width + x - 1]) & mask);
            }
    }
    if (photometric == 0) {
        const std::uint16_t top = bps == 1 ? 255 : 65535;
        for (auto& p : img.pixels) p = static_cast<std::uint16_t>(top - p);
    }
    return img;
}

}  // namespace

VoxelVolume load_tiff_stack(const std::vector<fs::path>& paths, double voxel_size) {
    if (paths.empty()) fail(ErrorCode::parameter, "TIFF stack needs at least one file");
    std::vector<std::uint16_t> data;
    Dims dims;
    int bits = 0;
    for (std::size_t i = 0; i < paths.size(); ++i) {
        TiffImage img = read_tiff(paths[i]);
        if (i == 0) {
            dims = {img.width, img.height, paths.size()};
            bits = img.bits;
            data.reserve(dims.count());
        } else if (img.width != dims.nx || img.height != dims.ny || img.bits != bits) {
            fail(ErrorCode::dimension_mismatch,
                 paths[i].string() + " is " + std::to_string(img.width) + "x" + std::to_string(img.height) + " " +
                     std::to_string(img.bits) + "-bit, expected " + std::to_string(dims.nx) + "x" +
                     std::to_string(dims.ny) + " " + std::to_string(bits) + "-bit like " + paths[0].string());
        }
        data.insert(data.end(), img.pixels.begin(), img.pixels.end());
    }
    return VoxelVolume(dims, bits, voxel_size, std::move(data));
}

// ---------------------------------------------------------------------------
// geometry

VoxelVolume crop(const VoxelVolume& vol, const Roi& roi) {
    roi.check_within(vol.dims());
    const Dims out{roi.dx, roi.dy, roi.dz};
    std::vector<std::uint16_t> data(out.count());
    for (std::size_t z = 0; z < roi.dz; ++z)
        for (std::size_t y = 0; y < roi.dy; ++y) {
            const auto src = vol.data().begin() + static_cast<std::ptrdiff_t>(vol.dims().index(roi.x0, roi.y0 + y, roi.z0 + z));
            std::copy(src, src + static_cast<std::ptrdiff_t>(roi.dx), data.begin() + static_cast<std::ptrdiff_t>(out.index(0, y, z)));
        }
    return VoxelVolume(out, vol.bit_depth(), vol.voxel_size(), std::move(data));
}

LabelVolume crop(const LabelVolume& labels, const Roi& roi) {
    roi.check_within(labels.dims());
    const Dims out{roi.dx, roi.dy, roi.dz};
    std::vector<std::uint8_t> data(out.count());
    for (std::size_t z = 0; z < roi.dz; ++z)
        for (std::size_t y = 0; y < roi.dy; ++y) {
            const auto src = labels.labels().begin() +
                             static_cast<std::ptrdiff_t>(labels.dims().index(roi.x0, roi.y0 + y, roi.z0 + z));
            std::copy(src, src + static_cast<std::ptrdiff_t>(roi.dx), data.begin() + static_cast<std::ptrdiff_t>(out.index(0, y, z)));
        }
    return LabelVolume(out, labels.voxel_size(), std::move(data), labels.k(), labels.class_names());
}

VoxelVolume downsample(const VoxelVolume& vol, int factor) {
    if (factor < 1) fail(ErrorCode::parameter, "downsample factor must be >= 1, got " + std::to_string(factor));
    if (factor == 1) return vol;
    const std::size_t f = static_cast<std::size_t>(factor);
    const Dims& in = vol.dims();
    const Dims out{(in.nx + f - 1) / f, (in.ny + f - 1) / f, (in.nz + f - 1) / f};
    std::vector<std::uint16_t> data(out.count());
    for (std::size_t z = 0; z < out.nz; ++z)
        for (std::size_t y = 0; y < out.ny; ++y)
            for (std::size_t x = 0; x < out.nx; ++x) {
                std::uint64_t sum = 0, n = 0;
                for (std::size_t zz = z * f; zz < std::min(in.nz, (z + 1) * f); ++zz)
                    for (std::size_t yy = y * f; yy < std::min(in.ny, (y + 1) * f); ++yy)
                        for (std::size_t xx = x * f; xx < std::min(in.nx, (x + 1) * f); ++xx) {
                            sum += vol.at(xx, yy, zz);
                            ++n;
                        }
                // round half up in integer arithmetic
                data[out.index(x, y, z)] = static_cast<std::uint16_t>((2 * sum + n) / (2 * n));
            }
    return VoxelVolume(out, vol.bit_depth(), vol.voxel_size() * factor, std::move(data));
}

// ---------------------------------------------------------------------------
// VTK

std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::array<char, 64> buf{};
    auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

namespace {

std::string vtk_header(const Dims& d, double spacing, const char* title, const char* scalar_type,
                       const char* array_name, VtkEncoding enc) {
    std::ostringstream os;
    const std::string s = format_number(spacing);
    os << "# vtk DataFile Version 3.0\n"
       << title << "\n"
       << (enc == VtkEncoding::ascii ? "ASCII" : "BINARY") << "\n"
       << "DATASET STRUCTURED_POINTS\n"
       << "DIMENSIONS " << d.nx << " " << d.ny << " " << d.nz << "\n"
       << "SPACING " << s << " " << s << " " << s << "\n"
       << "ORIGIN 0 0 0\n"
       << "POINT_DATA " << d.count() << "\n"
       << "SCALARS " << array_name << " " << scalar_type << " 1\n"
       << "LOOKUP_TABLE default\n";
    return os.str();
}

template <class T>
std::string vtk_payload(std::span<const T> values, const Dims& d, bool wide, VtkEncoding enc) {
    std::string out;
    if (enc == VtkEncoding::ascii) {
        for (std::size_t row = 0; row < d.ny * d.nz; ++row) {
            for (std::size_t x = 0; x < d.nx; ++x) {
                if (x) out += ' ';
                out += std::to_string(values[row * d.nx + x]);
            }
            out += '\n';
        }
        return out;
    }
    out.reserve(values.size() * (wide ? 2 : 1) + 1);
    for (const T v : values) {
        if (wide) out += static_cast<char>((v >> 8) & 0xff);
        out += static_cast<char>(v & 0xff);
    }
    out += '\n';
    return out;
}

}  // namespace

std::string to_vtk(const VoxelVolume& vol, VtkEncoding enc) {
    if (vol.empty()) fail(ErrorCode::parameter, "cannot export an empty volume");
    const bool wide = vol.bit_depth() == 16;
    return vtk_header(vol.dims(), vol.voxel_size(), "rockseg intensity volume",
                      wide ? "unsigned_short" : "unsigned_char", "intensity", enc) +
           vtk_payload(vol.data(), vol.dims(), wide, enc);
}

std::string to_vtk(const LabelVolume& labels, VtkEncoding enc) {
    if (labels.empty()) fail(ErrorCode::parameter, "cannot export an empty label volume");
    return vtk_header(labels.dims(), labels.voxel_size(), "rockseg label volume", "unsigned_char", "labels", enc) +
           vtk_payload(labels.labels(), labels.dims(), false, enc);
}

void export_vtk(const VoxelVolume& vol, const fs::path& path, VtkEncoding enc) { write_file(path, to_vtk(vol, enc)); }

void export_vtk(const LabelVolume& labels, const fs::path& path, VtkEncoding enc) {
    write_file(path, to_vtk(labels, enc));
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
        if (c == '"') q += '"';
        q += c;
    }
    return q + "\"";
}

}  // namespace

std::string to_csv(const Table& table) {
    std::string out;
    for (std::size_t i = 0; i < table.columns.size(); ++i) {
        if (i) out += ',';
        out += csv_field(table.columns[i]);
    }
    out += "\r\n";
    const bool named = !table.row_names.empty();
    if (named && table.row_names.size() != table.rows.size())
        fail(ErrorCode::parameter, "CSV table has " + std::to_string(table.row_names.size()) + " row names for " +
                                       std::to_string(table.rows.size()) + " rows");
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        if (row.size() + (named ? 1 : 0) != table.columns.size())
            fail(ErrorCode::parameter, "CSV row has " + std::to_string(row.size()) + " cells, header has " +
                                           std::to_string(table.columns.size()));
        if (named) out += csv_field(table.row_names[r]);
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i || named) out += ',';
            out += format_number(row[i]);
        }
        out += "\r\n";
    }
    return out;
}

void export_csv(const Table& table, const fs::path& path) { write_file(path, to_csv(table)); }

}  // namespace rockseg
