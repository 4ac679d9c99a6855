#include "rockseg/render.hpp"

#include "rockseg/error.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace rockseg {

Window Window::parse(const std::string& s) {
    const auto comma = s.find(',');
    if (comma == std::string::npos) fail(ErrorCode::validation, "window must be 'lo,hi', got '" + s + "'");
    Window w;
    try {
        std::size_t used = 0;
        w.lo = std::stod(s.substr(0, comma), &used);
        if (used != comma) throw std::invalid_argument("lo");
        const std::string hi = s.substr(comma + 1);
        w.hi = std::stod(hi, &used);
        if (used != hi.size()) throw std::invalid_argument("hi");
    } catch (const std::exception&) {
        fail(ErrorCode::validation, "window must be 'lo,hi', got '" + s + "'");
    }
    if (!(w.lo < w.hi)) fail(ErrorCode::validation, "window needs lo < hi, got '" + s + "'");
    return w;
}

namespace {

void write_cb(png_structp png, png_bytep data, png_size_t len) {
    auto* out = static_cast<std::string*>(png_get_io_ptr(png));
    out->append(reinterpret_cast<const char*>(data), len);
}

void error_cb(png_structp, png_const_charp msg) { throw Error(ErrorCode::io, std::string("png: ") + msg); }
void warning_cb(png_structp, png_const_charp) {}

std::string encode(std::uint32_t width, std::uint32_t height, int color_type, int channels,
                   const std::vector<std::uint8_t>& pixels) {
    std::string out;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, error_cb, warning_cb);
    if (!png) fail(ErrorCode::io, "png: cannot create writer");
    png_infop info = png_create_info_struct(png);
    try {
        png_set_write_fn(png, &out, write_cb, nullptr);
        png_set_compression_level(png, 6);
        png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                     PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        for (std::uint32_t y = 0; y < height; ++y)
            png_write_row(png, const_cast<png_bytep>(pixels.data() + std::size_t{y} * width * channels));
        png_write_end(png, nullptr);
    } catch (...) {
        png_destroy_write_struct(&png, &info);
        throw;
    }
    png_destroy_write_struct(&png, &info);
    return out;
}

struct Reader {
    const std::string* bytes;
    std::size_t pos = 0;
};

void read_cb(png_structp png, png_bytep data, png_size_t len) {
    auto* r = static_cast<Reader*>(png_get_io_ptr(png));
    if (r->pos + len > r->bytes->size()) png_error(png, "truncated stream");
    std::memcpy(data, r->bytes->data() + r->pos, len);
    r->pos += len;
}

void check_slice(std::size_t z, std::size_t nz) {
    if (z >= nz) fail(ErrorCode::bounds, "slice " + std::to_string(z) + " outside 0.." + std::to_string(nz - 1));
}

}  // namespace

std::string render_slice_png(const VoxelVolume& vol, std::size_t z, const Window& w) {
    check_slice(z, vol.nz());
    if (!(w.lo < w.hi)) fail(ErrorCode::validation, "window needs lo < hi");
    const auto s = vol.slice(z);
    std::vector<std::uint8_t> px(s.size());
    const double scale = 255.0 / (w.hi - w.lo);
    for (std::size_t i = 0; i < s.size(); ++i)
        px[i] = static_cast<std::uint8_t>(std::lround(std::clamp((s[i] - w.lo) * scale, 0.0, 255.0)));
    return encode(static_cast<std::uint32_t>(vol.nx()), static_cast<std::uint32_t>(vol.ny()), PNG_COLOR_TYPE_GRAY, 1,
                  px);
}

const std::array<std::uint8_t, 3>& palette_color(std::uint8_t label) {
    static const std::array<std::array<std::uint8_t, 3>, 11> base{{{0, 0, 0},
                                                                   {31, 119, 180},
                                                                   {255, 127, 14},
                                                                   {44, 160, 44},
                                                                   {214, 39, 40},
                                                                   {148, 103, 189},
                                                                   {140, 86, 75},
                                                                   {227, 119, 194},
                                                                   {127, 127, 127},
                                                                   {188, 189, 34},
                                                                   {23, 190, 207}}};
    return label == 0 ? base[0] : base[1 + (label - 1) % 10];
}

std::string render_labels_png(const LabelVolume& labels, std::size_t z) {
    check_slice(z, labels.nz());
    const auto s = labels.slice(z);
    std::vector<std::uint8_t> px(s.size() * 3);
    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto& c = palette_color(s[i]);
        std::copy(c.begin(), c.end(), px.begin() + static_cast<std::ptrdiff_t>(3 * i));
    }
    return encode(static_cast<std::uint32_t>(labels.nx()), static_cast<std::uint32_t>(labels.ny()),
                  PNG_COLOR_TYPE_RGB, 3, px);
}

DecodedPng decode_png(const std::string& bytes) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, error_cb, warning_cb);
    if (!png) fail(ErrorCode::io, "png: cannot create reader");
    png_infop info = png_create_info_struct(png);
    Reader reader{&bytes};
    DecodedPng out;
    try {
        png_set_read_fn(png, &reader, read_cb);
        png_read_info(png, info);
        out.width = png_get_image_width(png, info);
        out.height = png_get_image_height(png, info);
        if (png_get_bit_depth(png, info) != 8) fail(ErrorCode::unsupported_format, "png: only 8-bit images");
        out.channels = png_get_channels(png, info);
        out.pixels.resize(std::size_t{out.width} * out.height * static_cast<std::size_t>(out.channels));
        for (std::uint32_t y = 0; y < out.height; ++y)
            png_read_row(png, out.pixels.data() + std::size_t{y} * out.width * static_cast<std::size_t>(out.channels),
                         nullptr);
        png_read_end(png, nullptr);
    } catch (...) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

}  // namespace rockseg
