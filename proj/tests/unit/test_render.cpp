#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "phantoms.hpp"
#include "rockseg/error.hpp"
#include "rockseg/render.hpp"

#include <cmath>

using namespace rockseg;

namespace {

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no error raised");
    return ErrorCode::io;
}

std::uint32_t be32(const std::string& s, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | static_cast<std::uint8_t>(s[at + i]);
    return v;
}

// Signature and IHDR fields read straight from the byte stream.
void check_header(const std::string& png, std::uint32_t w, std::uint32_t h, int color_type) {
    REQUIRE(png.size() > 33);
    CHECK(png.substr(0, 8) == std::string("\x89PNG\r\n\x1a\n", 8));
    CHECK(png.substr(12, 4) == "IHDR");
    CHECK(be32(png, 16) == w);
    CHECK(be32(png, 20) == h);
    CHECK(static_cast<int>(png[24]) == 8);
    CHECK(static_cast<int>(png[25]) == color_type);
}

}  // namespace

TEST_CASE("window parsing") {
    const auto w = Window::parse("100,2000.5");
    CHECK(w.lo == 100);
    CHECK(w.hi == 2000.5);
    CHECK(code_of([] { Window::parse("100"); }) == ErrorCode::validation);
    CHECK(code_of([] { Window::parse("a,b"); }) == ErrorCode::validation);
    CHECK(code_of([] { Window::parse("5,5"); }) == ErrorCode::validation);
    CHECK(code_of([] { Window::parse("1,2x"); }) == ErrorCode::validation);
}

TEST_CASE("constant volume renders a uniform image") {
    const VoxelVolume vol({7, 5, 3}, 16, 1.0, std::vector<std::uint16_t>(105, 1234));
    const auto png = render_slice_png(vol, 1, {0, 65535});
    check_header(png, 7, 5, 0);
    const auto img = decode_png(png);
    CHECK(img.channels == 1);
    const auto expect = static_cast<std::uint8_t>(std::lround(1234 * 255.0 / 65535));
    for (auto p : img.pixels) CHECK(p == expect);
}

TEST_CASE("window mapping is linear and clamped") {
    const VoxelVolume vol({5, 1, 1}, 16, 1.0, {0, 100, 140, 200, 60000});
    const auto img = decode_png(render_slice_png(vol, 0, {100, 200}));
    REQUIRE(img.pixels.size() == 5);
    CHECK(img.pixels[0] == 0);
    CHECK(img.pixels[1] == 0);
    CHECK(img.pixels[2] == 102);
    CHECK(img.pixels[3] == 255);
    CHECK(img.pixels[4] == 255);
}

TEST_CASE("label rendering uses the palette") {
    LabelVolume labels({3, 2, 2}, 1.0, {0, 1, 2, 3, 11, 1, 2, 2, 2, 2, 2, 2}, 11);
    const auto png = render_labels_png(labels, 0);
    check_header(png, 3, 2, 2);
    const auto img = decode_png(png);
    CHECK(img.channels == 3);
    const std::uint8_t want[6] = {0, 1, 2, 3, 11, 1};
    for (int i = 0; i < 6; ++i) {
        const auto& c = palette_color(want[i]);
        for (int ch = 0; ch < 3; ++ch) CHECK(img.pixels[3 * i + ch] == c[ch]);
    }
    CHECK(palette_color(0) == std::array<std::uint8_t, 3>{0, 0, 0});
    CHECK(palette_color(1) == palette_color(11));
    CHECK(palette_color(1) != palette_color(2));
}

TEST_CASE("render errors") {
    const VoxelVolume vol({2, 2, 2}, 16, 1.0, std::vector<std::uint16_t>(8, 1));
    CHECK(code_of([&] { render_slice_png(vol, 2, {}); }) == ErrorCode::bounds);
    CHECK(code_of([&] { render_slice_png(vol, 0, {5, 1}); }) == ErrorCode::validation);
    CHECK(code_of([] { decode_png("not a png"); }) == ErrorCode::io);
}
