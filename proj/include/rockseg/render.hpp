#pragma once

#include "rockseg/volume.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace rockseg {

// Display window: lo maps to 0, hi to 255, linear in between, clamped.
struct Window {
    double lo = 0;
    double hi = 65535;

    static Window parse(const std::string& s);  // "lo,hi"
};

// 8-bit grayscale PNG of slice z.
std::string render_slice_png(const VoxelVolume& vol, std::size_t z, const Window& window);

// Fixed categorical palette, label 0 black.
const std::array<std::uint8_t, 3>& palette_color(std::uint8_t label);
// RGB PNG of slice z with the categorical palette.
std::string render_labels_png(const LabelVolume& labels, std::size_t z);

struct DecodedPng {
    std::uint32_t width = 0, height = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels;
};
DecodedPng decode_png(const std::string& bytes);

}  // namespace rockseg
