#pragma once

#include "rockseg/control.hpp"
#include "rockseg/volume.hpp"

#include <vector>

namespace rockseg {

// Dense floating-point copy of a volume, used for filter internals and for
// tests that need unrounded results.
struct Field {
    Dims dims;
    std::vector<double> values;

    static Field from(const VoxelVolume& vol);
    double& operator()(std::size_t x, std::size_t y, std::size_t z) { return values[dims.index(x, y, z)]; }
    double operator()(std::size_t x, std::size_t y, std::size_t z) const { return values[dims.index(x, y, z)]; }
};

// Rounds to nearest and clamps to the bit depth of the template volume.
VoxelVolume to_volume(const Field& field, const VoxelVolume& like);

struct NlmParams {
    // Side of the search cube/square; must be odd.
    int search_window = 21;
    // Side of the compared patch. Even sides are rounded up to the next odd
    // side so that patches stay centred (6 -> 7).
    int neighborhood = 6;
    // Multiplier on the input standard deviation giving the weight width h.
    double similarity = 0.71;
    bool three_d = true;

    void validate() const;
    int patch_radius() const { return neighborhood / 2; }
    int search_radius() const { return search_window / 2; }
};

// Non-local means: w = exp(-d^2 / h^2), d^2 the mean squared difference of
// edge-replicated patches, h = similarity * stddev(input). Search windows
// are clamped to the volume.
Field nlm_filter_field(const VoxelVolume& vol, const NlmParams& p, const RunControl& ctl = no_control());
VoxelVolume nlm_filter(const VoxelVolume& vol, const NlmParams& p, const RunControl& ctl = no_control());

struct AdParams {
    // Face-neighbour differences at or above this stop the flux.
    double threshold = 22968.0;
    int iterations = 5;
    // Gaussian width (voxels) of the copy the stop criterion is evaluated on;
    // 0 evaluates it on the unsmoothed values.
    double smoothing_sigma = 0.0;

    void validate() const;
};

inline constexpr double kAdStepWeight = 1.0 / 7.0;

// Explicit 6-neighbour diffusion gated by the threshold; no flux across the
// volume border. Conserves the sum exactly in exact arithmetic.
Field anisotropic_diffusion_field(const Field& in, const AdParams& p, const RunControl& ctl = no_control());
VoxelVolume anisotropic_diffusion(const VoxelVolume& vol, const AdParams& p, const RunControl& ctl = no_control());

enum class SmoothMethod { median, mean, gaussian };

SmoothMethod parse_smooth_method(const std::string& s);

// Per-slice windowed filter with edge replication. sigma <= 0 selects
// radius / 2 for the gaussian method.
VoxelVolume smooth(const VoxelVolume& vol, SmoothMethod method, int radius, double sigma = 0.0,
                   const RunControl& ctl = no_control());

// Linear map of the [low_pct, high_pct] percentiles onto the full range of
// the bit depth, clamping outside.
VoxelVolume contrast_stretch(const VoxelVolume& vol, double low_pct, double high_pct);

// Linear-interpolated percentile (numpy "linear" definition).
double percentile(std::vector<std::uint16_t> values, double pct);

// Separable gaussian blur of a field, edge replicated, radius ceil(3 sigma).
Field gaussian_blur(const Field& in, double sigma, bool three_d = true);

}  // namespace rockseg
