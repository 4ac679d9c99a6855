#pragma once

#include "rockseg/control.hpp"
#include "rockseg/volume.hpp"

#include <map>
#include <optional>
#include <vector>

namespace rockseg {

// Fraction of unmasked (label != 0) voxels carrying pore_class.
double porosity(const LabelVolume& labels, int pore_class);

// Per-slice porosity ("relative porosity") with a least-squares line against
// the slice index. R^2 is 0 when the porosity does not vary.
struct PorosityTrend {
    std::vector<std::size_t> slices;  // slices with unmasked voxels
    std::vector<double> porosity;
    double slope = 0;
    double intercept = 0;
    double r_squared = 0;
    double mean = 0;
    double std = 0;
};

PorosityTrend porosity_trend(const LabelVolume& labels, int pore_class);

// class -> fraction of unmasked voxels.
std::map<int, double> volume_fractions(const LabelVolume& labels);

// Exact squared Euclidean distance (in voxels) of every foreground voxel to
// the nearest background voxel; background voxels get 0. Outside the volume
// is not background. With no background at all, distances are capped at the
// squared volume diagonal.
std::vector<double> squared_distance_transform(const Dims& dims, const std::vector<std::uint8_t>& foreground);

struct WatershedResult {
    std::vector<std::int32_t> regions;  // 0 outside the mask, 1..n inside
    std::int32_t count = 0;
};

// Marker-based priority flood: markers are regional maxima of `height` inside
// the mask (26-connected plateaus, equal within `plateau_tol`); flooding
// proceeds from high to low over 6-neighbours, ties in scan order. Mask
// voxels no marker reaches seed regions of their own.
WatershedResult watershed_from_maxima(const Dims& dims, const std::vector<double>& height,
                                      const std::vector<std::uint8_t>& mask, double plateau_tol = 1e-9);

struct PsdParams {
    double smoothing_sigma = 1.0;  // voxels
    int histogram_bins = 20;
};

struct PsdResult {
    std::vector<double> diameters;      // micrometres, one per region
    std::vector<std::size_t> voxel_counts;
    std::vector<double> bin_edges;      // histogram_bins + 1 edges
    std::vector<std::size_t> histogram;
    double mean = 0;
    double std = 0;
    std::size_t region_count = 0;
    WatershedResult partition;
};

// Equivalent spherical diameters of watershed-partitioned pore regions:
// d = 2 (3 V / 4 pi)^(1/3), V = voxels * voxel_size^3.
PsdResult pore_size_distribution(const LabelVolume& labels, int pore_class, double voxel_size,
                                 const PsdParams& params = {}, const RunControl& ctl = no_control());

struct RevCurve {
    std::vector<std::size_t> edge_lengths;
    std::vector<double> porosity;
    double full_porosity = 0;
    double band = 0.01;
    // Smallest edge from which every larger sample stays within the band of
    // the full-volume porosity (onset of the representative plateau).
    std::optional<std::size_t> stable_from;
};

struct RevParams {
    double band = 0.01;
    // Shift of the cube centre from the volume centre, in voxels.
    long offset_x = 0, offset_y = 0, offset_z = 0;
};

RevCurve rev_curve(const LabelVolume& labels, int pore_class, const std::vector<std::size_t>& edge_lengths,
                   const RevParams& params = {});

}  // namespace rockseg
