#pragma once

#include "rockseg/clustering.hpp"
#include "rockseg/control.hpp"
#include "rockseg/volume.hpp"

#include <map>
#include <string>
#include <vector>

namespace rockseg {

// Inclusive label interval of one phase in the over-clustered (k1) segmentation.
struct PhaseRange {
    std::string name;
    int lo = 0;
    int hi = 0;
};

// Phase indexing of the over-clustered labels. The default follows the
// reference script: noise = 0, edl = 1..2, brine = 1..3, quartz = 4, edh = 5,
// hydrate = 6..7. Indexing ranges may overlap (edl sits inside brine).
struct PhaseMap {
    std::vector<PhaseRange> phases;

    static PhaseMap defaults();
    // "default" or "noise=0,edl=1-2,brine=1-3,quartz=4,edh=5,hydrate=6-7".
    static PhaseMap parse(const std::string& spec);

    // Hard errors for malformed maps; returns warnings for overlapping ranges.
    std::vector<std::string> validate() const;
    const PhaseRange* find(const std::string& name) const;
    std::string str() const;
};

struct PhaseStat {
    std::string name;
    bool empty = true;
    std::size_t count = 0;
    double min = 0, max = 0, mean = 0, std = 0;
    double skewness = 0;  // third standardized moment
    std::vector<double> bin_centers;
    std::vector<std::size_t> bin_counts;
};

struct PhaseStats {
    std::vector<PhaseStat> phases;
    // Pairwise intersections of [min, max] intensity ranges, "a/b: lo..hi".
    std::vector<std::string> overlaps;
    std::vector<std::string> warnings;

    const PhaseStat& get(const std::string& name) const;
};

// Histogram bins per phase; phases not listed use 100. Defaults give noise and
// edh 10 bins like the reference script.
std::map<std::string, int> default_phase_bins();

// Raw intensities indexed by the phase label ranges. raw and seg must share
// dimensions.
PhaseStats phase_index_stats(const VoxelVolume& raw, const LabelVolume& seg, const PhaseMap& map,
                             const std::map<std::string, int>& bins = default_phase_bins());

// phase -> phase whose mean replaces its intensity range.
struct Substitution {
    std::string phase;
    std::string mean_of;
};

// brine, quartz, edh (-> quartz mean), hydrate; applied in this order.
std::vector<Substitution> default_substitutions();

// Every voxel whose intensity lies in [min, max] of a replaced phase takes the
// rounded mean of the phase named by the substitution. Overlapping ranges
// among replaced phases raise ErrorCode::range_overlap.
VoxelVolume rescale_phases(const VoxelVolume& raw, const PhaseStats& stats,
                           const std::vector<Substitution>& substitutions = default_substitutions());

struct EdeConfig {
    int k1 = 7;
    int final_k = 3;
    double mask_threshold = 0.0;
    // Slices clustered in the over-clustering step.
    std::vector<std::size_t> seg_slices{0, 1};
    PhaseMap map = PhaseMap::defaults();
    int restarts = 5;
    std::uint64_t seed = 42;
    std::map<std::string, int> bins = default_phase_bins();

    void validate(const Dims& dims) const;
};

struct EdeResult {
    // 1 = brine, 2 = quartz, 3 = hydrate, 0 = masked (for final_k = 3).
    LabelVolume final_labels;
    PhaseStats stats;
    VoxelVolume rescaled;
    LabelVolume over_labels;  // k1 labels of the clustered slices
    std::vector<double> over_centers;
    std::vector<double> final_centers;
    std::vector<std::string> advisory;
};

// Over-cluster, index phases, rescale by phase means (edh -> quartz mean) and
// re-cluster with centres started at the brine/quartz/hydrate means. The input
// is expected to be denoised already (NLM + anisotropic diffusion).
EdeResult dual_cluster_pipeline(const VoxelVolume& raw, const EdeConfig& cfg, const RunControl& ctl = no_control());

// Volume made of the listed slices, in order.
VoxelVolume gather_slices(const VoxelVolume& vol, const std::vector<std::size_t>& slices);

}  // namespace rockseg
