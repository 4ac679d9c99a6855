#pragma once

#include "rockseg/control.hpp"
#include "rockseg/volume.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace rockseg {

// Distances on scalar intensities. Manhattan and chebyshev coincide on one
// feature; both update centres with the weighted median.
enum class Distance { sq_euclidean, manhattan, chebyshev };

// Accepts the menu spellings (sqeuclidean, cityblock, mandist, box, ...).
// "link" is rejected: it is a network-layer distance with no meaning here.
Distance parse_distance(const std::string& s);
const char* to_string(Distance d);

struct KmeansConfig {
    int k = 3;
    Distance distance = Distance::sq_euclidean;
    int restarts = 5;
    // Empty: seeded random sample of k distinct intensities per restart.
    std::vector<double> initial_centers;
    int max_iters = 100;
    double tol = 0.5;
    // Voxels with intensity <= mask_threshold are labelled 0 and ignored.
    double mask_threshold = 0.0;
    std::uint64_t seed = 42;

    void validate() const;
};

struct FcmConfig {
    int c = 3;
    double m = 2.0;
    int max_iters = 300;
    // Relative change of the objective below which iteration stops.
    double tol = 1e-9;
    double mask_threshold = 0.0;
    std::uint64_t seed = 42;
    std::vector<double> initial_centers;

    void validate() const;
};

struct ClusterResult {
    LabelVolume labels;
    // Ascending; label i+1 belongs to centers[i].
    std::vector<double> centers;
    double objective = 0.0;
    int iterations_used = 0;
    // FCM only: objective after each iteration.
    std::vector<double> objective_history;
    // FCM only: memberships depend on intensity alone, so they are stored per
    // distinct unmasked intensity (row i <-> membership_values[i], c columns).
    std::vector<double> membership_values;
    std::vector<double> membership_table;
    int classes = 0;

    // FCM memberships of one voxel; empty for masked voxels.
    std::vector<double> memberships(const VoxelVolume& vol, std::size_t voxel) const;
};

// Weighted scalar sample: distinct intensities with their voxel counts.
struct Histogram {
    std::vector<double> values;
    std::vector<double> counts;

    double total() const;
};

// Unmasked intensity histogram (values strictly above mask_threshold).
Histogram unmasked_histogram(const VoxelVolume& vol, double mask_threshold);

struct LloydOutcome {
    std::vector<double> centers;           // unsorted, per run
    std::vector<int> assignment;           // per histogram value
    double objective = 0.0;
    int iterations = 0;
    std::vector<double> objective_history;  // after every assignment step
};

// One Lloyd run on a weighted histogram from the given starting centres.
LloydOutcome lloyd(const Histogram& h, std::vector<double> centers, Distance distance, int max_iters, double tol);

ClusterResult kmeans_segment(const VoxelVolume& vol, const KmeansConfig& cfg, const RunControl& ctl = no_control());

// Same clustering on a plain list of scalars (labels in 1..k per point,
// ascending centres); points at or below mask_threshold get label 0.
struct PointClustering {
    std::vector<int> labels;
    std::vector<double> centers;
    double objective = 0.0;
};
PointClustering kmeans_points(const std::vector<double>& points, const KmeansConfig& cfg);

ClusterResult fcm_segment(const VoxelVolume& vol, const FcmConfig& cfg, const RunControl& ctl = no_control());

}  // namespace rockseg
