#pragma once

#include "rockseg/control.hpp"
#include "rockseg/volume.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace rockseg {

// One human-picked training pixel.
struct TrainingRow {
    int class_id = 1;
    std::string feature_name;  // pore, matrix, mineral, noise, ...
    long x = 0;
    long y = 0;
    long slice = 0;

    friend bool operator==(const TrainingRow&, const TrainingRow&) = default;
};

struct TrainingTable {
    std::vector<TrainingRow> rows;

    // Throws ErrorCode::coordinate naming the first offending row (1-based).
    void validate(const Dims& dims) const;
    std::vector<int> classes() const;

    friend bool operator==(const TrainingTable&, const TrainingTable&) = default;
};

// CSV with header class,feature,x,y,slice.
TrainingTable parse_training_csv(const std::string& text);
std::string to_csv(const TrainingTable& table);

// 6x6 patch whose top-left corner sits 2 voxels up/left of the picked pixel,
// edge-replicated at the slice border, flattened row-major.
inline constexpr int kPatchSide = 6;
inline constexpr int kPatchAnchor = 2;
inline constexpr std::size_t kFeatureCount = 36;
using FeatureVector = std::array<double, kFeatureCount>;

FeatureVector patch_features(const VoxelVolume& vol, long x, long y, long z);

struct FeatureMatrix {
    std::vector<FeatureVector> samples;
    std::vector<int> labels;
    std::vector<std::array<long, 3>> provenance;  // (x, y, slice) per sample

    std::size_t size() const noexcept { return samples.size(); }
    std::vector<int> classes() const;
    FeatureMatrix subset(const std::vector<std::size_t>& rows) const;
};

FeatureMatrix extract_features(const VoxelVolume& vol, const TrainingTable& table);

// Per-feature z-scoring; constant features get unit scale.
struct Standardizer {
    bool enabled = false;
    FeatureVector mean{};
    FeatureVector scale{};

    static Standardizer fit(const FeatureMatrix& f, bool enabled);
    FeatureVector apply(const FeatureVector& x) const;
};

// ---------------------------------------------------------------------------
// LS-SVM

enum class Kernel { rbf, linear };

struct LssvmParams {
    double gamma = 10.0;
    // RBF width: K(a, b) = exp(-|a - b|^2 / sigma2).
    double sigma2 = 36.0;
    Kernel kernel = Kernel::rbf;
    bool standardize = true;

    void validate() const;
};

// One-vs-one binary machine for classes (positive, negative). Training
// solves   [ 0   y^T          ] [b    ]   [0]
//          [ y   Omega + I/g  ] [alpha] = [1]
// with Omega_ij = y_i y_j K(x_i, x_j); decision f(x) = sum alpha_i y_i K(x, x_i) + b.
struct BinaryMachine {
    int positive = 0;
    int negative = 0;
    std::vector<std::size_t> members;  // indices into the model's training samples
    std::vector<double> y;
    std::vector<double> alpha;
    double b = 0.0;
};

// Dense (n+1)x(n+1) KKT system of a machine, row-major, with its solution
// ordered [b, alpha...].
struct KktSystem {
    std::size_t n = 0;
    std::vector<double> matrix;
    std::vector<double> rhs;
    std::vector<double> solution;

    double relative_residual() const;
};

class LssvmModel {
public:
    LssvmParams params;
    Standardizer standardizer;
    std::vector<FeatureVector> samples;  // standardized
    std::vector<int> labels;
    std::vector<int> classes;
    std::vector<BinaryMachine> machines;

    double kernel(const FeatureVector& a, const FeatureVector& b) const;
    // x must already be standardized.
    double decision(const BinaryMachine& m, const FeatureVector& x) const;
    int predict(const FeatureVector& raw) const;
    KktSystem system(const BinaryMachine& m) const;
};

LssvmModel train_lssvm(const FeatureMatrix& f, const LssvmParams& params);

// ---------------------------------------------------------------------------
// trees and ensembles

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    int label = 0;
};

// CART classifier with weighted Gini impurity; x[feature] <= threshold goes left.
class DecisionTree {
public:
    std::vector<TreeNode> nodes;

    static DecisionTree fit(const FeatureMatrix& f, const std::vector<double>& weights, int max_depth);
    int predict(const FeatureVector& x) const;
};

enum class EnsembleMethod { bagging, adaboost };

EnsembleMethod parse_ensemble_method(const std::string& s);

struct EnsembleParams {
    EnsembleMethod method = EnsembleMethod::bagging;
    int n_learners = 50;
    int max_depth = 3;
    std::uint64_t seed = 42;
    // bagging: draw bootstrap resamples; false fits every learner on the full sample.
    bool bootstrap = true;
    bool standardize = false;

    void validate() const;
};

class EnsembleModel {
public:
    EnsembleParams params;
    Standardizer standardizer;
    std::vector<int> classes;
    std::vector<DecisionTree> trees;
    // adaboost: learner weight, weighted error and the sample weights each
    // learner was fitted on.
    std::vector<double> learner_weights;
    std::vector<double> round_errors;
    std::vector<std::vector<double>> round_weights;

    int predict(const FeatureVector& raw) const;
};

EnsembleModel train_ensemble(const FeatureMatrix& f, const EnsembleParams& params);

using Model = std::variant<LssvmModel, EnsembleModel>;

int predict(const Model& model, const FeatureVector& raw);

// Classifies every voxel from its own patch (same geometry as training).
LabelVolume classify_volume(const Model& model, const VoxelVolume& vol, const RunControl& ctl = no_control());

// Self-describing JSON with a format tag and version.
std::string save_model(const Model& model);
Model load_model(const std::string& json_text);

// ---------------------------------------------------------------------------
// validation

struct CvResult {
    std::vector<double> fold_accuracy;
    double mean = 0.0;
    double std = 0.0;
    std::vector<int> fold_of;  // test fold of every sample
};

using Trainer = std::function<Model(const FeatureMatrix&)>;

// Stratified, seeded fold assignment; each sample is tested exactly once.
std::vector<int> assign_folds(const std::vector<int>& labels, int folds, std::uint64_t seed);
CvResult cross_validate(const FeatureMatrix& f, int folds, const Trainer& trainer, std::uint64_t seed = 42);

struct RocResult {
    std::vector<double> fpr;
    std::vector<double> tpr;
    std::vector<double> thresholds;
    double auc = 0.0;
};

// labels: 1 = positive, 0 = negative.
RocResult roc_curve(const std::vector<double>& scores, const std::vector<int>& labels);

// Shannon entropy (bits) of class proportions over unmasked voxels.
double segmentation_entropy(const LabelVolume& labels);

}  // namespace rockseg
