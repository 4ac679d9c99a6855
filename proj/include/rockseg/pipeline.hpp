#pragma once

#include "rockseg/control.hpp"
#include "rockseg/io.hpp"
#include "rockseg/supervised.hpp"
#include "rockseg/volume.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace rockseg {

using Json = nlohmann::ordered_json;

// State threaded through a stage chain.
struct Workspace {
    std::shared_ptr<const VoxelVolume> volume;
    std::map<std::string, std::shared_ptr<const LabelVolume>> labels;
    std::map<std::string, Table> tables;
    std::map<std::string, Json> reports;
    std::optional<TrainingTable> training;
    std::shared_ptr<const Model> model;
    std::string last_labels;
};

struct StageContext {
    std::filesystem::path base_dir;    // relative input paths resolve here
    std::filesystem::path output_dir;  // export destinations
    RunControl control;
};

struct ArtifactRecord {
    std::string name;
    std::string sha256;
};

struct StageOutcome {
    std::vector<ArtifactRecord> artifacts;
    std::vector<std::filesystem::path> inputs;  // absolute
    std::vector<std::filesystem::path> files;   // relative to output_dir
    std::vector<std::string> log;
};

// Known stage operations.
const std::vector<std::string>& stage_ops();

// Returns the stage with every default filled in. Unknown ops, unknown fields
// and type errors raise ErrorCode::validation prefixed with `where`.
Json normalize_stage(const Json& stage, const std::string& where);

// Runs one normalized stage.
void run_stage(Workspace& ws, const Json& stage, StageContext& ctx, StageOutcome& out);

// ---------------------------------------------------------------------------
// analysis shared by stages, the CLI and the HTTP metrics endpoint

enum class AnalysisOp { porosity, trend, fractions, psd, rev };

AnalysisOp parse_analysis_op(const std::string& s);
const char* to_string(AnalysisOp op);

struct AnalysisParams {
    int pore_class = 1;
    double voxel_size = 0;  // 0: take it from the label volume
    double smoothing_sigma = 1.0;
    int bins = 20;
    std::vector<std::size_t> edges;  // empty: ten evenly spaced edges up to the smallest dimension
    double band = 0.01;
    std::vector<long> offset{0, 0, 0};
};

struct AnalysisResult {
    Json json;
    Table table;
};

AnalysisResult analyze(const LabelVolume& labels, AnalysisOp op, const AnalysisParams& params);

// Default REV edge ladder for a geometry.
std::vector<std::size_t> default_rev_edges(const Dims& dims);

// ---------------------------------------------------------------------------
// canonical artifact hashes (geometry + payload)

std::string artifact_hash(const VoxelVolume& vol);
std::string artifact_hash(const LabelVolume& labels);
std::string artifact_hash(const Table& table);
std::string artifact_hash(const Model& model);
std::string artifact_hash(const TrainingTable& table);

// ---------------------------------------------------------------------------
// export

struct ExportRequest {
    std::string artifact;  // "volume", "model", "training_table", a label volume, table or report name
    std::string format;    // vtk | raw | csv | json
    std::string encoding = "binary";
    std::string byte_order = "little";
};

struct ExportPayload {
    std::string bytes;
    std::string content_type;
    std::string filename;
};

ExportPayload export_artifact(const Workspace& ws, const ExportRequest& req);

// ---------------------------------------------------------------------------
// declarative runs

struct RunConfig {
    std::vector<Json> stages;  // normalized
    std::filesystem::path base_dir;
    std::filesystem::path output_dir;
};

// {"output_dir": "...", "stages": [...]}; relative output_dir resolves against
// base_dir. `source` names the document in error messages.
RunConfig parse_run_config(const Json& doc, const std::filesystem::path& base_dir, const std::string& source);
RunConfig load_run_config(const std::filesystem::path& path);

struct RunResult {
    Workspace workspace;
    Json manifest;
};

// Executes every stage and writes output_dir/manifest.json. A failing stage
// aborts the chain with an error naming it.
RunResult execute(const RunConfig& cfg, const RunControl& ctl = no_control());

// Executes stages against an existing workspace; returns one manifest record
// per stage ({stage, inputs, artifacts, files}). Stage numbers in errors start
// at first_index.
Json execute_stages(Workspace& ws, const std::vector<Json>& stages, StageContext& ctx, std::size_t first_index = 0);

Json make_manifest(const std::filesystem::path& base_dir, const std::filesystem::path& output_dir,
                   const Json& stage_records);

struct ReplayResult {
    bool identical = false;
    std::vector<std::string> mismatches;
    Json manifest;  // of the replayed run
};

// Re-runs a manifest's stages into output_dir (default: <manifest dir>/replay)
// and compares input and output hashes.
ReplayResult replay(const std::filesystem::path& manifest_path,
                    const std::optional<std::filesystem::path>& output_dir = std::nullopt);

}  // namespace rockseg
