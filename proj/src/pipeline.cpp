#include "rockseg/pipeline.hpp"

#include "rockseg/clustering.hpp"
#include "rockseg/ede.hpp"
#include "rockseg/error.hpp"
#include "rockseg/filters.hpp"
#include "rockseg/hash.hpp"
#include "rockseg/petrophysics.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <set>

namespace fs = std::filesystem;

namespace rockseg {

namespace {

enum class Kind { integer, count, number, string, boolean, counts, integers, numbers, strings, objects, optional_bool };

struct FieldSpec {
    const char* name;
    Kind kind;
    Json def;
    bool required = false;
};

Json req() { return nullptr; }

const std::map<std::string, std::vector<FieldSpec>>& schemas() {
    static const std::map<std::string, std::vector<FieldSpec>> s = [] {
        std::map<std::string, std::vector<FieldSpec>> m;
        const std::vector<FieldSpec> analysis{{"labels", Kind::string, ""},
                                              {"name", Kind::string, ""},
                                              {"pore_class", Kind::integer, 1},
                                              {"voxel_size", Kind::number, 0.0},
                                              {"smoothing_sigma", Kind::number, 1.0},
                                              {"bins", Kind::integer, 20},
                                              {"edges", Kind::counts, Json::array()},
                                              {"band", Kind::number, 0.01},
                                              {"offset", Kind::integers, Json::array({0, 0, 0})}};
        m["load_raw"] = {{"path", Kind::string, req(), true},
                         {"dims", Kind::counts, req(), true},
                         {"bit_depth", Kind::integer, 16},
                         {"byte_order", Kind::string, "little"},
                         {"voxel_size", Kind::number, 1.0},
                         {"transpose", Kind::boolean, false}};
        m["load_tiff"] = {{"paths", Kind::strings, req(), true}, {"voxel_size", Kind::number, 1.0}};
        m["load_labels"] = {{"path", Kind::string, req(), true},
                            {"dims", Kind::counts, req(), true},
                            {"voxel_size", Kind::number, 1.0},
                            {"name", Kind::string, "labels"}};
        m["crop"] = {{"roi", Kind::counts, req(), true}};
        m["downsample"] = {{"factor", Kind::integer, req(), true}};
        m["nlm"] = {{"search_window", Kind::integer, 21},
                    {"neighborhood", Kind::integer, 6},
                    {"similarity", Kind::number, 0.71},
                    {"three_d", Kind::boolean, true}};
        m["ad"] = {{"threshold", Kind::number, 22968.0},
                   {"iterations", Kind::integer, 5},
                   {"smoothing_sigma", Kind::number, 0.0}};
        m["smooth"] = {{"method", Kind::string, "median"}, {"radius", Kind::integer, 1}, {"sigma", Kind::number, 0.0}};
        m["contrast"] = {{"low", Kind::number, 1.0}, {"high", Kind::number, 99.0}};
        m["kmeans"] = {{"name", Kind::string, "kmeans"},
                       {"k", Kind::integer, 3},
                       {"distance", Kind::string, "sqeuclidean"},
                       {"restarts", Kind::integer, 5},
                       {"mask", Kind::number, 0.0},
                       {"seed", Kind::count, 42},
                       {"max_iters", Kind::integer, 100},
                       {"tol", Kind::number, 0.5},
                       {"initial_centers", Kind::numbers, Json::array()}};
        m["fcm"] = {{"name", Kind::string, "fcm"},
                    {"c", Kind::integer, 3},
                    {"m", Kind::number, 2.0},
                    {"mask", Kind::number, 0.0},
                    {"seed", Kind::count, 42},
                    {"max_iters", Kind::integer, 300},
                    {"tol", Kind::number, 1e-9},
                    {"initial_centers", Kind::numbers, Json::array()}};
        m["ede"] = {{"name", Kind::string, "ede"},
                    {"k1", Kind::integer, 7},
                    {"final_k", Kind::integer, 3},
                    {"seg_slices", Kind::counts, Json::array({0, 1})},
                    {"map", Kind::string, "default"},
                    {"restarts", Kind::integer, 5},
                    {"seed", Kind::count, 42},
                    {"mask", Kind::number, 0.0}};
        m["training_table"] = {{"path", Kind::string, ""}, {"rows", Kind::objects, Json::array()}};
        m["train"] = {{"method", Kind::string, "lssvm"},
                      {"gamma", Kind::number, 10.0},
                      {"sigma2", Kind::number, 36.0},
                      {"kernel", Kind::string, "rbf"},
                      {"standardize", Kind::optional_bool, nullptr},
                      {"n_learners", Kind::integer, 50},
                      {"max_depth", Kind::integer, 3},
                      {"bootstrap", Kind::boolean, true},
                      {"seed", Kind::count, 42},
                      {"folds", Kind::integer, 0}};
        m["load_model"] = {{"path", Kind::string, req(), true}};
        m["classify"] = {{"name", Kind::string, "classified"}};
        for (const char* op : {"porosity", "trend", "fractions", "psd", "rev"}) m[op] = analysis;
        m["export"] = {{"artifact", Kind::string, req(), true},
                       {"format", Kind::string, req(), true},
                       {"path", Kind::string, req(), true},
                       {"encoding", Kind::string, "binary"},
                       {"byte_order", Kind::string, "little"}};
        return m;
    }();
    return s;
}

[[noreturn]] void invalid(const std::string& where, const std::string& msg) {
    fail(ErrorCode::validation, where + ": " + msg);
}

Json check_kind(const Json& v, Kind kind, const std::string& where) {
    auto is_int = [](const Json& x) {
        return x.is_number_integer() || (x.is_number_float() && std::isfinite(x.get<double>()) &&
                                         x.get<double>() == std::floor(x.get<double>()));
    };
    auto as_int = [](const Json& x) -> Json {
        if (x.is_number_float()) return static_cast<long long>(x.get<double>());
        return x;
    };
    auto list = [&](auto&& each, const char* what) {
        if (!v.is_array()) invalid(where, std::string("expected a list of ") + what);
        Json out = Json::array();
        for (std::size_t i = 0; i < v.size(); ++i) out.push_back(each(v[i], where + "[" + std::to_string(i) + "]"));
        return out;
    };
    auto integer = [&](const Json& x, const std::string& w) -> Json {
        if (!is_int(x)) invalid(w, "expected an integer");
        return as_int(x);
    };
    auto count = [&](const Json& x, const std::string& w) -> Json {
        if (!is_int(x) || x.get<double>() < 0) invalid(w, "expected a non-negative integer");
        return static_cast<unsigned long long>(x.get<double>() < 0 ? 0 : x.get<unsigned long long>());
    };
    auto number = [&](const Json& x, const std::string& w) -> Json {
        if (!x.is_number()) invalid(w, "expected a number");
        return x.get<double>();
    };
    switch (kind) {
        case Kind::integer: return integer(v, where);
        case Kind::count: return count(v, where);
        case Kind::number: return number(v, where);
        case Kind::string:
            if (!v.is_string()) invalid(where, "expected a string");
            return v;
        case Kind::boolean:
            if (!v.is_boolean()) invalid(where, "expected true or false");
            return v;
        case Kind::optional_bool:
            if (!v.is_boolean() && !v.is_null()) invalid(where, "expected true, false or null");
            return v;
        case Kind::counts: return list(count, "non-negative integers");
        case Kind::integers: return list(integer, "integers");
        case Kind::numbers: return list(number, "numbers");
        case Kind::strings:
            return list(
                [&](const Json& x, const std::string& w) -> Json {
                    if (!x.is_string()) invalid(w, "expected a string");
                    return x;
                },
                "strings");
        case Kind::objects:
            return list(
                [&](const Json& x, const std::string& w) -> Json {
                    if (!x.is_object()) invalid(w, "expected an object");
                    return x;
                },
                "objects");
    }
    return v;
}

// Re-raises library parameter errors as validation errors located at `where`.
template <class F>
void check(const std::string& where, F&& f) {
    try {
        f();
    } catch (const Error& e) {
        invalid(where, e.what());
    }
}

template <class T>
T get(const Json& s, const char* key) {
    return s.at(key).get<T>();
}

Dims dims_of(const Json& s, const char* key, const std::string& where) {
    const auto& d = s.at(key);
    if (d.size() != 3) invalid(where + "." + key, "expected [nx, ny, nz]");
    return Dims{d[0].get<std::size_t>(), d[1].get<std::size_t>(), d[2].get<std::size_t>()};
}

KmeansConfig kmeans_config(const Json& s) {
    KmeansConfig c;
    c.k = get<int>(s, "k");
    c.distance = parse_distance(get<std::string>(s, "distance"));
    c.restarts = get<int>(s, "restarts");
    c.mask_threshold = get<double>(s, "mask");
    c.seed = get<std::uint64_t>(s, "seed");
    c.max_iters = get<int>(s, "max_iters");
    c.tol = get<double>(s, "tol");
    c.initial_centers = get<std::vector<double>>(s, "initial_centers");
    return c;
}

FcmConfig fcm_config(const Json& s) {
    FcmConfig c;
    c.c = get<int>(s, "c");
    c.m = get<double>(s, "m");
    c.mask_threshold = get<double>(s, "mask");
    c.seed = get<std::uint64_t>(s, "seed");
    c.max_iters = get<int>(s, "max_iters");
    c.tol = get<double>(s, "tol");
    c.initial_centers = get<std::vector<double>>(s, "initial_centers");
    return c;
}

NlmParams nlm_params(const Json& s) {
    NlmParams p;
    p.search_window = get<int>(s, "search_window");
    p.neighborhood = get<int>(s, "neighborhood");
    p.similarity = get<double>(s, "similarity");
    p.three_d = get<bool>(s, "three_d");
    return p;
}

AdParams ad_params(const Json& s) {
    AdParams p;
    p.threshold = get<double>(s, "threshold");
    p.iterations = get<int>(s, "iterations");
    p.smoothing_sigma = get<double>(s, "smoothing_sigma");
    return p;
}

bool is_lssvm(const Json& s) { return get<std::string>(s, "method") == "lssvm"; }

LssvmParams lssvm_params(const Json& s) {
    LssvmParams p;
    p.gamma = get<double>(s, "gamma");
    p.sigma2 = get<double>(s, "sigma2");
    const auto k = get<std::string>(s, "kernel");
    if (k != "rbf" && k != "linear") fail(ErrorCode::parameter, "kernel must be rbf or linear, got '" + k + "'");
    p.kernel = k == "rbf" ? Kernel::rbf : Kernel::linear;
    p.standardize = get<bool>(s, "standardize");
    return p;
}

EnsembleParams ensemble_params(const Json& s) {
    EnsembleParams p;
    p.method = parse_ensemble_method(get<std::string>(s, "method"));
    p.n_learners = get<int>(s, "n_learners");
    p.max_depth = get<int>(s, "max_depth");
    p.seed = get<std::uint64_t>(s, "seed");
    p.bootstrap = get<bool>(s, "bootstrap");
    p.standardize = get<bool>(s, "standardize");
    return p;
}

AnalysisParams analysis_params(const Json& s) {
    AnalysisParams p;
    p.pore_class = get<int>(s, "pore_class");
    p.voxel_size = get<double>(s, "voxel_size");
    p.smoothing_sigma = get<double>(s, "smoothing_sigma");
    p.bins = get<int>(s, "bins");
    p.edges = get<std::vector<std::size_t>>(s, "edges");
    p.band = get<double>(s, "band");
    p.offset = get<std::vector<long>>(s, "offset");
    return p;
}

TrainingTable training_rows(const Json& rows, const std::string& where) {
    TrainingTable t;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        const std::string w = where + "[" + std::to_string(i) + "]";
        for (const auto& [key, _] : r.items())
            if (key != "class" && key != "feature" && key != "x" && key != "y" && key != "slice")
                invalid(w + "." + key, "unknown field");
        TrainingRow row;
        auto integer = [&](const char* key) {
            if (!r.contains(key)) invalid(w + "." + key, "required");
            return check_kind(r.at(key), Kind::integer, w + "." + key).get<long>();
        };
        row.class_id = static_cast<int>(integer("class"));
        row.x = integer("x");
        row.y = integer("y");
        row.slice = integer("slice");
        if (r.contains("feature")) row.feature_name = check_kind(r.at("feature"), Kind::string, w + ".feature").get<std::string>();
        t.rows.push_back(row);
    }
    return t;
}

}  // namespace

const std::vector<std::string>& stage_ops() {
    static const std::vector<std::string> ops = [] {
        std::vector<std::string> v;
        for (const auto& [k, _] : schemas()) v.push_back(k);
        return v;
    }();
    return ops;
}

Json normalize_stage(const Json& stage, const std::string& where) {
    if (!stage.is_object()) invalid(where, "expected an object");
    if (!stage.contains("op") || !stage.at("op").is_string()) invalid(where + ".op", "required string");
    const std::string op = stage.at("op").get<std::string>();
    const auto it = schemas().find(op);
    if (it == schemas().end()) {
        std::string known;
        for (const auto& o : stage_ops()) known += (known.empty() ? "" : ", ") + o;
        invalid(where + ".op", "unknown operation '" + op + "' (known: " + known + ")");
    }
    Json out;
    out["op"] = op;
    std::set<std::string> names;
    for (const auto& f : it->second) {
        names.insert(f.name);
        const std::string w = where + "." + f.name;
        if (stage.contains(f.name)) {
            out[f.name] = check_kind(stage.at(f.name), f.kind, w);
        } else {
            if (f.required) invalid(w, "required");
            out[f.name] = f.def;
        }
    }
    for (const auto& [key, _] : stage.items())
        if (key != "op" && !names.count(key)) invalid(where + "." + key, "unknown field for '" + op + "'");

    // semantic checks that need no data
    if (op == "load_raw") {
        dims_of(out, "dims", where);
        check(where + ".byte_order", [&] { parse_byte_order(get<std::string>(out, "byte_order")); });
        const int bd = get<int>(out, "bit_depth");
        if (bd != 8 && bd != 16) invalid(where + ".bit_depth", "must be 8 or 16");
    } else if (op == "load_labels") {
        dims_of(out, "dims", where);
    } else if (op == "load_tiff") {
        if (out.at("paths").empty()) invalid(where + ".paths", "needs at least one file");
    } else if (op == "crop") {
        if (out.at("roi").size() != 6) invalid(where + ".roi", "expected [x0, y0, z0, dx, dy, dz]");
    } else if (op == "downsample") {
        if (get<int>(out, "factor") < 1) invalid(where + ".factor", "must be >= 1");
    } else if (op == "nlm") {
        check(where, [&] { nlm_params(out).validate(); });
    } else if (op == "ad") {
        check(where, [&] { ad_params(out).validate(); });
    } else if (op == "smooth") {
        check(where + ".method", [&] { parse_smooth_method(get<std::string>(out, "method")); });
        if (get<int>(out, "radius") < 1) invalid(where + ".radius", "must be >= 1");
    } else if (op == "contrast") {
        const double lo = get<double>(out, "low"), hi = get<double>(out, "high");
        if (!(lo >= 0 && hi <= 100 && lo < hi)) invalid(where, "needs 0 <= low < high <= 100");
    } else if (op == "kmeans") {
        check(where, [&] { kmeans_config(out).validate(); });
    } else if (op == "fcm") {
        check(where, [&] { fcm_config(out).validate(); });
    } else if (op == "ede") {
        check(where + ".map", [&] { PhaseMap::parse(get<std::string>(out, "map")).validate(); });
        if (get<int>(out, "k1") < 2 || get<int>(out, "k1") > 255) invalid(where + ".k1", "must be in 2..255");
        if (out.at("seg_slices").empty()) invalid(where + ".seg_slices", "needs at least one slice");
    } else if (op == "training_table") {
        const bool has_path = !get<std::string>(out, "path").empty();
        if (has_path == !out.at("rows").empty()) invalid(where, "give exactly one of 'path' or 'rows'");
        training_rows(out.at("rows"), where + ".rows");
    } else if (op == "train") {
        const auto method = get<std::string>(out, "method");
        if (method != "lssvm" && method != "bagging" && method != "adaboost")
            invalid(where + ".method", "must be lssvm, bagging or adaboost");
        if (out.at("standardize").is_null()) out["standardize"] = method == "lssvm";
        if (method == "lssvm")
            check(where, [&] { lssvm_params(out).validate(); });
        else
            check(where, [&] { ensemble_params(out).validate(); });
        const int folds = get<int>(out, "folds");
        if (folds != 0 && folds < 2) invalid(where + ".folds", "must be 0 (off) or >= 2");
    } else if (op == "porosity" || op == "trend" || op == "fractions" || op == "psd" || op == "rev") {
        if (out.at("offset").size() != 3) invalid(where + ".offset", "expected [dx, dy, dz]");
        if (get<int>(out, "pore_class") < 1) invalid(where + ".pore_class", "must be >= 1");
        if (get<int>(out, "bins") < 1) invalid(where + ".bins", "must be >= 1");
        if (get<double>(out, "voxel_size") < 0) invalid(where + ".voxel_size", "must be >= 0");
    } else if (op == "export") {
        const auto fmt = get<std::string>(out, "format");
        if (fmt != "vtk" && fmt != "raw" && fmt != "csv" && fmt != "json")
            invalid(where + ".format", "must be vtk, raw, csv or json");
        const auto enc = get<std::string>(out, "encoding");
        if (enc != "binary" && enc != "ascii") invalid(where + ".encoding", "must be binary or ascii");
        check(where + ".byte_order", [&] { parse_byte_order(get<std::string>(out, "byte_order")); });
        const fs::path p = get<std::string>(out, "path");
        if (p.empty() || p.is_absolute() || *p.begin() == "..")
            invalid(where + ".path", "must be a relative path inside the output directory");
    }
    return out;
}

// ---------------------------------------------------------------------------
// hashing

namespace {

void put_u16le(std::string& out, std::uint16_t v) {
    out += static_cast<char>(v & 0xff);
    out += static_cast<char>(v >> 8);
}

std::string raw_bytes(const VoxelVolume& vol, ByteOrder order) {
    std::string out;
    const auto d = vol.data();
    if (vol.bit_depth() == 8) {
        out.reserve(d.size());
        for (std::uint16_t v : d) out += static_cast<char>(v);
        return out;
    }
    out.reserve(2 * d.size());
    for (std::uint16_t v : d) {
        if (order == ByteOrder::little) {
            put_u16le(out, v);
        } else {
            out += static_cast<char>(v >> 8);
            out += static_cast<char>(v & 0xff);
        }
    }
    return out;
}

}  // namespace

std::string artifact_hash(const VoxelVolume& vol) {
    std::string s = "voxels " + vol.dims().str() + " bits=" + std::to_string(vol.bit_depth()) +
                    " voxel=" + format_number(vol.voxel_size()) + "\n";
    s += raw_bytes(vol, ByteOrder::little);
    return sha256_hex(s);
}

std::string artifact_hash(const LabelVolume& labels) {
    std::string s = "labels " + labels.dims().str() + " k=" + std::to_string(labels.k()) +
                    " voxel=" + format_number(labels.voxel_size());
    for (const auto& n : labels.class_names()) s += " " + n;
    s += "\n";
    s.append(reinterpret_cast<const char*>(labels.labels().data()), labels.labels().size());
    return sha256_hex(s);
}

std::string artifact_hash(const Table& table) { return sha256_hex(to_csv(table)); }
std::string artifact_hash(const Model& model) { return sha256_hex(save_model(model)); }
std::string artifact_hash(const TrainingTable& table) { return sha256_hex(to_csv(table)); }

// ---------------------------------------------------------------------------
// analysis

AnalysisOp parse_analysis_op(const std::string& s) {
    if (s == "porosity") return AnalysisOp::porosity;
    if (s == "trend") return AnalysisOp::trend;
    if (s == "fractions") return AnalysisOp::fractions;
    if (s == "psd") return AnalysisOp::psd;
    if (s == "rev") return AnalysisOp::rev;
    fail(ErrorCode::validation, "unknown analysis '" + s + "' (porosity, trend, fractions, psd, rev)");
}

const char* to_string(AnalysisOp op) {
    switch (op) {
        case AnalysisOp::porosity: return "porosity";
        case AnalysisOp::trend: return "trend";
        case AnalysisOp::fractions: return "fractions";
        case AnalysisOp::psd: return "psd";
        case AnalysisOp::rev: return "rev";
    }
    return "?";
}

std::vector<std::size_t> default_rev_edges(const Dims& dims) {
    const std::size_t m = std::min({dims.nx, dims.ny, dims.nz});
    std::vector<std::size_t> edges;
    for (std::size_t i = 1; i <= 10; ++i) {
        const std::size_t e = std::max<std::size_t>(1, m * i / 10);
        if (edges.empty() || e > edges.back()) edges.push_back(e);
    }
    return edges;
}

namespace {

// NaN is not representable in JSON.
Json num(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

}  // namespace

AnalysisResult analyze(const LabelVolume& labels, AnalysisOp op, const AnalysisParams& p) {
    AnalysisResult r;
    r.json["op"] = to_string(op);
    switch (op) {
        case AnalysisOp::porosity: {
            const double phi = porosity(labels, p.pore_class);
            r.json["pore_class"] = p.pore_class;
            r.json["porosity"] = phi;
            r.table.columns = {"pore_class", "porosity"};
            r.table.rows.push_back({static_cast<double>(p.pore_class), phi});
            break;
        }
        case AnalysisOp::trend: {
            const auto t = porosity_trend(labels, p.pore_class);
            r.json["pore_class"] = p.pore_class;
            r.json["slices"] = t.slices;
            r.json["porosity"] = t.porosity;
            r.json["slope"] = t.slope;
            r.json["intercept"] = t.intercept;
            r.json["r_squared"] = t.r_squared;
            r.json["mean"] = t.mean;
            r.json["std"] = t.std;
            r.table.columns = {"slice", "porosity"};
            for (std::size_t i = 0; i < t.slices.size(); ++i)
                r.table.rows.push_back({static_cast<double>(t.slices[i]), t.porosity[i]});
            break;
        }
        case AnalysisOp::fractions: {
            const auto f = volume_fractions(labels);
            Json fr = Json::object();
            r.table.columns = {"class", "fraction"};
            for (const auto& [c, v] : f) {
                fr[std::to_string(c)] = v;
                r.table.rows.push_back({static_cast<double>(c), v});
            }
            r.json["fractions"] = fr;
            break;
        }
        case AnalysisOp::psd: {
            const double vs = p.voxel_size > 0 ? p.voxel_size : labels.voxel_size();
            PsdParams pp;
            pp.smoothing_sigma = p.smoothing_sigma;
            pp.histogram_bins = p.bins;
            const auto res = pore_size_distribution(labels, p.pore_class, vs, pp);
            r.json["pore_class"] = p.pore_class;
            r.json["voxel_size"] = vs;
            r.json["region_count"] = res.region_count;
            r.json["mean"] = res.mean;
            r.json["std"] = res.std;
            r.json["diameters"] = res.diameters;
            r.json["voxel_counts"] = res.voxel_counts;
            r.json["bin_edges"] = res.bin_edges;
            r.json["histogram"] = res.histogram;
            r.table.columns = {"region", "voxels", "diameter"};
            for (std::size_t i = 0; i < res.diameters.size(); ++i)
                r.table.rows.push_back({static_cast<double>(i + 1), static_cast<double>(res.voxel_counts[i]),
                                        res.diameters[i]});
            break;
        }
        case AnalysisOp::rev: {
            RevParams rp;
            rp.band = p.band;
            if (p.offset.size() == 3) {
                rp.offset_x = p.offset[0];
                rp.offset_y = p.offset[1];
                rp.offset_z = p.offset[2];
            }
            const auto edges = p.edges.empty() ? default_rev_edges(labels.dims()) : p.edges;
            const auto c = rev_curve(labels, p.pore_class, edges, rp);
            r.json["pore_class"] = p.pore_class;
            r.json["edges"] = c.edge_lengths;
            Json phi = Json::array();
            for (double v : c.porosity) phi.push_back(num(v));
            r.json["porosity"] = phi;
            r.json["full_porosity"] = c.full_porosity;
            r.json["band"] = c.band;
            r.json["stable_from"] = c.stable_from ? Json(*c.stable_from) : Json(nullptr);
            r.table.columns = {"edge", "porosity"};
            for (std::size_t i = 0; i < c.edge_lengths.size(); ++i)
                r.table.rows.push_back({static_cast<double>(c.edge_lengths[i]), c.porosity[i]});
            break;
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// export

namespace {

const LabelVolume* find_labels(const Workspace& ws, const std::string& name) {
    const auto it = ws.labels.find(name);
    return it == ws.labels.end() ? nullptr : it->second.get();
}

}  // namespace

ExportPayload export_artifact(const Workspace& ws, const ExportRequest& req) {
    const auto enc = req.encoding == "ascii" ? VtkEncoding::ascii : VtkEncoding::binary;
    auto bad_format = [&](const char* allowed) -> ExportPayload {
        fail(ErrorCode::validation, "artifact '" + req.artifact + "' cannot be exported as '" + req.format +
                                        "' (allowed: " + allowed + ")");
    };
    ExportPayload p;
    if (req.artifact == "volume") {
        if (!ws.volume) fail(ErrorCode::validation, "no volume loaded");
        if (req.format == "vtk") {
            p.bytes = to_vtk(*ws.volume, enc);
            p.content_type = "application/octet-stream";
            p.filename = "volume.vtk";
        } else if (req.format == "raw") {
            p.bytes = raw_bytes(*ws.volume, parse_byte_order(req.byte_order));
            p.content_type = "application/octet-stream";
            p.filename = "volume.raw";
        } else {
            return bad_format("vtk, raw");
        }
        return p;
    }
    if (req.artifact == "model") {
        if (!ws.model) fail(ErrorCode::validation, "no trained model");
        if (req.format != "json") return bad_format("json");
        return {save_model(*ws.model), "application/json", "model.json"};
    }
    if (req.artifact == "training_table") {
        if (!ws.training) fail(ErrorCode::validation, "no training table");
        if (req.format != "csv") return bad_format("csv");
        return {to_csv(*ws.training), "text/csv", "training_table.csv"};
    }
    if (const LabelVolume* l = find_labels(ws, req.artifact)) {
        if (req.format == "vtk") return {to_vtk(*l, enc), "application/octet-stream", req.artifact + ".vtk"};
        if (req.format == "raw") {
            const auto lab = l->labels();
            return {std::string(reinterpret_cast<const char*>(lab.data()), lab.size()), "application/octet-stream",
                    req.artifact + ".raw"};
        }
        return bad_format("vtk, raw");
    }
    if (const auto t = ws.tables.find(req.artifact); t != ws.tables.end()) {
        if (req.format != "csv") return bad_format("csv");
        return {to_csv(t->second), "text/csv", req.artifact + ".csv"};
    }
    if (const auto r = ws.reports.find(req.artifact); r != ws.reports.end()) {
        if (req.format != "json") return bad_format("json");
        return {r->second.dump(2) + "\n", "application/json", req.artifact + ".json"};
    }
    fail(ErrorCode::validation, "unknown artifact '" + req.artifact + "'");
}

// ---------------------------------------------------------------------------
// stages

namespace {

fs::path resolve(const StageContext& ctx, const std::string& p) {
    fs::path path(p);
    if (path.is_relative()) path = ctx.base_dir / path;
    return fs::absolute(path).lexically_normal();
}

const VoxelVolume& need_volume(const Workspace& ws) {
    if (!ws.volume) fail(ErrorCode::validation, "no volume loaded (start the chain with load_raw or load_tiff)");
    return *ws.volume;
}

std::string labels_name(const Workspace& ws, const Json& s) {
    std::string n = get<std::string>(s, "labels");
    if (n.empty()) n = ws.last_labels;
    if (n.empty()) fail(ErrorCode::validation, "no label volume produced yet");
    if (!ws.labels.count(n)) fail(ErrorCode::validation, "unknown label volume '" + n + "'");
    return n;
}

void set_volume(Workspace& ws, VoxelVolume v, StageOutcome& out) {
    out.artifacts.push_back({"volume", artifact_hash(v)});
    ws.volume = std::make_shared<const VoxelVolume>(std::move(v));
}

void set_labels(Workspace& ws, const std::string& name, LabelVolume l, StageOutcome& out) {
    out.artifacts.push_back({name, artifact_hash(l)});
    ws.labels[name] = std::make_shared<const LabelVolume>(std::move(l));
    ws.last_labels = name;
}

void set_table(Workspace& ws, const std::string& name, Table t, StageOutcome& out) {
    out.artifacts.push_back({name, artifact_hash(t)});
    ws.tables[name] = std::move(t);
}

void set_report(Workspace& ws, const std::string& name, Json j, StageOutcome& out) {
    out.artifacts.push_back({name, sha256_hex(j.dump())});
    ws.reports[name] = std::move(j);
}

Table centers_table(const std::vector<double>& centers) {
    Table t;
    t.columns = {"label", "center"};
    for (std::size_t i = 0; i < centers.size(); ++i) t.rows.push_back({static_cast<double>(i + 1), centers[i]});
    return t;
}

Table phase_table(const PhaseStats& stats) {
    Table t;
    t.columns = {"phase", "count", "min", "max", "mean", "std", "skewness"};
    for (const auto& p : stats.phases) {
        t.row_names.push_back(p.name);
        t.rows.push_back({static_cast<double>(p.count), p.min, p.max, p.mean, p.std, p.skewness});
    }
    return t;
}

Json phase_json(const PhaseStats& stats) {
    Json j;
    Json phases = Json::array();
    for (const auto& p : stats.phases) {
        Json q;
        q["name"] = p.name;
        q["empty"] = p.empty;
        q["count"] = p.count;
        q["min"] = p.min;
        q["max"] = p.max;
        q["mean"] = p.mean;
        q["std"] = p.std;
        q["skewness"] = num(p.skewness);
        q["bin_centers"] = p.bin_centers;
        q["bin_counts"] = p.bin_counts;
        phases.push_back(q);
    }
    j["phases"] = phases;
    j["overlaps"] = stats.overlaps;
    j["warnings"] = stats.warnings;
    return j;
}

}  // namespace

void run_stage(Workspace& ws, const Json& s, StageContext& ctx, StageOutcome& out) {
    const std::string op = get<std::string>(s, "op");
    const RunControl& ctl = ctx.control;
    ctl.checkpoint(0.0);

    if (op == "load_raw") {
        RawGeometry g;
        g.dims = dims_of(s, "dims", "load_raw");
        g.bit_depth = get<int>(s, "bit_depth");
        g.byte_order = parse_byte_order(get<std::string>(s, "byte_order"));
        g.voxel_size = get<double>(s, "voxel_size");
        g.transpose = get<bool>(s, "transpose");
        const fs::path p = resolve(ctx, get<std::string>(s, "path"));
        out.inputs.push_back(p);
        set_volume(ws, load_raw(p, g), out);
        out.log.push_back("loaded " + p.string() + " " + g.dims.str());
    } else if (op == "load_tiff") {
        std::vector<fs::path> paths;
        for (const auto& p : s.at("paths")) paths.push_back(resolve(ctx, p.get<std::string>()));
        out.inputs.insert(out.inputs.end(), paths.begin(), paths.end());
        set_volume(ws, load_tiff_stack(paths, get<double>(s, "voxel_size")), out);
        out.log.push_back("loaded " + std::to_string(paths.size()) + " TIFF slices " + ws.volume->dims().str());
    } else if (op == "load_labels") {
        const fs::path p = resolve(ctx, get<std::string>(s, "path"));
        out.inputs.push_back(p);
        set_labels(ws, get<std::string>(s, "name"),
                   load_labels_raw(p, dims_of(s, "dims", "load_labels"), get<double>(s, "voxel_size")), out);
    } else if (op == "crop") {
        const auto r = s.at("roi");
        const Roi roi{r[0].get<std::size_t>(), r[1].get<std::size_t>(), r[2].get<std::size_t>(),
                      r[3].get<std::size_t>(), r[4].get<std::size_t>(), r[5].get<std::size_t>()};
        set_volume(ws, crop(need_volume(ws), roi), out);
        out.log.push_back("cropped to " + roi.str());
    } else if (op == "downsample") {
        set_volume(ws, downsample(need_volume(ws), get<int>(s, "factor")), out);
    } else if (op == "nlm") {
        set_volume(ws, nlm_filter(need_volume(ws), nlm_params(s), ctl), out);
    } else if (op == "ad") {
        set_volume(ws, anisotropic_diffusion(need_volume(ws), ad_params(s), ctl), out);
    } else if (op == "smooth") {
        set_volume(ws,
                   smooth(need_volume(ws), parse_smooth_method(get<std::string>(s, "method")), get<int>(s, "radius"),
                          get<double>(s, "sigma"), ctl),
                   out);
    } else if (op == "contrast") {
        set_volume(ws, contrast_stretch(need_volume(ws), get<double>(s, "low"), get<double>(s, "high")), out);
    } else if (op == "kmeans" || op == "fcm") {
        const std::string name = get<std::string>(s, "name");
        const ClusterResult r = op == "kmeans" ? kmeans_segment(need_volume(ws), kmeans_config(s), ctl)
                                               : fcm_segment(need_volume(ws), fcm_config(s), ctl);
        set_labels(ws, name, r.labels, out);
        set_table(ws, name + ".centers", centers_table(r.centers), out);
        out.log.push_back(op + ": objective " + format_number(r.objective) + " after " +
                          std::to_string(r.iterations_used) + " iterations");
    } else if (op == "ede") {
        const std::string name = get<std::string>(s, "name");
        EdeConfig c;
        c.k1 = get<int>(s, "k1");
        c.final_k = get<int>(s, "final_k");
        c.seg_slices = get<std::vector<std::size_t>>(s, "seg_slices");
        c.map = PhaseMap::parse(get<std::string>(s, "map"));
        c.restarts = get<int>(s, "restarts");
        c.seed = get<std::uint64_t>(s, "seed");
        c.mask_threshold = get<double>(s, "mask");
        EdeResult r = dual_cluster_pipeline(need_volume(ws), c, ctl);
        set_labels(ws, name + ".over", std::move(r.over_labels), out);
        set_labels(ws, name, std::move(r.final_labels), out);
        set_table(ws, name + ".phase_stats", phase_table(r.stats), out);
        set_table(ws, name + ".centers", centers_table(r.final_centers), out);
        set_report(ws, name + ".stats", phase_json(r.stats), out);
        set_report(ws, name + ".advisory", Json(r.advisory), out);
        for (const auto& a : r.advisory) out.log.push_back(a);
    } else if (op == "training_table") {
        TrainingTable t;
        if (const auto p = get<std::string>(s, "path"); !p.empty()) {
            const fs::path path = resolve(ctx, p);
            out.inputs.push_back(path);
            t = parse_training_csv(read_file(path));
        } else {
            t = training_rows(s.at("rows"), "rows");
        }
        if (ws.volume) t.validate(ws.volume->dims());
        out.artifacts.push_back({"training_table", artifact_hash(t)});
        ws.training = std::move(t);
    } else if (op == "train") {
        if (!ws.training) fail(ErrorCode::validation, "no training table (add a training_table stage first)");
        const FeatureMatrix f = extract_features(need_volume(ws), *ws.training);
        Trainer trainer;
        if (is_lssvm(s)) {
            const LssvmParams p = lssvm_params(s);
            trainer = [p](const FeatureMatrix& m) { return Model(train_lssvm(m, p)); };
        } else {
            const EnsembleParams p = ensemble_params(s);
            trainer = [p](const FeatureMatrix& m) { return Model(train_ensemble(m, p)); };
        }
        ws.model = std::make_shared<const Model>(trainer(f));
        out.artifacts.push_back({"model", artifact_hash(*ws.model)});
        if (const int folds = get<int>(s, "folds"); folds >= 2) {
            const CvResult cv = cross_validate(f, folds, trainer, get<std::uint64_t>(s, "seed"));
            Table t;
            t.columns = {"fold", "accuracy"};
            for (std::size_t i = 0; i < cv.fold_accuracy.size(); ++i)
                t.rows.push_back({static_cast<double>(i + 1), cv.fold_accuracy[i]});
            set_table(ws, "model.cv", std::move(t), out);
            out.log.push_back("cross-validation accuracy " + format_number(cv.mean) + " +- " + format_number(cv.std));
        }
    } else if (op == "load_model") {
        const fs::path p = resolve(ctx, get<std::string>(s, "path"));
        out.inputs.push_back(p);
        ws.model = std::make_shared<const Model>(load_model(read_file(p)));
        out.artifacts.push_back({"model", artifact_hash(*ws.model)});
    } else if (op == "classify") {
        if (!ws.model) fail(ErrorCode::validation, "no model (add a train or load_model stage first)");
        set_labels(ws, get<std::string>(s, "name"), classify_volume(*ws.model, need_volume(ws), ctl), out);
    } else if (op == "porosity" || op == "trend" || op == "fractions" || op == "psd" || op == "rev") {
        const std::string lname = labels_name(ws, s);
        std::string name = get<std::string>(s, "name");
        if (name.empty()) name = lname + "." + op;
        AnalysisResult r = analyze(*ws.labels.at(lname), parse_analysis_op(op), analysis_params(s));
        r.json["labels"] = lname;
        set_table(ws, name, std::move(r.table), out);
        set_report(ws, name, std::move(r.json), out);
    } else if (op == "export") {
        ExportRequest req{get<std::string>(s, "artifact"), get<std::string>(s, "format"),
                          get<std::string>(s, "encoding"), get<std::string>(s, "byte_order")};
        const ExportPayload p = export_artifact(ws, req);
        const fs::path rel = fs::path(get<std::string>(s, "path")).lexically_normal();
        const fs::path dest = ctx.output_dir / rel;
        fs::create_directories(dest.parent_path());
        write_file(dest, p.bytes);
        out.files.push_back(rel);
    } else {
        fail(ErrorCode::validation, "unknown operation '" + op + "'");
    }
    ctl.report(1.0);
}

// ---------------------------------------------------------------------------
// runs

RunConfig parse_run_config(const Json& doc, const fs::path& base_dir, const std::string& source) {
    if (!doc.is_object()) invalid(source, "expected a JSON object");
    for (const auto& [key, _] : doc.items())
        if (key != "output_dir" && key != "stages") invalid(source + ": " + key, "unknown field");
    RunConfig cfg;
    cfg.base_dir = fs::absolute(base_dir).lexically_normal();
    std::string out = "rockseg-out";
    if (doc.contains("output_dir")) out = check_kind(doc.at("output_dir"), Kind::string, source + ": output_dir").get<std::string>();
    cfg.output_dir = fs::path(out).is_absolute() ? fs::path(out) : cfg.base_dir / out;
    cfg.output_dir = cfg.output_dir.lexically_normal();
    if (!doc.contains("stages")) invalid(source + ": stages", "required");
    const auto& stages = doc.at("stages");
    if (!stages.is_array()) invalid(source + ": stages", "expected a list");
    if (stages.empty()) invalid(source + ": stages", "empty stage list");
    for (std::size_t i = 0; i < stages.size(); ++i)
        cfg.stages.push_back(normalize_stage(stages[i], source + ": stages[" + std::to_string(i) + "]"));
    return cfg;
}

RunConfig load_run_config(const fs::path& path) {
    const std::string text = read_file(path);
    Json doc;
    try {
        doc = Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorCode::validation, path.string() + ": " + e.what());
    }
    return parse_run_config(doc, fs::absolute(path).parent_path(), path.string());
}

Json execute_stages(Workspace& ws, const std::vector<Json>& stages, StageContext& ctx, std::size_t first_index) {
    Json records = Json::array();
    const RunControl outer = ctx.control;
    const double n = static_cast<double>(stages.size());
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const Json& stage = stages[i];
        const std::string op = get<std::string>(stage, "op");
        StageOutcome out;
        ctx.control.cancelled = outer.cancelled;
        ctx.control.progress = [&outer, i, n](double f) {
            outer.report((static_cast<double>(i) + std::clamp(f, 0.0, 1.0)) / n);
        };
        try {
            run_stage(ws, stage, ctx, out);
        } catch (const Error& e) {
            ctx.control = outer;
            if (e.code() == ErrorCode::cancelled) throw;
            fail(e.code(), "stage " + std::to_string(first_index + i) + " (" + op + "): " + e.what());
        } catch (const std::exception& e) {
            ctx.control = outer;
            fail(ErrorCode::io, "stage " + std::to_string(first_index + i) + " (" + op + "): " + e.what());
        }
        Json rec;
        rec["stage"] = stage;
        Json inputs = Json::array();
        for (const auto& p : out.inputs) inputs.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
        rec["inputs"] = inputs;
        Json arts = Json::array();
        for (const auto& a : out.artifacts) arts.push_back({{"name", a.name}, {"sha256", a.sha256}});
        rec["artifacts"] = arts;
        Json files = Json::array();
        for (const auto& f : out.files)
            files.push_back({{"path", f.generic_string()}, {"sha256", sha256_file(ctx.output_dir / f)}});
        rec["files"] = files;
        rec["log"] = out.log;
        records.push_back(rec);
    }
    ctx.control = outer;
    return records;
}

Json make_manifest(const fs::path& base_dir, const fs::path& output_dir, const Json& stage_records) {
    Json m;
    m["format"] = "rockseg-manifest";
    m["version"] = 1;
    m["base_dir"] = base_dir.string();
    m["output_dir"] = output_dir.string();
    m["threads"] = omp_get_max_threads();
    m["stages"] = stage_records;
    return m;
}

RunResult execute(const RunConfig& cfg, const RunControl& ctl) {
    fs::create_directories(cfg.output_dir);
    RunResult r;
    StageContext ctx{cfg.base_dir, cfg.output_dir, ctl};
    const Json records = execute_stages(r.workspace, cfg.stages, ctx);
    r.manifest = make_manifest(cfg.base_dir, cfg.output_dir, records);
    write_file(cfg.output_dir / "manifest.json", r.manifest.dump(2) + "\n");
    return r;
}

ReplayResult replay(const fs::path& manifest_path, const std::optional<fs::path>& output_dir) {
    Json m;
    try {
        m = Json::parse(read_file(manifest_path));
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorCode::validation, manifest_path.string() + ": " + e.what());
    }
    const std::string src = manifest_path.string();
    if (!m.is_object() || m.value("format", "") != "rockseg-manifest")
        invalid(src, "not a rockseg manifest");
    if (m.value("version", 0) != 1) invalid(src + ": version", "unsupported manifest version");
    if (!m.contains("stages") || !m.at("stages").is_array() || m.at("stages").empty())
        invalid(src + ": stages", "missing or empty");

    ReplayResult res;
    RunConfig cfg;
    cfg.base_dir = m.value("base_dir", fs::absolute(manifest_path).parent_path().string());
    cfg.output_dir = output_dir ? fs::absolute(*output_dir) : fs::absolute(manifest_path).parent_path() / "replay";
    const Json& recs = m.at("stages");
    for (std::size_t i = 0; i < recs.size(); ++i) {
        const std::string where = src + ": stages[" + std::to_string(i) + "]";
        if (!recs[i].is_object() || !recs[i].contains("stage")) invalid(where, "missing stage");
        cfg.stages.push_back(normalize_stage(recs[i].at("stage"), where + ".stage"));
        for (const auto& in : recs[i].value("inputs", Json::array())) {
            const fs::path p = in.at("path").get<std::string>();
            if (!fs::exists(p))
                res.mismatches.push_back("input " + p.string() + " is missing");
            else if (sha256_file(p) != in.at("sha256").get<std::string>())
                res.mismatches.push_back("input " + p.string() + " changed since the recorded run");
        }
    }
    if (!res.mismatches.empty()) {
        res.manifest = m;
        return res;
    }

    const RunResult run = execute(cfg);
    res.manifest = run.manifest;
    const Json& now = run.manifest.at("stages");
    for (std::size_t i = 0; i < recs.size(); ++i) {
        const std::string tag = "stage " + std::to_string(i) + " (" + cfg.stages[i].at("op").get<std::string>() + ")";
        for (const char* key : {"artifacts", "files"}) {
            const Json before = recs[i].value(key, Json::array());
            const Json& after = now[i].at(key);
            const char* field = std::string(key) == "artifacts" ? "name" : "path";
            std::map<std::string, std::string> a, b;
            for (const auto& x : before) a[x.at(field).get<std::string>()] = x.at("sha256").get<std::string>();
            for (const auto& x : after) b[x.at(field).get<std::string>()] = x.at("sha256").get<std::string>();
            for (const auto& [name, h] : a) {
                const auto it = b.find(name);
                if (it == b.end())
                    res.mismatches.push_back(tag + ": " + name + " was not produced");
                else if (it->second != h)
                    res.mismatches.push_back(tag + ": " + name + " differs (" + h.substr(0, 12) + " vs " +
                                             it->second.substr(0, 12) + ")");
            }
            for (const auto& [name, h] : b)
                if (!a.count(name)) res.mismatches.push_back(tag + ": unexpected output " + name);
        }
    }
    res.identical = res.mismatches.empty();
    return res;
}

}  // namespace rockseg
