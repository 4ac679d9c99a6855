#include "rockseg/error.hpp"
#include "rockseg/pipeline.hpp"
#include "rockseg/service.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <iostream>

namespace fs = std::filesystem;
using rockseg::Json;

namespace {

struct Input {
    std::string raw;
    std::vector<std::string> tiff;
    std::vector<std::size_t> dims;
    int bit_depth = 16;
    std::string byte_order = "little";
    double voxel_size = 1.0;
    bool transpose = false;
    std::vector<std::size_t> roi;

    void add(CLI::App* app) {
        auto* r = app->add_option("--raw", raw, "Headerless raw volume");
        auto* t = app->add_option("--tiff", tiff, "TIFF slices in stack order");
        r->excludes(t);
        app->add_option("--dims", dims, "nx,ny,nz of the raw volume")->delimiter(',')->expected(3);
        app->add_option("--bit-depth", bit_depth, "8 or 16")->check(CLI::IsMember({8, 16}));
        app->add_option("--byte-order", byte_order, "little or big")->check(CLI::IsMember({"little", "big"}));
        app->add_option("--voxel-size", voxel_size, "Voxel edge length (micrometres)");
        app->add_flag("--transpose", transpose, "Raw slices are stored y-fastest");
        app->add_option("--roi", roi, "x0,y0,z0,dx,dy,dz crop")->delimiter(',')->expected(6);
    }

    void stages(std::vector<Json>& out) const {
        if (!raw.empty()) {
            if (dims.size() != 3) throw CLI::ValidationError("--dims", "required with --raw");
            out.push_back({{"op", "load_raw"},
                           {"path", raw},
                           {"dims", dims},
                           {"bit_depth", bit_depth},
                           {"byte_order", byte_order},
                           {"voxel_size", voxel_size},
                           {"transpose", transpose}});
        } else if (!tiff.empty()) {
            out.push_back({{"op", "load_tiff"}, {"paths", tiff}, {"voxel_size", voxel_size}});
        } else {
            throw CLI::ValidationError("input", "give --raw or --tiff");
        }
        if (!roi.empty()) out.push_back({{"op", "crop"}, {"roi", roi}});
    }
};

struct Output {
    std::string out_dir = "rockseg-out";
    std::string output;
    bool ascii = false;

    void add(CLI::App* app, const std::string& what) {
        app->add_option("--out", out_dir, "Output directory (manifest.json is written here)");
        app->add_option("--output,-o", output, what + " file inside the output directory (.vtk, .raw, .csv, .json)");
        app->add_flag("--ascii", ascii, "ASCII instead of binary VTK");
    }

    void export_stage(std::vector<Json>& stages, const std::string& artifact) const {
        if (output.empty()) return;
        const std::string ext = fs::path(output).extension().string();
        std::string format = ext.empty() ? "" : ext.substr(1);
        if (format != "vtk" && format != "raw" && format != "csv" && format != "json")
            throw CLI::ValidationError("--output", "extension must be .vtk, .raw, .csv or .json");
        stages.push_back({{"op", "export"},
                          {"artifact", artifact},
                          {"format", format},
                          {"path", output},
                          {"encoding", ascii ? "ascii" : "binary"}});
    }
};

rockseg::RunResult run_stages(const std::vector<Json>& stages, const std::string& out_dir) {
    Json doc = {{"output_dir", out_dir}, {"stages", stages}};
    const auto cfg = rockseg::parse_run_config(doc, fs::current_path(), "command line");
    return rockseg::execute(cfg);
}

void print_summary(const rockseg::RunResult& r) {
    for (const auto& rec : r.manifest.at("stages")) {
        for (const auto& line : rec.at("log")) std::cerr << line.get<std::string>() << "\n";
        for (const auto& f : rec.at("files")) std::cerr << "wrote " << f.at("path").get<std::string>() << "\n";
    }
    std::cerr << "manifest " << (fs::path(r.manifest.at("output_dir").get<std::string>()) / "manifest.json").string()
              << "\n";
}

std::string env_or(const char* name, const std::string& def) {
    const char* v = std::getenv(name);
    return v && *v ? v : def;
}

rockseg::HttpServer* g_server = nullptr;

void on_signal(int) {
    if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rockseg: micro-CT segmentation, edge-enhancement removal and petrophysics"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "rockseg 1.0.0");

    // run / replay
    std::string config, manifest, out_override;
    auto* run = app.add_subcommand("run", "Execute a JSON stage chain");
    run->add_option("config", config, "Config file")->required()->check(CLI::ExistingFile);
    run->add_option("--out", out_override, "Override output_dir");
    auto* rep = app.add_subcommand("replay", "Re-run a manifest and compare output hashes");
    rep->add_option("manifest", manifest, "manifest.json")->required()->check(CLI::ExistingFile);
    rep->add_option("--out", out_override, "Replay output directory");

    // serve
    std::string bind = env_or("ROCKSEG_BIND", "127.0.0.1:8080");
    std::string data_dir = env_or("ROCKSEG_DATA_DIR", "rockseg-data");
    auto* serve = app.add_subcommand("serve", "HTTP job API (env ROCKSEG_BIND, ROCKSEG_DATA_DIR)");
    serve->add_option("--bind", bind, "host:port");
    serve->add_option("--data-dir", data_dir, "Volumes are resolved and job manifests stored here");

    // filter
    Input in;
    Output out;
    std::string method;
    int nlm_window = 21, nlm_neigh = 6, ad_iters = 5, radius = 1;
    double nlm_sim = 0.71, ad_threshold = 22968, ad_sigma = 0, sigma = 0, low = 1, high = 99;
    bool nlm_2d = false;
    std::string smooth_method = "median";
    auto* filter = app.add_subcommand("filter", "Denoise or stretch a volume");
    filter->add_option("method", method, "nlm, ad, smooth or contrast")
        ->required()
        ->check(CLI::IsMember({"nlm", "ad", "smooth", "contrast"}));
    in.add(filter);
    out.add(filter, "Filtered volume");
    filter->add_option("--nlm-window", nlm_window, "Search window side");
    filter->add_option("--nlm-neigh", nlm_neigh, "Patch side");
    filter->add_option("--nlm-sim", nlm_sim, "Similarity (multiplier on the input std)");
    filter->add_flag("--nlm-2d", nlm_2d, "Search within the slice only");
    filter->add_option("--ad-threshold", ad_threshold, "Gradient stop threshold");
    filter->add_option("--ad-iters", ad_iters, "Iterations");
    filter->add_option("--ad-sigma", ad_sigma, "Gaussian width of the stop-criterion copy (0 = none)");
    filter->add_option("--smooth", smooth_method, "median, mean or gaussian")
        ->check(CLI::IsMember({"median", "mean", "gaussian"}));
    filter->add_option("--radius", radius, "Smoothing radius");
    filter->add_option("--sigma", sigma, "Gaussian sigma (0 = radius/2)");
    filter->add_option("--low", low, "Contrast low percentile");
    filter->add_option("--high", high, "Contrast high percentile");

    // segment
    std::string seg_method;
    int k = 3, restarts = 5, max_iters = 0;
    double mask = 0, m = 2.0;
    std::string distance = "sqeuclidean";
    std::uint64_t seed = 42;
    auto* segment = app.add_subcommand("segment", "Unsupervised segmentation");
    segment->add_option("method", seg_method, "kmeans or fcm")->required()->check(CLI::IsMember({"kmeans", "fcm"}));
    in.add(segment);
    out.add(segment, "Label volume");
    segment->add_option("--k", k, "Number of clusters");
    segment->add_option("--distance", distance, "sqeuclidean, manhattan (cityblock) or chebyshev (box)");
    segment->add_option("--restarts", restarts, "Restarts (best objective kept)");
    segment->add_option("--mask", mask, "Voxels at or below this are masked");
    segment->add_option("--m", m, "FCM membership exponent");
    segment->add_option("--max-iters", max_iters, "Iteration cap (0 = default)");
    segment->add_option("--seed", seed, "Seed");

    // ede-pipeline
    int k1 = 7, final_k = 3;
    std::vector<std::size_t> seg_slices{0, 1};
    std::string map = "default", stats_file, advisory_file;
    auto* ede = app.add_subcommand("ede-pipeline", "Dual-clustering edge-enhancement removal");
    in.add(ede);
    out.add(ede, "Final label volume");
    ede->add_option("--k1", k1, "Over-clustering classes");
    ede->add_option("--final-k", final_k, "Final classes");
    ede->add_option("--seg-slices", seg_slices, "Slices for the over-clustering")->delimiter(',');
    ede->add_option("--map", map, "'default' or name=lo-hi,...");
    ede->add_option("--restarts", restarts, "k-means restarts");
    ede->add_option("--mask", mask, "Mask threshold");
    ede->add_option("--seed", seed, "Seed");
    ede->add_option("--stats", stats_file, "Phase statistics (.csv or .json)");
    ede->add_option("--advisory", advisory_file, "Advisory log (.json)");

    // analyze
    std::string op, labels_path;
    int pore_class = 1, bins = 20;
    double psd_sigma = 1.0, band = 0.01;
    std::vector<std::size_t> edges;
    auto* analyze = app.add_subcommand("analyze", "Porosity, trend, fractions, PSD or REV of a label volume");
    analyze->add_option("op", op, "porosity, trend, psd, fractions or rev")
        ->required()
        ->check(CLI::IsMember({"porosity", "trend", "psd", "fractions", "rev"}));
    analyze->add_option("--labels", labels_path, "Label volume (one byte per voxel)")->required();
    analyze->add_option("--dims", in.dims, "nx,ny,nz")->delimiter(',')->expected(3)->required();
    analyze->add_option("--pore-class", pore_class, "Pore label");
    analyze->add_option("--voxel-size", in.voxel_size, "Voxel edge length (micrometres)");
    analyze->add_option("--psd-sigma", psd_sigma, "Smoothing of the distance map (voxels)");
    analyze->add_option("--bins", bins, "PSD histogram bins");
    analyze->add_option("--edges", edges, "REV cube edges")->delimiter(',');
    analyze->add_option("--band", band, "REV stability band");
    out.add(analyze, "Result");

    // train / classify
    std::string table, model_in, train_method = "lssvm", kernel = "rbf";
    double gamma = 10, sigma2 = 36;
    int n_learners = 50, max_depth = 3, folds = 0;
    auto* train = app.add_subcommand("train", "Train a classifier from a training table");
    in.add(train);
    train->add_option("--table", table, "CSV class,feature,x,y,slice")->required()->check(CLI::ExistingFile);
    train->add_option("--method", train_method, "lssvm, bagging or adaboost")
        ->check(CLI::IsMember({"lssvm", "bagging", "adaboost"}));
    train->add_option("--gamma", gamma, "LSSVM regularization");
    train->add_option("--sigma2", sigma2, "LSSVM RBF width");
    train->add_option("--kernel", kernel, "rbf or linear")->check(CLI::IsMember({"rbf", "linear"}));
    train->add_option("--learners", n_learners, "Ensemble size");
    train->add_option("--max-depth", max_depth, "Tree depth");
    train->add_option("--folds", folds, "Cross-validation folds (0 = off)");
    train->add_option("--seed", seed, "Seed");
    train->add_option("--out", out.out_dir, "Output directory");
    train->add_option("--model", out.output, "Model file inside the output directory")->required();

    auto* classify = app.add_subcommand("classify", "Classify every voxel with a saved model");
    in.add(classify);
    out.add(classify, "Label volume");
    classify->add_option("--model", model_in, "Model JSON")->required()->check(CLI::ExistingFile);

    auto* exp = app.add_subcommand("export", "Convert a volume (raw/TIFF in, VTK or raw out)");
    in.add(exp);
    out.add(exp, "Exported volume");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            auto cfg = rockseg::load_run_config(config);
            if (!out_override.empty()) cfg.output_dir = fs::absolute(out_override);
            print_summary(rockseg::execute(cfg));
            return 0;
        }
        if (rep->parsed()) {
            std::optional<fs::path> dir;
            if (!out_override.empty()) dir = out_override;
            const auto r = rockseg::replay(manifest, dir);
            for (const auto& mm : r.mismatches) std::cout << "mismatch: " << mm << "\n";
            std::cout << (r.identical ? "identical" : "different") << "\n";
            return r.identical ? 0 : 1;
        }
        if (serve->parsed()) {
            const auto [host, port] = rockseg::parse_bind_address(bind);
            rockseg::Service service(data_dir);
            rockseg::HttpServer server(service);
            const int p = server.bind(host, port);
            g_server = &server;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            std::cerr << "listening on " << host << ":" << p << ", data in " << service.data_dir().string() << "\n";
            server.listen();
            g_server = nullptr;
            return 0;
        }

        std::vector<Json> stages;
        std::string artifact = "volume";
        if (filter->parsed()) {
            in.stages(stages);
            if (method == "nlm")
                stages.push_back({{"op", "nlm"},
                                  {"search_window", nlm_window},
                                  {"neighborhood", nlm_neigh},
                                  {"similarity", nlm_sim},
                                  {"three_d", !nlm_2d}});
            else if (method == "ad")
                stages.push_back(
                    {{"op", "ad"}, {"threshold", ad_threshold}, {"iterations", ad_iters}, {"smoothing_sigma", ad_sigma}});
            else if (method == "smooth")
                stages.push_back({{"op", "smooth"}, {"method", smooth_method}, {"radius", radius}, {"sigma", sigma}});
            else
                stages.push_back({{"op", "contrast"}, {"low", low}, {"high", high}});
        } else if (segment->parsed()) {
            in.stages(stages);
            Json s = {{"op", seg_method}, {"mask", mask}, {"seed", seed}};
            if (seg_method == "kmeans") {
                s["k"] = k;
                s["distance"] = distance;
                s["restarts"] = restarts;
            } else {
                s["c"] = k;
                s["m"] = m;
            }
            if (max_iters > 0) s["max_iters"] = max_iters;
            stages.push_back(s);
            artifact = seg_method;
        } else if (ede->parsed()) {
            in.stages(stages);
            stages.push_back({{"op", "ede"},
                              {"k1", k1},
                              {"final_k", final_k},
                              {"seg_slices", seg_slices},
                              {"map", map},
                              {"restarts", restarts},
                              {"mask", mask},
                              {"seed", seed}});
            artifact = "ede";
            if (!stats_file.empty()) {
                const bool json = fs::path(stats_file).extension() == ".json";
                stages.push_back({{"op", "export"},
                                  {"artifact", json ? "ede.stats" : "ede.phase_stats"},
                                  {"format", json ? "json" : "csv"},
                                  {"path", stats_file}});
            }
            if (!advisory_file.empty())
                stages.push_back(
                    {{"op", "export"}, {"artifact", "ede.advisory"}, {"format", "json"}, {"path", advisory_file}});
        } else if (analyze->parsed()) {
            stages.push_back({{"op", "load_labels"},
                              {"path", labels_path},
                              {"dims", in.dims},
                              {"voxel_size", in.voxel_size},
                              {"name", "labels"}});
            stages.push_back({{"op", op},
                              {"labels", "labels"},
                              {"name", "result"},
                              {"pore_class", pore_class},
                              {"smoothing_sigma", psd_sigma},
                              {"bins", bins},
                              {"edges", edges},
                              {"band", band}});
            artifact = "result";
        } else if (train->parsed()) {
            in.stages(stages);
            stages.push_back({{"op", "training_table"}, {"path", table}});
            stages.push_back({{"op", "train"},
                              {"method", train_method},
                              {"gamma", gamma},
                              {"sigma2", sigma2},
                              {"kernel", kernel},
                              {"n_learners", n_learners},
                              {"max_depth", max_depth},
                              {"seed", seed},
                              {"folds", folds}});
            artifact = "model";
            stages.push_back({{"op", "export"}, {"artifact", "model"}, {"format", "json"}, {"path", out.output}});
            out.output.clear();
        } else if (classify->parsed()) {
            in.stages(stages);
            stages.push_back({{"op", "load_model"}, {"path", model_in}});
            stages.push_back({{"op", "classify"}, {"name", "classified"}});
            artifact = "classified";
        } else if (exp->parsed()) {
            in.stages(stages);
        }
        out.export_stage(stages, artifact);
        const auto r = run_stages(stages, out.out_dir);
        print_summary(r);
        const auto& ws = r.workspace;
        if (auto it = ws.reports.find(artifact); it != ws.reports.end()) std::cout << it->second.dump(2) << "\n";
        if (auto it = ws.tables.find(artifact + ".centers"); it != ws.tables.end())
            std::cout << rockseg::to_csv(it->second);
        if (auto it = ws.tables.find("model.cv"); it != ws.tables.end()) std::cout << rockseg::to_csv(it->second);
        return 0;
    } catch (const rockseg::Error& e) {
        std::cerr << "error [" << rockseg::to_string(e.code()) << "]: " << e.what() << "\n";
        return 2;
    } catch (const CLI::Error& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
