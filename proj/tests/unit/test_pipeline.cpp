#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "phantoms.hpp"
#include "rockseg/clustering.hpp"
#include "rockseg/error.hpp"
#include "rockseg/hash.hpp"
#include "rockseg/io.hpp"
#include "rockseg/petrophysics.hpp"
#include "rockseg/pipeline.hpp"

#include <omp.h>

#include <random>

using namespace rockseg;
namespace fs = std::filesystem;

namespace {

// Sphere-pack intensities: pores dark, matrix bright, both noisy.
VoxelVolume pack_intensities(std::size_t n, std::uint64_t seed) {
    const auto pack = test::sphere_pack(n, seed, 10, 3, 7, false);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0, 400);
    std::vector<std::uint16_t> v(pack.labels.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = static_cast<std::uint16_t>(std::lround((pack.labels.labels()[i] == 1 ? 8000 : 30000) + g(rng)));
    return VoxelVolume(pack.labels.dims(), 16, 1.0, std::move(v));
}

Error error_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e;
    }
    FAIL("no error raised");
    return Error(ErrorCode::io, "");
}

Json load_stage(std::size_t n) { return {{"op", "load_raw"}, {"path", "vol.raw"}, {"dims", {n, n, n}}}; }

}  // namespace

TEST_CASE("load, kmeans, porosity matches the library call") {
    test::TempDir dir("pipe");
    const auto vol = pack_intensities(40, 2);
    export_raw(vol, dir.path / "vol.raw");
    const Json doc = {{"output_dir", "out"},
                      {"stages",
                       {load_stage(40),
                        {{"op", "kmeans"}, {"k", 3}},
                        {{"op", "porosity"}, {"pore_class", 1}},
                        {{"op", "export"}, {"artifact", "kmeans.porosity"}, {"format", "csv"}, {"path", "porosity.csv"}}}}};
    const auto cfg = parse_run_config(doc, dir.path, "config");
    const auto run = execute(cfg);

    KmeansConfig k;
    k.k = 3;
    const auto lib = kmeans_segment(vol, k);
    const auto expect = analyze(lib.labels, AnalysisOp::porosity, {});
    CHECK(read_file(dir.path / "out" / "porosity.csv") == to_csv(expect.table));
    CHECK(run.workspace.reports.at("kmeans.porosity").at("porosity").get<double>() == porosity(lib.labels, 1));
    CHECK(artifact_hash(*run.workspace.labels.at("kmeans")) == artifact_hash(lib.labels));

    // Manifest on disk.
    const Json m = Json::parse(read_file(dir.path / "out" / "manifest.json"));
    CHECK(m.at("format") == "rockseg-manifest");
    CHECK(m.at("stages").size() == 4);
    CHECK(m.at("stages")[0].at("inputs")[0].at("sha256") == sha256_file(dir.path / "vol.raw"));
    CHECK(m.at("stages")[3].at("files")[0].at("sha256") == sha256_hex(to_csv(expect.table)));
    // Defaults are recorded.
    CHECK(m.at("stages")[1].at("stage").at("seed") == 42);
}

TEST_CASE("config validation") {
    test::TempDir dir("cfg");
    auto e = error_of([&] { parse_run_config({{"stages", Json::array()}}, dir.path, "run.json"); });
    CHECK(e.code() == ErrorCode::validation);
    CHECK(std::string(e.what()).find("empty stage list") != std::string::npos);

    e = error_of([&] { parse_run_config({{"stages", {{{"op", "kmeans"}, {"kk", 3}}}}}, dir.path, "run.json"); });
    CHECK(e.code() == ErrorCode::validation);
    CHECK(std::string(e.what()).find("stages[0].kk") != std::string::npos);

    e = error_of([&] { parse_run_config({{"stages", {{{"op", "kmeans"}, {"k", "three"}}}}}, dir.path, "run.json"); });
    CHECK(std::string(e.what()).find("stages[0].k") != std::string::npos);

    e = error_of([&] { parse_run_config({{"stages", {{{"op", "blur"}}}}}, dir.path, "run.json"); });
    CHECK(std::string(e.what()).find("unknown operation") != std::string::npos);

    e = error_of([&] { parse_run_config({{"stages", {{{"op", "kmeans"}}}}, {"extra", 1}}, dir.path, "run.json"); });
    CHECK(e.code() == ErrorCode::validation);

    e = error_of([&] {
        parse_run_config({{"stages", {{{"op", "export"}, {"artifact", "volume"}, {"format", "raw"}, {"path", "../x.raw"}}}}},
                         dir.path, "run.json");
    });
    CHECK(e.code() == ErrorCode::validation);

    write_file(dir.path / "bad.json", "{not json");
    CHECK(error_of([&] { load_run_config(dir.path / "bad.json"); }).code() == ErrorCode::validation);
    CHECK(normalize_stage({{"op", "nlm"}}, "s").at("search_window") == 21);
}

TEST_CASE("stage errors name the stage") {
    test::TempDir dir("stage");
    export_raw(pack_intensities(20, 1), dir.path / "vol.raw");
    const Json doc = {{"stages", {load_stage(20), {{"op", "crop"}, {"roi", {10, 0, 0, 20, 5, 5}}}}}};
    const auto e = error_of([&] { execute(parse_run_config(doc, dir.path, "c")); });
    CHECK(e.code() == ErrorCode::bounds);
    CHECK(std::string(e.what()).find("stage 1 (crop)") != std::string::npos);

    const Json missing = {{"stages", {{{"op", "load_raw"}, {"path", "nope.raw"}, {"dims", {2, 2, 2}}}}}};
    CHECK(error_of([&] { execute(parse_run_config(missing, dir.path, "c")); }).code() == ErrorCode::io);
}

TEST_CASE("figure-2 style workflow in one config") {
    test::TempDir dir("fig2");
    export_raw(pack_intensities(48, 3), dir.path / "vol.raw");
    const Json doc = {{"stages",
                       {load_stage(48),
                        {{"op", "crop"}, {"roi", {4, 4, 4, 40, 40, 40}}},
                        {{"op", "kmeans"}, {"k", 2}},
                        {{"op", "porosity"}},
                        {{"op", "psd"}, {"voxel_size", 2.0}},
                        {{"op", "fractions"}},
                        {{"op", "trend"}},
                        {{"op", "rev"}},
                        {{"op", "export"}, {"artifact", "kmeans"}, {"format", "vtk"}, {"path", "labels.vtk"}}}}};
    const auto run = execute(parse_run_config(doc, dir.path, "fig2"));
    const auto& ws = run.workspace;
    for (const char* t : {"kmeans.porosity", "kmeans.psd", "kmeans.fractions", "kmeans.trend", "kmeans.rev"})
        CHECK(ws.tables.count(t) == 1);
    const auto& labels = *ws.labels.at("kmeans");
    CHECK(labels.dims() == Dims{40, 40, 40});
    CHECK(ws.reports.at("kmeans.psd").at("region_count").get<std::size_t>() == ws.tables.at("kmeans.psd").rows.size());
    CHECK(fs::exists(run.manifest.at("output_dir").get<std::string>() + "/labels.vtk"));
}

TEST_CASE("replay reproduces hashes across thread counts") {
    test::TempDir dir("replay");
    export_raw(pack_intensities(32, 4), dir.path / "vol.raw");
    const Json doc = {{"output_dir", "out"},
                      {"stages",
                       {load_stage(32),
                        {{"op", "nlm"}, {"search_window", 5}, {"neighborhood", 3}},
                        {{"op", "ad"}},
                        {{"op", "fcm"}, {"c", 2}},
                        {{"op", "kmeans"}, {"k", 3}, {"name", "k3"}},
                        {{"op", "training_table"},
                         {"rows", {{{"class", 1}, {"feature", "pore"}, {"x", 5}, {"y", 5}, {"slice", 2}},
                                   {{"class", 2}, {"feature", "matrix"}, {"x", 20}, {"y", 20}, {"slice", 2}},
                                   {{"class", 1}, {"feature", "pore"}, {"x", 6}, {"y", 5}, {"slice", 2}},
                                   {{"class", 2}, {"feature", "matrix"}, {"x", 21}, {"y", 20}, {"slice", 2}}}}},
                        {{"op", "train"}, {"method", "bagging"}, {"n_learners", 5}},
                        {{"op", "classify"}},
                        {{"op", "psd"}, {"labels", "k3"}},
                        {{"op", "export"}, {"artifact", "k3"}, {"format", "raw"}, {"path", "k3.raw"}}}}};
    omp_set_num_threads(1);
    execute(parse_run_config(doc, dir.path, "c"));
    const fs::path manifest = dir.path / "out" / "manifest.json";
    omp_set_num_threads(4);
    const auto r = replay(manifest);
    CHECK(r.identical);
    for (const auto& m : r.mismatches) MESSAGE(m);
    CHECK(fs::exists(dir.path / "out" / "replay" / "k3.raw"));

    // A recorded output hash that no longer matches is reported.
    Json m = Json::parse(read_file(manifest));
    m["stages"][4]["artifacts"][0]["sha256"] = std::string(64, '0');
    write_file(dir.path / "tampered.json", m.dump(2));
    const auto t = replay(dir.path / "tampered.json", dir.path / "t");
    CHECK_FALSE(t.identical);
    REQUIRE(t.mismatches.size() == 1);
    CHECK(t.mismatches[0].find("stage 4 (kmeans)") != std::string::npos);

    // Changed input is caught before anything runs.
    auto raw = read_file(dir.path / "vol.raw");
    raw[0] ^= 1;
    write_file(dir.path / "vol.raw", raw);
    const auto c = replay(manifest, dir.path / "c");
    CHECK_FALSE(c.identical);
    CHECK(c.mismatches.at(0).find("changed") != std::string::npos);
    CHECK_FALSE(fs::exists(dir.path / "c"));
}

TEST_CASE("exports") {
    Workspace ws;
    ws.volume = std::make_shared<const VoxelVolume>(VoxelVolume({2, 1, 1}, 16, 1.0, {1, 258}));
    auto p = export_artifact(ws, {"volume", "raw", "binary", "big"});
    CHECK(p.bytes == std::string("\x00\x01\x01\x02", 4));
    p = export_artifact(ws, {"volume", "vtk", "ascii"});
    CHECK(p.bytes == to_vtk(*ws.volume, VtkEncoding::ascii));
    CHECK(error_of([&] { export_artifact(ws, {"volume", "csv"}); }).code() == ErrorCode::validation);
    CHECK(error_of([&] { export_artifact(ws, {"nothing", "raw"}); }).code() == ErrorCode::validation);
    ws.reports["r"] = Json{{"a", 1}};
    CHECK(export_artifact(ws, {"r", "json"}).bytes.find("\"a\"") != std::string::npos);
}

TEST_CASE("analysis entry point") {
    const auto pack = test::sphere_pack(30, 9, 6, 3, 6);
    const auto por = analyze(pack.labels, AnalysisOp::porosity, {});
    CHECK(por.json.at("porosity").get<double>() == porosity(pack.labels, 1));
    const auto fr = analyze(pack.labels, AnalysisOp::fractions, {});
    CHECK(fr.table.rows.size() == 2);
    CHECK(parse_analysis_op("psd") == AnalysisOp::psd);
    CHECK_THROWS_AS(parse_analysis_op("volume"), Error);
    CHECK(default_rev_edges({30, 40, 50}).back() == 30);
    CHECK(default_rev_edges({30, 40, 50}).size() == 10);
}
