#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "phantoms.hpp"
#include "rockseg/error.hpp"
#include "rockseg/hash.hpp"
#include "rockseg/io.hpp"
#include "rockseg/petrophysics.hpp"
#include "rockseg/render.hpp"
#include "rockseg/service.hpp"
#include "rockseg/supervised.hpp"

#include <httplib.h>

#include <random>
#include <thread>

using namespace rockseg;
using namespace std::chrono_literals;

namespace {

VoxelVolume pack_intensities(std::size_t n, std::uint64_t seed) {
    const auto pack = test::sphere_pack(n, seed, 10, 3, 7, false);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0, 500);
    std::vector<std::uint16_t> v(pack.labels.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = static_cast<std::uint16_t>(std::lround((pack.labels.labels()[i] == 1 ? 9000 : 30000) + g(rng)));
    return VoxelVolume(pack.labels.dims(), 16, 1.0, std::move(v));
}

ApiError api_error(auto&& fn) {
    try {
        fn();
    } catch (const ApiError& e) {
        return e;
    }
    FAIL("no ApiError raised");
    return ApiError(0, "", "");
}

// Live server on an ephemeral loopback port.
struct LiveServer {
    Service svc;
    HttpServer http{svc};
    int port = 0;
    std::thread thread;

    explicit LiveServer(const std::filesystem::path& dir) : svc(dir) {
        port = http.bind("127.0.0.1", 0);
        thread = std::thread([this] { http.listen(); });
    }
    ~LiveServer() {
        http.stop();
        thread.join();
    }
    httplib::Client client() const {
        httplib::Client c("127.0.0.1", port);
        c.set_read_timeout(60, 0);
        return c;
    }
};

Json json_of(const httplib::Result& r) {
    REQUIRE(r);
    return Json::parse(r->body);
}

Json wait_done(httplib::Client& c, const std::string& id) {
    for (int i = 0; i < 6000; ++i) {
        const Json j = json_of(c.Get(("/jobs/" + id).c_str()));
        const auto st = j.at("state").get<std::string>();
        if (st == "done" || st == "failed" || st == "cancelled") return j;
        std::this_thread::sleep_for(10ms);
    }
    FAIL("job did not finish");
    return {};
}

}  // namespace

TEST_CASE("HTTP round trip matches the library") {
    test::TempDir dir("svc");
    const auto vol = pack_intensities(40, 5);
    export_raw(vol, dir.path / "vol.raw");
    LiveServer live(dir.path);
    auto c = live.client();

    auto r = c.Post("/volume", Json{{"path", "vol.raw"}, {"dims", {40, 40, 40}}}.dump(), "application/json");
    REQUIRE(r);
    CHECK(r->status == 201);
    const std::string sid = json_of(r).at("session");
    const std::string q = "?session=" + sid;

    const Roi roi{5, 6, 7, 30, 28, 26};
    r = c.Put(("/roi" + q).c_str(), Json{{"x0", 5}, {"y0", 6}, {"z0", 7}, {"dx", 30}, {"dy", 28}, {"dz", 26}}.dump(),
              "application/json");
    CHECK(r->status == 200);

    // Pick training voxels from the known intensities, in volume coordinates.
    Json rows = Json::array();
    TrainingTable expect_table;
    int pores = 0, matrix = 0;
    for (long z = 10; z < 30 && (pores < 6 || matrix < 6); z += 3)
        for (long y = 8; y < 32 && (pores < 6 || matrix < 6); y += 2)
            for (long x = 7; x < 33; x += 5) {
                const bool pore = vol.at(x, y, z) < 15000;
                int& n = pore ? pores : matrix;
                if (n >= 6) continue;
                ++n;
                const int cls = pore ? 1 : 2;
                rows.push_back({{"class", cls}, {"feature", pore ? "pore" : "matrix"}, {"x", x}, {"y", y}, {"slice", z}});
                expect_table.rows.push_back({cls, pore ? "pore" : "matrix", x - 5, y - 6, z - 7});
            }
    REQUIRE(pores == 6);
    REQUIRE(matrix == 6);
    r = c.Put(("/training-table" + q).c_str(), Json{{"rows", rows}}.dump(), "application/json");
    REQUIRE(r);
    CHECK(r->status == 200);

    r = c.Post(("/jobs" + q).c_str(), Json{{"kind", "classify"}, {"params", {{"method", "lssvm"}}}}.dump(),
               "application/json");
    CHECK(r->status == 202);
    const Json job = wait_done(c, json_of(r).at("job"));
    REQUIRE(job.at("state") == "done");
    CHECK(job.at("progress") == 1.0);

    const Json por = json_of(c.Get(("/metrics/classified" + q + "&op=porosity").c_str()));

    // Same steps through the library.
    const auto cropped = crop(vol, roi);
    const auto model = train_lssvm(extract_features(cropped, expect_table), LssvmParams{});
    const auto labels = classify_volume(Model(model), cropped);
    CHECK(por.at("porosity").get<double>() == porosity(labels, 1));

    r = c.Get(("/export/classified" + q + "&format=raw").c_str());
    REQUIRE(r);
    CHECK(sha256_hex(r->body) == sha256_hex(std::string(labels.labels().begin(), labels.labels().end())));

    r = c.Get(("/export/classified" + q + "&format=csv&op=porosity").c_str());
    CHECK(r->body == to_csv(analyze(labels, AnalysisOp::porosity, {}).table));

    // The job manifest replays to the same artifacts.
    const auto rep = replay(job.at("manifest").get<std::string>(), dir.path / "rep");
    CHECK(rep.identical);
    for (const auto& m : rep.mismatches) MESSAGE(m);

    const Json info = json_of(c.Get(("/session" + q).c_str()));
    CHECK(info.at("model") == true);
    CHECK(info.at("roi").at("dx") == 30);
}

TEST_CASE("HTTP errors") {
    test::TempDir dir("svcerr");
    const VoxelVolume flat({16, 16, 4}, 16, 1.0, std::vector<std::uint16_t>(1024, 777));
    export_raw(flat, dir.path / "flat.raw");
    LiveServer live(dir.path);
    auto c = live.client();
    const std::string sid =
        json_of(c.Post("/volume", Json{{"path", "flat.raw"}, {"dims", {16, 16, 4}}}.dump(), "application/json"))
            .at("session");
    const std::string q = "?session=" + sid;

    // Out-of-range training row is named.
    Json rows = {{{"class", 1}, {"x", 3}, {"y", 3}, {"slice", 0}}, {{"class", 2}, {"x", 16}, {"y", 3}, {"slice", 0}}};
    auto r = c.Put(("/training-table" + q).c_str(), Json{{"rows", rows}}.dump(), "application/json");
    REQUIRE(r);
    CHECK(r->status == 400);
    Json e = json_of(r);
    CHECK(e.at("error") == "coordinate");
    CHECK(e.at("field") == "body.rows[1].x");
    CHECK(e.at("message").get<std::string>().find("row 2") != std::string::npos);

    // Constant volume renders uniformly.
    r = c.Get(("/slice/2" + q + "&window=0,1554").c_str());
    REQUIRE(r);
    CHECK(r->status == 200);
    CHECK(r->get_header_value("Content-Type") == "image/png");
    const auto img = decode_png(r->body);
    CHECK(img.width == 16);
    CHECK(std::all_of(img.pixels.begin(), img.pixels.end(), [](auto p) { return p == 128; }));

    CHECK(c.Get(("/slice/4" + q).c_str())->status == 404);
    CHECK(c.Get(("/slice/0" + q + "&window=9").c_str())->status == 400);
    CHECK(c.Get("/session?session=nope")->status == 404);
    CHECK(c.Get("/jobs/nope")->status == 404);
    CHECK(c.Get(("/metrics/none" + q + "&op=porosity").c_str())->status == 404);
    CHECK(c.Post("/volume", "{bad", "application/json")->status == 400);
    CHECK(c.Post("/volume", Json{{"path", "../x.raw"}, {"dims", {1, 1, 1}}}.dump(), "application/json")->status == 400);
    CHECK(c.Post("/volume", Json{{"path", "missing.raw"}, {"dims", {1, 1, 1}}}.dump(), "application/json")->status ==
          404);

    // Two clusters on a single intensity are refused before queueing.
    r = c.Post(("/jobs" + q).c_str(), Json{{"kind", "segment"}, {"params", {{"k", 2}}}}.dump(), "application/json");
    CHECK(r->status == 422);
    CHECK(json_of(r).at("field") == "params.k");
    r = c.Post(("/jobs" + q).c_str(), Json{{"kind", "ede"}, {"params", {{"seg_slices", {9}}}}}.dump(), "application/json");
    CHECK(r->status == 422);
    r = c.Post(("/jobs" + q).c_str(), Json{{"kind", "classify"}}.dump(), "application/json");
    CHECK(r->status == 422);
    r = c.Post(("/jobs" + q).c_str(), Json{{"kind", "segment"}, {"params", {{"k", 0}}}}.dump(), "application/json");
    CHECK(r->status == 400);
    r = c.Post(("/jobs" + q).c_str(), Json{{"kind", "paint"}}.dump(), "application/json");
    CHECK(r->status == 400);

    // Contrast on a constant volume fails in the job, not the request.
    r = c.Post(("/jobs" + q).c_str(), Json{{"kind", "filter"}, {"params", {{"method", "contrast"}}}}.dump(),
               "application/json");
    REQUIRE(r->status == 202);
    const std::string id = json_of(r).at("job");
    const Json job = wait_done(c, id);
    CHECK(job.at("state") == "failed");
    CHECK(job.at("error").at("code") == "degenerate_histogram");
    r = c.Delete(("/jobs/" + id).c_str());
    CHECK(r->status == 409);
}

TEST_CASE("cancellation and progress") {
    test::TempDir dir("svccancel");
    export_raw(pack_intensities(64, 8), dir.path / "vol.raw");
    Service svc(dir.path);
    const std::string sid = svc.create_session({{"path", "vol.raw"}, {"dims", {64, 64, 64}}}).at("session");

    // A slow filter, then a quick segmentation queued behind it.
    const std::string slow =
        svc.submit_job(sid, {{"kind", "filter"}, {"params", {{"method", "nlm"}, {"search_window", 21}}}}).at("job");
    const std::string next = svc.submit_job(sid, {{"kind", "segment"}, {"params", {{"k", 2}}}}).at("job");
    CHECK(api_error([&] { svc.set_roi(sid, Json::array({0, 0, 0, 8, 8, 8})); }).status == 409);

    double last = 0;
    for (int i = 0; i < 2000; ++i) {
        const Json j = svc.job(slow);
        const double p = j.at("progress");
        CHECK(p >= last);
        last = p;
        if (p > 0.05) break;
        std::this_thread::sleep_for(5ms);
    }
    CHECK(last > 0);
    svc.cancel_job(slow);
    REQUIRE(svc.wait_job(slow, 30s));
    CHECK(svc.job(slow).at("state") == "cancelled");
    CHECK(api_error([&] { svc.cancel_job(slow); }).status == 409);

    REQUIRE(svc.wait_job(next, 60s));
    const Json done = svc.job(next);
    CHECK(done.at("state") == "done");
    // The cancelled filter left the session untouched.
    CHECK(svc.session_info(sid).at("layers") == Json::array({"raw", "labels"}));
    const auto hist = done.at("history");
    for (std::size_t i = 0; i < hist.size(); ++i) CHECK(hist[i].at("seq") == i);
}

TEST_CASE("roi and session validation") {
    test::TempDir dir("svcroi");
    export_raw(pack_intensities(20, 2), dir.path / "vol.raw");
    Service svc(dir.path);
    const std::string sid = svc.create_session({{"path", "vol.raw"}, {"dims", {20, 20, 20}}}).at("session");
    CHECK(api_error([&] { svc.set_roi(sid, Json::array({10, 0, 0, 11, 5, 5})); }).status == 400);
    CHECK(api_error([&] { svc.set_roi(sid, {{"x0", 0}}); }).field == "body.y0");
    CHECK(api_error([&] { svc.create_session({{"path", "vol.raw"}, {"dims", {20, 20, 20}}, {"format", "png"}}); })
              .field == "body.format");
    CHECK(api_error([&] { svc.metrics(sid, "x", {}); }).field == "op");
    CHECK(http_status(ErrorCode::infeasible) == 422);
    CHECK(http_status(ErrorCode::coordinate) == 400);
    CHECK(parse_bind_address(":8080") == std::pair<std::string, int>{"127.0.0.1", 8080});
    CHECK(parse_bind_address("0.0.0.0:1") == std::pair<std::string, int>{"0.0.0.0", 1});
    CHECK_THROWS_AS(parse_bind_address("host:x"), Error);

    // Training rows outside a new ROI drop the table.
    svc.set_training_table(sid, {{"rows", {{{"class", 1}, {"x", 1}, {"y", 1}, {"slice", 1}},
                                           {{"class", 2}, {"x", 15}, {"y", 15}, {"slice", 15}}}}});
    CHECK(svc.training_table(sid).at("rows").size() == 2);
    CHECK(svc.set_roi(sid, Json::array({0, 0, 0, 10, 10, 10})).at("training_table_dropped") == true);
    CHECK(svc.training_table(sid).at("rows").empty());
}
