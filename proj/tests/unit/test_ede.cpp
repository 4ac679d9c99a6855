#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "phantoms.hpp"
#include "rockseg/clustering.hpp"
#include "rockseg/ede.hpp"
#include "rockseg/error.hpp"

#include <random>

using namespace rockseg;

namespace {

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no error raised");
    return ErrorCode::io;
}

std::vector<std::size_t> spread_slices(std::size_t n) {
    std::vector<std::size_t> s;
    for (std::size_t i = 0; i < 8; ++i) s.push_back(n * (2 * i + 1) / 16);
    return s;
}

}  // namespace

TEST_CASE("phase map") {
    const auto d = PhaseMap::defaults();
    CHECK(d.str() == "noise=0,edl=1-2,brine=1-3,quartz=4,edh=5,hydrate=6-7");
    CHECK(PhaseMap::parse("default").str() == d.str());
    const auto p = PhaseMap::parse(d.str());
    REQUIRE(p.find("hydrate"));
    CHECK(p.find("hydrate")->lo == 6);
    CHECK(p.find("hydrate")->hi == 7);
    const auto warnings = d.validate();
    CHECK(!warnings.empty());
    CHECK(code_of([] { PhaseMap::parse("noise=0,noise=1").validate(); }) == ErrorCode::parameter);
    CHECK(code_of([] { PhaseMap::parse("brine=3-1").validate(); }) == ErrorCode::parameter);
    CHECK(code_of([] { PhaseMap::parse("brine"); }) == ErrorCode::parameter);
}

TEST_CASE("phase stats on a toy where raw equals the labels") {
    std::vector<std::uint8_t> lab;
    std::vector<std::uint16_t> raw;
    for (int l = 0; l <= 7; ++l)
        for (int i = 0; i < 5; ++i) {
            lab.push_back(static_cast<std::uint8_t>(l));
            raw.push_back(static_cast<std::uint16_t>(l));
        }
    const Dims d{40, 1, 1};
    const auto map = PhaseMap::parse("noise=0,edl=1,brine=2-3,quartz=4,edh=5,hydrate=6-7");
    const auto st = phase_index_stats(VoxelVolume(d, 16, 1, raw), LabelVolume(d, 1, lab, 7), map);
    CHECK(st.get("quartz").mean == 4);
    CHECK(st.get("quartz").std == 0);
    CHECK(st.get("edh").mean == 5);
    CHECK(st.get("brine").mean == 2.5);
    CHECK(st.get("brine").count == 10);
    CHECK(st.get("noise").bin_counts.size() == 10);
    CHECK(st.get("edh").bin_counts.size() == 10);
    CHECK(st.get("quartz").bin_counts.size() == 100);
    for (const auto& p : st.phases) {
        std::size_t total = 0;
        for (auto c : p.bin_counts) total += c;
        CHECK(total == p.count);
        CHECK(p.min <= p.mean);
        CHECK(p.mean <= p.max);
    }
    CHECK(st.overlaps.empty());
    CHECK(code_of([&] { phase_index_stats(VoxelVolume({2, 1, 1}, 16, 1, {1, 2}), LabelVolume(d, 1, lab, 7), map); }) ==
          ErrorCode::dimension_mismatch);
}

TEST_CASE("phase stats recover generator means") {
    std::mt19937_64 rng(1);
    const double means[4] = {10000, 20000, 30000, 40000}, sd = 500;
    std::vector<std::uint8_t> lab(40000);
    std::vector<std::uint16_t> raw(40000);
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const int c = static_cast<int>(i % 4);
        lab[i] = static_cast<std::uint8_t>(c + 1);
        raw[i] = static_cast<std::uint16_t>(std::lround(std::normal_distribution<double>(means[c], sd)(rng)));
    }
    const Dims d{200, 200, 1};
    const auto st = phase_index_stats(VoxelVolume(d, 16, 1, raw), LabelVolume(d, 1, lab, 4),
                                      PhaseMap::parse("a=1,b=2,c=3,e=4"));
    for (int c = 0; c < 4; ++c) {
        const auto& p = st.phases[static_cast<std::size_t>(c)];
        double direct = 0;
        for (std::size_t i = static_cast<std::size_t>(c); i < raw.size(); i += 4) direct += raw[i];
        CHECK(p.mean == doctest::Approx(direct / 10000).epsilon(1e-12));
        CHECK(std::abs(p.mean - means[c]) <= 2 * sd / std::sqrt(10000.0));
        CHECK(std::abs(p.skewness) < 0.1);
    }
}

TEST_CASE("rescale by range map") {
    // Four disjoint bands; edh takes the quartz mean.
    std::vector<std::uint16_t> raw;
    std::vector<std::uint8_t> lab;
    const std::uint16_t bands[4][3] = {{100, 110, 120}, {200, 210, 220}, {300, 301, 302}, {400, 450, 500}};
    for (int b = 0; b < 4; ++b)
        for (auto v : bands[b]) {
            raw.push_back(v);
            lab.push_back(static_cast<std::uint8_t>(b + 1));
        }
    raw.push_back(0);
    lab.push_back(0);
    const Dims d{raw.size(), 1, 1};
    const VoxelVolume v(d, 16, 1, raw);
    const auto map = PhaseMap::parse("noise=0,brine=1,quartz=2,edh=3,hydrate=4");
    const auto st = phase_index_stats(v, LabelVolume(d, 1, lab, 4), map);
    const auto out = rescale_phases(v, st);
    // Direct range map oracle.
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const auto x = raw[i];
        std::uint16_t want = x;
        if (x >= 100 && x <= 120) want = 110;
        else if (x >= 200 && x <= 220) want = 210;
        else if (x >= 300 && x <= 302) want = 210;
        else if (x >= 400 && x <= 500) want = 450;
        CHECK(out.data()[i] == want);
    }
    CHECK(rescale_phases(out, st) == out);

    // Only in-range brine intensities: constant output.
    const VoxelVolume brine_only({3, 1, 1}, 16, 1, {100, 120, 110});
    const auto c = rescale_phases(brine_only, st);
    for (auto x : c.data()) CHECK(x == 110);

    // Colliding ranges.
    raw.back() = 215;
    lab.back() = 3;
    const VoxelVolume bad(d, 16, 1, raw);
    const auto st2 = phase_index_stats(bad, LabelVolume(d, 1, lab, 4), map);
    try {
        rescale_phases(bad, st2);
        FAIL("no overlap error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::range_overlap);
        CHECK(std::string(e.what()).find("quartz") != std::string::npos);
        CHECK(std::string(e.what()).find("edh") != std::string::npos);
    }
}

TEST_CASE("rescale conserves phase counts on the halo phantom") {
    const auto p = test::halo_phantom(48, 11);
    EdeConfig cfg;
    cfg.seg_slices = spread_slices(48);
    cfg.restarts = 30;
    const auto r = dual_cluster_pipeline(p.raw, cfg);
    for (const char* name : {"brine", "quartz", "hydrate"}) {
        const auto& s = r.stats.get(name);
        std::size_t before = 0, after_at_mean = 0;
        for (std::size_t i = 0; i < p.raw.size(); ++i)
            if (p.raw.data()[i] >= s.min && p.raw.data()[i] <= s.max) {
                ++before;
                after_at_mean += r.rescaled.data()[i] == std::lround(s.mean);
            }
        CHECK(before == after_at_mean);
    }
}

TEST_CASE("no halo: pipeline equals plain three-class kmeans") {
    std::mt19937_64 rng(5);
    const Dims d{40, 40, 4};
    std::vector<std::uint16_t> v(d.count());
    // Brine, quartz and hydrate bands only.
    for (auto& x : v) {
        const auto u = rng() % 100;
        x = static_cast<std::uint16_t>(u < 50 ? 9000 + rng() % 1414 : u < 75 ? 19500 + rng() % 1000 : 29500 + rng() % 1000);
    }
    const VoxelVolume raw(d, 16, 1, v);
    EdeConfig cfg;
    cfg.seg_slices = {0, 1, 2, 3};
    cfg.restarts = 100;
    const auto r = dual_cluster_pipeline(raw, cfg);
    KmeansConfig k;
    k.k = 3;
    const auto plain = kmeans_segment(raw, k);
    CHECK(std::equal(r.final_labels.labels().begin(), r.final_labels.labels().end(), plain.labels.labels().begin()));

    // Step 6 output has exactly final_k classes.
    std::set<int> seen(r.final_labels.labels().begin(), r.final_labels.labels().end());
    CHECK(seen == std::set<int>{1, 2, 3});
}

TEST_CASE("halo phantom: rings are absorbed") {
    const std::size_t n = 96;
    const auto p = test::halo_phantom(n);
    EdeConfig cfg;
    cfg.seg_slices = spread_slices(n);
    cfg.restarts = 50;
    const auto r = dual_cluster_pipeline(p.raw, cfg);
    KmeansConfig k3;
    k3.k = 3;
    k3.restarts = 50;
    const auto direct = kmeans_segment(p.raw, k3);

    std::size_t outside = 0, outside_ok = 0, halo = 0, halo_pipe = 0, halo_direct = 0;
    for (std::size_t i = 0; i < p.truth.size(); ++i) {
        if (!p.truth[i]) {
            CHECK(r.final_labels.labels()[i] == 0);
            continue;
        }
        const int got = r.final_labels.labels()[i];
        if (p.halo[i]) {
            ++halo;
            halo_pipe += got != p.truth[i];
            halo_direct += direct.labels.labels()[i] != p.truth[i];
        } else {
            ++outside;
            outside_ok += got == p.truth[i];
        }
        // Ring voxels land in quartz or brine.
        if (p.ring[i]) CHECK((got == 1 || got == 2));
    }
    CHECK(static_cast<double>(outside_ok) / outside >= 0.99);
    CHECK(halo_pipe < halo_direct);
    // No final class sits between the quartz and hydrate means.
    REQUIRE(r.final_centers.size() == 3);
    const double q = r.stats.get("quartz").mean, h = r.stats.get("hydrate").mean;
    for (double c : r.final_centers) CHECK_FALSE((c > q + 500 && c < h - 500));
    CHECK(!r.advisory.empty());
}

TEST_CASE("config validation") {
    EdeConfig cfg;
    CHECK(code_of([&] { cfg.validate({4, 4, 1}); }) == ErrorCode::bounds);
    cfg.seg_slices.clear();
    CHECK(code_of([&] { cfg.validate({4, 4, 4}); }) == ErrorCode::parameter);
    cfg.seg_slices = {0};
    cfg.map = PhaseMap::parse("brine=1-3,quartz=4,hydrate=6-7");
    CHECK(code_of([&] { cfg.validate({4, 4, 4}); }) == ErrorCode::parameter);
    CHECK(gather_slices(test::random_volume({3, 3, 4}, 0, 9, 1), {3, 1}).nz() == 2);
}
