#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "phantoms.hpp"
#include "rockseg/clustering.hpp"
#include "rockseg/error.hpp"

#include <omp.h>
#include <random>

using namespace rockseg;

namespace {

VoxelVolume line(const std::vector<std::uint16_t>& v) { return VoxelVolume({v.size(), 1, 1}, 16, 1.0, v); }

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no error raised");
    return ErrorCode::io;
}

// Two separated blobs, values around 10000 and 30000.
VoxelVolume blobs(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> a(10000, 300), b(30000, 300);
    std::vector<std::uint16_t> v(2000);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<std::uint16_t>(std::lround(i % 3 ? a(rng) : b(rng)));
    return VoxelVolume({40, 50, 1}, 16, 1.0, v);
}

}  // namespace

TEST_CASE("kmeans trivial and documented partitions") {
    const auto c = line({7, 7, 7, 7});
    auto r = kmeans_segment(c, {1});
    CHECK(r.centers == std::vector<double>{7});
    CHECK(r.objective == 0);
    for (auto l : r.labels.labels()) CHECK(l == 1);

    KmeansConfig two;
    two.k = 2;
    r = kmeans_segment(line({10, 11, 12, 100, 101, 102}), two);
    CHECK(r.centers == std::vector<double>{11, 101});
    const std::vector<std::uint8_t> want{1, 1, 1, 2, 2, 2};
    CHECK(std::equal(want.begin(), want.end(), r.labels.labels().begin()));
    CHECK(r.objective == doctest::Approx(test::exhaustive_wcss({10, 11, 12, 100, 101, 102}, 2)));
}

TEST_CASE("kmeans attains the exhaustive optimum") {
    std::mt19937_64 rng(123);
    for (int inst = 0; inst < 40; ++inst) {
        const int n = 4 + static_cast<int>(rng() % 8);
        const int k = 1 + static_cast<int>(rng() % 3);
        std::vector<std::uint16_t> v(static_cast<std::size_t>(n));
        for (auto& x : v) x = static_cast<std::uint16_t>(1 + rng() % 1000);
        std::vector<double> pts(v.begin(), v.end());
        std::sort(pts.begin(), pts.end());
        if (std::unique(pts.begin(), pts.end()) - pts.begin() < k) continue;
        KmeansConfig cfg;
        cfg.k = k;
        cfg.restarts = 10;
        cfg.seed = rng();
        const auto r = kmeans_segment(line(v), cfg);
        CHECK(r.objective == doctest::Approx(test::exhaustive_wcss(std::vector<double>(v.begin(), v.end()), k)).epsilon(1e-9));
    }
}

TEST_CASE("kmeans masking, ordering and fixed point") {
    const auto v = test::random_volume({20, 20, 3}, 0, 3000, 5);
    KmeansConfig cfg;
    cfg.k = 4;
    cfg.mask_threshold = 500;
    const auto r = kmeans_segment(v, cfg);
    for (std::size_t i = 1; i < r.centers.size(); ++i) CHECK(r.centers[i - 1] < r.centers[i]);
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double x = v.data()[i];
        const int l = r.labels.labels()[i];
        if (x <= 500) {
            CHECK(l == 0);
            continue;
        }
        REQUIRE(l >= 1);
        // Reassignment changes nothing.
        double best = 1e300;
        int arg = 0;
        for (int c = 0; c < 4; ++c) {
            const double d = (x - r.centers[static_cast<std::size_t>(c)]) * (x - r.centers[static_cast<std::size_t>(c)]);
            if (d < best) best = d, arg = c + 1;
        }
        CHECK(l == arg);
    }
    // Dropping masked voxels leaves the centres bit-identical.
    std::vector<std::uint16_t> kept;
    for (auto x : v.data())
        if (x > 500) kept.push_back(x);
    const auto r2 = kmeans_segment(line(kept), cfg);
    CHECK(r2.centers == r.centers);
}

TEST_CASE("kmeans objective history and lloyd") {
    Histogram h{{1, 2, 3, 10, 11, 12, 30}, {5, 1, 2, 3, 3, 1, 4}};
    const auto out = lloyd(h, {1, 2, 3}, Distance::sq_euclidean, 100, 0.5);
    for (std::size_t i = 1; i < out.objective_history.size(); ++i)
        CHECK(out.objective_history[i] <= out.objective_history[i - 1] + 1e-9);
    CHECK(h.total() == 19);
}

TEST_CASE("kmeans errors and distances") {
    CHECK(code_of([] { kmeans_segment(line({5, 5, 6}), {3}); }) == ErrorCode::infeasible);
    CHECK(code_of([] { KmeansConfig c; c.k = 0; c.validate(); }) == ErrorCode::parameter);
    CHECK(code_of([] { KmeansConfig c; c.k = 2; c.initial_centers = {1}; c.validate(); }) == ErrorCode::parameter);
    CHECK(parse_distance("cityblock") == Distance::manhattan);
    CHECK(parse_distance("mandist") == Distance::manhattan);
    CHECK(parse_distance("box") == Distance::chebyshev);
    CHECK(parse_distance("sqeuclidean") == Distance::sq_euclidean);
    CHECK(code_of([] { parse_distance("link"); }) == ErrorCode::parameter);

    // Manhattan centres are weighted medians.
    KmeansConfig m;
    m.k = 2;
    m.distance = Distance::manhattan;
    m.initial_centers = {1, 100};
    const auto r = kmeans_segment(line({1, 2, 9, 100, 101, 150}), m);
    CHECK(r.centers == std::vector<double>{2, 101});
}

TEST_CASE("kmeans is deterministic across thread counts") {
    const auto v = test::random_volume({30, 30, 8}, 0, 20000, 21);
    KmeansConfig cfg;
    cfg.k = 5;
    omp_set_num_threads(1);
    const auto a = kmeans_segment(v, cfg);
    omp_set_num_threads(4);
    const auto b = kmeans_segment(v, cfg);
    CHECK(a.labels == b.labels);
    CHECK(a.centers == b.centers);
}

TEST_CASE("fcm memberships and agreement with kmeans") {
    const auto v = blobs(3);
    FcmConfig f;
    f.c = 2;
    const auto r = fcm_segment(v, f);
    for (std::size_t i = 1; i < r.objective_history.size(); ++i)
        CHECK(r.objective_history[i] <= r.objective_history[i - 1] * (1 + 1e-12));
    for (std::size_t i = 0; i < v.size(); i += 37) {
        const auto u = r.memberships(v, i);
        REQUIRE(u.size() == 2);
        CHECK(u[0] + u[1] == doctest::Approx(1.0).epsilon(1e-9));
    }
    KmeansConfig k;
    k.k = 2;
    const auto km = kmeans_segment(v, k);
    CHECK(r.labels == km.labels);
    f.m = 1.05;
    CHECK(fcm_segment(v, f).labels == km.labels);

    // Spikes: one-hot memberships at the spike values.
    const auto spikes = line({100, 100, 200, 200, 300, 300});
    FcmConfig s;
    s.c = 3;
    const auto rs = fcm_segment(spikes, s);
    for (std::size_t c = 0; c < 3; ++c) CHECK(rs.centers[c] == doctest::Approx(100.0 * (c + 1)).epsilon(1e-6));
    const auto u = rs.memberships(spikes, 2);
    CHECK(u[1] == doctest::Approx(1.0).epsilon(1e-9));

    CHECK(code_of([] { FcmConfig c; c.m = 2.5; c.validate(); }) == ErrorCode::parameter);
    CHECK(code_of([] { FcmConfig c; c.m = 1.0; c.validate(); }) == ErrorCode::parameter);
    CHECK(code_of([&] { FcmConfig c; c.c = 4; fcm_segment(line({1, 2, 3}), c); }) == ErrorCode::infeasible);
}

TEST_CASE("kmeans points") {
    KmeansConfig cfg;
    cfg.k = 2;
    const auto p = kmeans_points({0, 1, 2, 3, 50, 52}, cfg);
    CHECK(p.labels == std::vector<int>{0, 1, 1, 1, 2, 2});
    CHECK(p.centers == std::vector<double>{2, 51});
}
