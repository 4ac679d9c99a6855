#pragma once

#include "rockseg/volume.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace rockseg::test {

struct Sphere {
    double x, y, z, r;
};

// Labels 0 outside the inscribed cylinder (when masked), 1 inside any sphere,
// 2 elsewhere. Counts are tallied while painting.
struct SpherePack {
    LabelVolume labels;
    std::vector<Sphere> spheres;
    std::size_t masked = 0, pore = 0, matrix = 0;
};

inline bool in_cylinder(const Dims& d, std::size_t x, std::size_t y) {
    const double cx = (static_cast<double>(d.nx) - 1) / 2, cy = (static_cast<double>(d.ny) - 1) / 2;
    const double r = 0.48 * static_cast<double>(std::min(d.nx, d.ny));
    const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
    return dx * dx + dy * dy <= r * r;
}

inline SpherePack sphere_pack(std::size_t n, std::uint64_t seed, int count, double rmin, double rmax,
                              bool cylinder = true) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> pos(0.0, static_cast<double>(n) - 1);
    std::uniform_real_distribution<double> rad(rmin, rmax);
    SpherePack p;
    for (int i = 0; i < count; ++i) p.spheres.push_back({pos(rng), pos(rng), pos(rng), rad(rng)});
    const Dims d{n, n, n};
    std::vector<std::uint8_t> lab(d.count());
    for (std::size_t z = 0; z < n; ++z)
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x) {
                std::uint8_t v = 2;
                if (cylinder && !in_cylinder(d, x, y)) {
                    v = 0;
                } else {
                    for (const auto& s : p.spheres) {
                        const double dx = x - s.x, dy = y - s.y, dz = z - s.z;
                        if (dx * dx + dy * dy + dz * dz <= s.r * s.r) {
                            v = 1;
                            break;
                        }
                    }
                }
                (v == 0 ? p.masked : v == 1 ? p.pore : p.matrix)++;
                lab[d.index(x, y, z)] = v;
            }
    p.labels = LabelVolume(d, 1.0, std::move(lab), 2);
    return p;
}

// Digitized balls (label 1) on background 2.
inline LabelVolume balls(const Dims& d, const std::vector<Sphere>& spheres) {
    std::vector<std::uint8_t> lab(d.count(), 2);
    for (std::size_t z = 0; z < d.nz; ++z)
        for (std::size_t y = 0; y < d.ny; ++y)
            for (std::size_t x = 0; x < d.nx; ++x)
                for (const auto& s : spheres) {
                    const double dx = x - s.x, dy = y - s.y, dz = z - s.z;
                    if (dx * dx + dy * dy + dz * dz <= s.r * s.r) lab[d.index(x, y, z)] = 1;
                }
    return LabelVolume(d, 1.0, std::move(lab), 2);
}

// Phase intensities of the halo phantom (mean, sigma).
struct HaloLevels {
    double edl = 9000, edl_sd = 500;
    double brine = 15000, brine_sd = 400;
    double quartz = 21000, quartz_sd = 400;
    double edh = 29000, edh_sd = 300;
    double hydrate = 35000, hydrate_sd = 1400;
};

// Brine-filled cylinder with quartz grains and hydrate blobs. Grains carry a
// bright shell just inside their surface (truth: quartz) and a dark shell just
// outside (truth: brine). truth: 0 masked, 1 brine, 2 quartz, 3 hydrate.
// halo marks voxels within 2 voxels of a grain surface.
struct HaloPhantom {
    VoxelVolume raw;
    std::vector<std::uint8_t> truth;
    std::vector<std::uint8_t> halo;
    std::vector<std::uint8_t> ring;
};

inline HaloPhantom halo_phantom(std::size_t n, std::uint64_t seed = 7, const HaloLevels& lv = {}) {
    std::mt19937_64 rng(seed);
    const double N = static_cast<double>(n);
    std::uniform_real_distribution<double> pos(0.0, N - 1);
    std::uniform_real_distribution<double> grain_r(0.07 * N, 0.1 * N);
    std::uniform_real_distribution<double> blob_r(0.04 * N, 0.07 * N);
    const double shell = std::max(1.5, N / 128.0);

    std::vector<Sphere> grains, blobs;
    for (int i = 0; i < 100; ++i) grains.push_back({pos(rng), pos(rng), pos(rng), grain_r(rng)});
    // Hydrate blobs keep clear of grains and their shells.
    for (int tries = 0; blobs.size() < 200 && tries < 20000; ++tries) {
        const Sphere b{pos(rng), pos(rng), pos(rng), blob_r(rng)};
        bool clear = true;
        for (const auto& g : grains) {
            const double dx = b.x - g.x, dy = b.y - g.y, dz = b.z - g.z;
            if (std::sqrt(dx * dx + dy * dy + dz * dz) < b.r + g.r + 2 * shell + 2) clear = false;
        }
        if (clear) blobs.push_back(b);
    }

    const Dims d{n, n, n};
    // Signed distance to the grain union (negative inside), evaluated near
    // grains only; hydrate membership likewise.
    const double reach = shell + 3;
    std::vector<float> sdist(d.count(), std::numeric_limits<float>::infinity());
    std::vector<std::uint8_t> hyd(d.count(), 0);
    auto paint = [&](const Sphere& s, double margin, auto&& fn) {
        const auto lo = [&](double c) { return static_cast<std::size_t>(std::max(0.0, std::floor(c - s.r - margin))); };
        const auto hi = [&](double c) { return static_cast<std::size_t>(std::min(N - 1, std::ceil(c + s.r + margin))); };
        for (std::size_t z = lo(s.z); z <= hi(s.z); ++z)
            for (std::size_t y = lo(s.y); y <= hi(s.y); ++y)
                for (std::size_t x = lo(s.x); x <= hi(s.x); ++x) {
                    const double dx = x - s.x, dy = y - s.y, dz = z - s.z;
                    fn(d.index(x, y, z), std::sqrt(dx * dx + dy * dy + dz * dz) - s.r);
                }
    };
    for (const auto& g : grains)
        paint(g, reach, [&](std::size_t i, double v) { sdist[i] = std::min(sdist[i], static_cast<float>(v)); });
    for (const auto& b : blobs)
        paint(b, 0, [&](std::size_t i, double v) { if (v <= 0) hyd[i] = 1; });

    HaloPhantom p;
    p.truth.assign(d.count(), 0);
    p.halo.assign(d.count(), 0);
    p.ring.assign(d.count(), 0);
    std::vector<std::uint16_t> data(d.count(), 0);
    std::normal_distribution<double> unit(0.0, 1.0);
    auto draw = [&](double mean, double sd) {
        return static_cast<std::uint16_t>(std::clamp(std::lround(mean + sd * unit(rng)), 1L, 65535L));
    };
    for (std::size_t z = 0; z < n; ++z)
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x) {
                const std::size_t i = d.index(x, y, z);
                if (!in_cylinder(d, x, y)) continue;
                const double sd = sdist[i];
                p.halo[i] = std::abs(sd) <= 2.0 ? 1 : 0;
                if (sd <= 0) {
                    p.truth[i] = 2;
                    if (sd > -shell) {
                        p.ring[i] = 1;
                        data[i] = draw(lv.edh, lv.edh_sd);
                    } else {
                        data[i] = draw(lv.quartz, lv.quartz_sd);
                    }
                } else if (hyd[i]) {
                    p.truth[i] = 3;
                    data[i] = draw(lv.hydrate, lv.hydrate_sd);
                } else {
                    p.truth[i] = 1;
                    if (sd <= shell) {
                        p.ring[i] = 1;
                        data[i] = draw(lv.edl, lv.edl_sd);
                    } else {
                        data[i] = draw(lv.brine, lv.brine_sd);
                    }
                }
            }
    p.raw = VoxelVolume(d, 16, 1.0, std::move(data));
    return p;
}

// Independent white noise around a mean.
inline VoxelVolume white_noise(const Dims& d, double mean, double sd, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(mean, sd);
    std::vector<std::uint16_t> v(d.count());
    for (auto& x : v) x = static_cast<std::uint16_t>(std::clamp(std::lround(g(rng)), 0L, 65535L));
    return VoxelVolume(d, 16, 1.0, std::move(v));
}

// Two half-spaces split at x = nx / 2.
inline VoxelVolume step_volume(const Dims& d, std::uint16_t low, std::uint16_t high) {
    std::vector<std::uint16_t> v(d.count());
    for (std::size_t z = 0; z < d.nz; ++z)
        for (std::size_t y = 0; y < d.ny; ++y)
            for (std::size_t x = 0; x < d.nx; ++x) v[d.index(x, y, z)] = x < d.nx / 2 ? low : high;
    return VoxelVolume(d, 16, 1.0, std::move(v));
}

inline VoxelVolume random_volume(const Dims& d, std::uint16_t lo, std::uint16_t hi, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> u(lo, hi);
    std::vector<std::uint16_t> v(d.count());
    for (auto& x : v) x = static_cast<std::uint16_t>(u(rng));
    return VoxelVolume(d, 16, 1.0, std::move(v));
}

inline double sample_std(const std::vector<double>& v) {
    double m = 0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path = std::filesystem::temp_directory_path() / ("rockseg-" + tag + "-" + std::to_string(rd()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

}  // namespace rockseg::test
