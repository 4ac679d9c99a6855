#include "rockseg/clustering.hpp"

#include "rockseg/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

namespace rockseg {

Distance parse_distance(const std::string& s) {
    if (s == "sqeuclidean" || s == "sq_euclidean" || s == "euclidean") return Distance::sq_euclidean;
    if (s == "manhattan" || s == "cityblock" || s == "mandist") return Distance::manhattan;
    if (s == "chebyshev" || s == "box" || s == "boxdist") return Distance::chebyshev;
    if (s == "link" || s == "linkdist")
        fail(ErrorCode::parameter,
             "link distance counts network-layer hops between neurons and has no meaning for scalar intensities; "
             "use sqeuclidean, manhattan or chebyshev");
    fail(ErrorCode::parameter, "unknown distance '" + s + "'");
}

const char* to_string(Distance d) {
    switch (d) {
    case Distance::sq_euclidean: return "sqeuclidean";
    case Distance::manhattan: return "manhattan";
    case Distance::chebyshev: return "chebyshev";
    }
    return "?";
}

void KmeansConfig::validate() const {
    if (k < 1 || k > 255) fail(ErrorCode::parameter, "k must be in 1..255, got " + std::to_string(k));
    if (restarts < 1) fail(ErrorCode::parameter, "restarts must be >= 1");
    if (max_iters < 1) fail(ErrorCode::parameter, "max_iters must be >= 1");
    if (!(tol > 0)) fail(ErrorCode::parameter, "tol must be positive");
    if (!initial_centers.empty() && initial_centers.size() != static_cast<std::size_t>(k))
        fail(ErrorCode::parameter, "initial centers must have exactly k = " + std::to_string(k) + " entries");
}

void FcmConfig::validate() const {
    if (c < 1 || c > 255) fail(ErrorCode::parameter, "c must be in 1..255, got " + std::to_string(c));
    if (!(m > 1.0 && m <= 2.0))
        fail(ErrorCode::parameter, "membership exponent m must lie in (1, 2], got " + std::to_string(m));
    if (max_iters < 1) fail(ErrorCode::parameter, "max_iters must be >= 1");
    if (!(tol > 0)) fail(ErrorCode::parameter, "tol must be positive");
    if (!initial_centers.empty() && initial_centers.size() != static_cast<std::size_t>(c))
        fail(ErrorCode::parameter, "initial centers must have exactly c = " + std::to_string(c) + " entries");
}

double Histogram::total() const { return std::accumulate(counts.begin(), counts.end(), 0.0); }

Histogram unmasked_histogram(const VoxelVolume& vol, double mask_threshold) {
    std::vector<std::uint64_t> bins(65536, 0);
    const auto data = vol.data();
#pragma omp parallel
    {
        std::vector<std::uint64_t> local(65536, 0);
#pragma omp for schedule(static) nowait
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(data.size()); ++i) ++local[data[static_cast<std::size_t>(i)]];
#pragma omp critical
        for (std::size_t v = 0; v < local.size(); ++v) bins[v] += local[v];
    }
    Histogram h;
    for (std::size_t v = 0; v < bins.size(); ++v)
        if (bins[v] && static_cast<double>(v) > mask_threshold) {
            h.values.push_back(static_cast<double>(v));
            h.counts.push_back(static_cast<double>(bins[v]));
        }
    return h;
}

namespace {

double dist(double a, double b, Distance d) {
    const double t = a - b;
    return d == Distance::sq_euclidean ? t * t : std::abs(t);
}

std::vector<int> assign(const Histogram& h, const std::vector<double>& centers, Distance d) {
    std::vector<int> a(h.values.size());
    for (std::size_t i = 0; i < h.values.size(); ++i) {
        int best = 0;
        double bd = dist(h.values[i], centers[0], d);
        for (std::size_t j = 1; j < centers.size(); ++j) {
            const double dj = dist(h.values[i], centers[j], d);
            if (dj < bd) {
                bd = dj;
                best = static_cast<int>(j);
            }
        }
        a[i] = best;
    }
    return a;
}

double objective(const Histogram& h, const std::vector<double>& centers, const std::vector<int>& a, Distance d) {
    double j = 0.0;
    for (std::size_t i = 0; i < h.values.size(); ++i)
        j += h.counts[i] * dist(h.values[i], centers[static_cast<std::size_t>(a[i])], d);
    return j;
}

// Optimal centre of each non-empty cluster; empty clusters keep NaN.
std::vector<double> update(const Histogram& h, const std::vector<int>& a, std::size_t k, Distance d) {
    std::vector<double> c(k, std::numeric_limits<double>::quiet_NaN());
    if (d == Distance::sq_euclidean) {
        std::vector<double> sw(k, 0.0), sv(k, 0.0);
        for (std::size_t i = 0; i < a.size(); ++i) {
            sw[static_cast<std::size_t>(a[i])] += h.counts[i];
            sv[static_cast<std::size_t>(a[i])] += h.counts[i] * h.values[i];
        }
        for (std::size_t j = 0; j < k; ++j)
            if (sw[j] > 0) c[j] = sv[j] / sw[j];
        return c;
    }
    // Weighted (lower) median; values are sorted ascending.
    std::vector<double> sw(k, 0.0), run(k, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) sw[static_cast<std::size_t>(a[i])] += h.counts[i];
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto j = static_cast<std::size_t>(a[i]);
        if (!std::isnan(c[j])) continue;
        run[j] += h.counts[i];
        if (2.0 * run[j] >= sw[j]) c[j] = h.values[i];
    }
    return c;
}

// Gives every empty cluster the single value farthest from its centre.
void reseed_empty(const Histogram& h, std::vector<double>& centers, std::vector<int>& a, Distance d) {
    const std::size_t k = centers.size();
    for (std::size_t j = 0; j < k; ++j) {
        if (!std::isnan(centers[j])) continue;
        std::vector<std::size_t> members(k, 0);
        for (int l : a) ++members[static_cast<std::size_t>(l)];
        std::size_t far = h.values.size();
        double fd = -1.0;
        for (std::size_t i = 0; i < h.values.size(); ++i) {
            const auto owner = static_cast<std::size_t>(a[i]);
            if (members[owner] < 2 || std::isnan(centers[owner])) continue;
            const double di = dist(h.values[i], centers[owner], d);
            if (di > fd) {
                fd = di;
                far = i;
            }
        }
        if (far == h.values.size()) fail(ErrorCode::infeasible, "cannot reseed an empty cluster");
        a[far] = static_cast<int>(j);
        const std::vector<double> fresh = update(h, a, k, d);
        for (std::size_t q = 0; q < k; ++q)
            if (!std::isnan(fresh[q])) centers[q] = fresh[q];
        centers[j] = h.values[far];
    }
}

std::vector<double> sample_distinct(const Histogram& h, std::size_t k, std::mt19937_64& rng) {
    std::vector<double> cumulative(h.counts.size());
    std::partial_sum(h.counts.begin(), h.counts.end(), cumulative.begin());
    const auto total = static_cast<std::uint64_t>(cumulative.back());
    std::vector<char> taken(h.values.size(), 0);
    std::vector<double> centers;
    while (centers.size() < k) {
        const double u = static_cast<double>(rng() % total);
        const auto idx = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
        if (taken[idx]) continue;
        taken[idx] = 1;
        centers.push_back(h.values[idx]);
    }
    return centers;
}

std::size_t distinct_needed(const Histogram& h, int k) {
    if (h.values.size() < static_cast<std::size_t>(k))
        fail(ErrorCode::infeasible, "only " + std::to_string(h.values.size()) + " distinct unmasked intensities for k = " +
                                        std::to_string(k) + " clusters");
    return static_cast<std::size_t>(k);
}

struct SortedClustering {
    std::vector<double> centers;  // ascending
    std::vector<int> labels;      // per histogram value, 1..k
    double objective = 0.0;
    int iterations = 0;
};

SortedClustering cluster_histogram(const Histogram& h, const KmeansConfig& cfg) {
    cfg.validate();
    const std::size_t k = distinct_needed(h, cfg.k);
    const int runs = cfg.initial_centers.empty() ? cfg.restarts : 1;
    LloydOutcome best;
    bool have = false;
    for (int run = 0; run < runs; ++run) {
        std::vector<double> init = cfg.initial_centers;
        if (init.empty()) {
            std::mt19937_64 rng(cfg.seed + static_cast<std::uint64_t>(run) * 0x9E3779B97F4A7C15ull);
            init = sample_distinct(h, k, rng);
        }
        LloydOutcome out = lloyd(h, std::move(init), cfg.distance, cfg.max_iters, cfg.tol);
        if (!have || out.objective < best.objective) {
            best = std::move(out);
            have = true;
        }
    }
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return best.centers[a] < best.centers[b]; });
    std::vector<int> rank(k);
    SortedClustering out;
    for (std::size_t r = 0; r < k; ++r) {
        rank[order[r]] = static_cast<int>(r) + 1;
        out.centers.push_back(best.centers[order[r]]);
    }
    out.labels.resize(best.assignment.size());
    for (std::size_t i = 0; i < best.assignment.size(); ++i) out.labels[i] = rank[static_cast<std::size_t>(best.assignment[i])];
    out.objective = best.objective;
    out.iterations = best.iterations;
    return out;
}

LabelVolume label_volume(const VoxelVolume& vol, const Histogram& h, const std::vector<int>& labels, int k) {
    std::array<std::uint8_t, 65536> lut{};
    for (std::size_t i = 0; i < h.values.size(); ++i) lut[static_cast<std::size_t>(h.values[i])] = static_cast<std::uint8_t>(labels[i]);
    std::vector<std::uint8_t> out(vol.size());
    const auto data = vol.data();
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(data.size()); ++i)
        out[static_cast<std::size_t>(i)] = lut[data[static_cast<std::size_t>(i)]];
    return LabelVolume(vol.dims(), vol.voxel_size(), std::move(out), k);
}

}  // namespace

LloydOutcome lloyd(const Histogram& h, std::vector<double> centers, Distance distance, int max_iters, double tol) {
    LloydOutcome out;
    const std::size_t k = centers.size();
    std::vector<int> a;
    for (int it = 1; it <= max_iters; ++it) {
        std::vector<int> next = assign(h, centers, distance);
        out.objective_history.push_back(objective(h, centers, next, distance));
        out.iterations = it;
        if (next == a) break;
        a = std::move(next);
        std::vector<double> fresh = update(h, a, k, distance);
        reseed_empty(h, fresh, a, distance);
        double moved = 0.0;
        for (std::size_t j = 0; j < k; ++j) moved = std::max(moved, std::abs(fresh[j] - centers[j]));
        centers = std::move(fresh);
        if (moved < tol) break;
    }
    // Labels always come from the final centres, so reassignment is a no-op.
    out.assignment = assign(h, centers, distance);
    out.objective = objective(h, centers, out.assignment, distance);
    out.centers = std::move(centers);
    return out;
}

ClusterResult kmeans_segment(const VoxelVolume& vol, const KmeansConfig& cfg, const RunControl& ctl) {
    cfg.validate();
    ctl.checkpoint(0.0);
    const Histogram h = unmasked_histogram(vol, cfg.mask_threshold);
    SortedClustering sc = cluster_histogram(h, cfg);
    ClusterResult r;
    r.labels = label_volume(vol, h, sc.labels, cfg.k);
    r.centers = std::move(sc.centers);
    r.objective = sc.objective;
    r.iterations_used = sc.iterations;
    r.classes = cfg.k;
    ctl.report(1.0);
    return r;
}

PointClustering kmeans_points(const std::vector<double>& points, const KmeansConfig& cfg) {
    std::map<double, double> counts;
    for (double p : points)
        if (p > cfg.mask_threshold) counts[p] += 1.0;
    Histogram h;
    for (const auto& [v, c] : counts) {
        h.values.push_back(v);
        h.counts.push_back(c);
    }
    SortedClustering sc = cluster_histogram(h, cfg);
    PointClustering out;
    out.centers = sc.centers;
    out.objective = sc.objective;
    out.labels.reserve(points.size());
    for (double p : points) {
        if (!(p > cfg.mask_threshold)) {
            out.labels.push_back(0);
            continue;
        }
        const auto i = static_cast<std::size_t>(std::lower_bound(h.values.begin(), h.values.end(), p) - h.values.begin());
        out.labels.push_back(sc.labels[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// fuzzy c-means

namespace {

void fcm_memberships(double v, const std::vector<double>& centers, double m, double* u) {
    const std::size_t c = centers.size();
    double dmin = std::numeric_limits<double>::infinity();
    std::size_t at = c;
    for (std::size_t j = 0; j < c; ++j) {
        const double d = std::abs(v - centers[j]);
        if (d == 0.0 && at == c) at = j;
        dmin = std::min(dmin, d);
    }
    if (at != c) {
        for (std::size_t j = 0; j < c; ++j) u[j] = j == at ? 1.0 : 0.0;
        return;
    }
    // u_j = (1/d_j^2)^(1/(m-1)) / sum_k (1/d_k^2)^(1/(m-1)), scaled by dmin to avoid overflow.
    const double e = 2.0 / (m - 1.0);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
        u[j] = std::pow(dmin / std::abs(v - centers[j]), e);
        sum += u[j];
    }
    for (std::size_t j = 0; j < c; ++j) u[j] /= sum;
}

}  // namespace

ClusterResult fcm_segment(const VoxelVolume& vol, const FcmConfig& cfg, const RunControl& ctl) {
    cfg.validate();
    ctl.checkpoint(0.0);
    const Histogram h = unmasked_histogram(vol, cfg.mask_threshold);
    const std::size_t c = distinct_needed(h, cfg.c);
    const std::size_t n = h.values.size();

    std::vector<double> centers = cfg.initial_centers;
    if (centers.empty()) {
        std::mt19937_64 rng(cfg.seed);
        centers = sample_distinct(h, c, rng);
    }
    std::vector<double> u(n * c);
    ClusterResult r;
    double prev = std::numeric_limits<double>::infinity();
    for (int it = 1; it <= cfg.max_iters; ++it) {
        for (std::size_t i = 0; i < n; ++i) fcm_memberships(h.values[i], centers, cfg.m, &u[i * c]);
        std::vector<double> num(c, 0.0), den(c, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                const double w = h.counts[i] * std::pow(u[i * c + j], cfg.m);
                num[j] += w * h.values[i];
                den[j] += w;
            }
        for (std::size_t j = 0; j < c; ++j)
            if (den[j] > 0) centers[j] = num[j] / den[j];
        double obj = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                const double d = h.values[i] - centers[j];
                obj += h.counts[i] * std::pow(u[i * c + j], cfg.m) * d * d;
            }
        r.objective_history.push_back(obj);
        r.iterations_used = it;
        const bool done = std::abs(prev - obj) <= cfg.tol * std::max(obj, 1e-300);
        prev = obj;
        if (done) break;
    }

    std::vector<std::size_t> order(c);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return centers[a] < centers[b]; });
    std::vector<double> sorted(c);
    for (std::size_t q = 0; q < c; ++q) sorted[q] = centers[order[q]];

    r.membership_values = h.values;
    r.membership_table.assign(n * c, 0.0);
    std::vector<int> hard(n);
    for (std::size_t i = 0; i < n; ++i) {
        fcm_memberships(h.values[i], sorted, cfg.m, &r.membership_table[i * c]);
        const double* row = &r.membership_table[i * c];
        hard[i] = static_cast<int>(std::max_element(row, row + c) - row) + 1;
    }
    double obj = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            const double d = h.values[i] - sorted[j];
            obj += h.counts[i] * std::pow(r.membership_table[i * c + j], cfg.m) * d * d;
        }
    r.objective = obj;
    r.centers = std::move(sorted);
    r.labels = label_volume(vol, h, hard, cfg.c);
    r.classes = cfg.c;
    ctl.report(1.0);
    return r;
}

std::vector<double> ClusterResult::memberships(const VoxelVolume& vol, std::size_t voxel) const {
    if (membership_values.empty() || classes <= 0) return {};
    const double v = vol.data()[voxel];
    auto it = std::lower_bound(membership_values.begin(), membership_values.end(), v);
    if (it == membership_values.end() || *it != v) return {};
    const auto row = static_cast<std::size_t>(it - membership_values.begin()) * static_cast<std::size_t>(classes);
    return {membership_table.begin() + static_cast<std::ptrdiff_t>(row),
            membership_table.begin() + static_cast<std::ptrdiff_t>(row + static_cast<std::size_t>(classes))};
}

}  // namespace rockseg
