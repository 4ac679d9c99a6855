#include "rockseg/petrophysics.hpp"

#include "rockseg/error.hpp"
#include "rockseg/filters.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <queue>

namespace rockseg {

namespace {

void check_pore_class(const LabelVolume& labels, int pore_class) {
    if (pore_class < 1 || pore_class > std::max(labels.k(), 1))
        fail(ErrorCode::parameter, "pore class " + std::to_string(pore_class) + " outside 1.." + std::to_string(labels.k()));
}

double sample_std(const std::vector<double>& v, double mean) {
    if (v.size() < 2) return 0.0;
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

double porosity(const LabelVolume& labels, int pore_class) {
    check_pore_class(labels, pore_class);
    std::size_t pore = 0, unmasked = 0;
    for (std::uint8_t l : labels.labels()) {
        unmasked += l != 0;
        pore += l == pore_class;
    }
    if (unmasked == 0) fail(ErrorCode::empty_region, "porosity of an all-masked label volume");
    return static_cast<double>(pore) / static_cast<double>(unmasked);
}

PorosityTrend porosity_trend(const LabelVolume& labels, int pore_class) {
    check_pore_class(labels, pore_class);
    if (labels.nz() < 2) fail(ErrorCode::parameter, "porosity trend needs at least two slices");
    PorosityTrend t;
    for (std::size_t z = 0; z < labels.nz(); ++z) {
        std::size_t pore = 0, unmasked = 0;
        for (std::uint8_t l : labels.slice(z)) {
            unmasked += l != 0;
            pore += l == pore_class;
        }
        if (unmasked == 0) continue;
        t.slices.push_back(z);
        t.porosity.push_back(static_cast<double>(pore) / static_cast<double>(unmasked));
    }
    if (t.slices.empty()) fail(ErrorCode::empty_region, "porosity trend of an all-masked label volume");
    if (t.slices.size() < 2) fail(ErrorCode::parameter, "porosity trend needs at least two slices with unmasked voxels");

    const double n = static_cast<double>(t.slices.size());
    double sx = 0, sy = 0;
    for (std::size_t i = 0; i < t.slices.size(); ++i) {
        sx += static_cast<double>(t.slices[i]);
        sy += t.porosity[i];
    }
    const double mx = sx / n, my = sy / n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < t.slices.size(); ++i) {
        const double dx = static_cast<double>(t.slices[i]) - mx, dy = t.porosity[i] - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    t.slope = sxy / sxx;
    t.intercept = my - t.slope * mx;
    t.mean = my;
    t.std = sample_std(t.porosity, my);
    if (syy > 0) {
        double ss_res = 0;
        for (std::size_t i = 0; i < t.slices.size(); ++i) {
            const double e = t.porosity[i] - (t.intercept + t.slope * static_cast<double>(t.slices[i]));
            ss_res += e * e;
        }
        t.r_squared = std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
    }
    return t;
}

std::map<int, double> volume_fractions(const LabelVolume& labels) {
    std::vector<std::size_t> counts(256, 0);
    std::size_t unmasked = 0;
    for (std::uint8_t l : labels.labels()) {
        ++counts[l];
        unmasked += l != 0;
    }
    if (unmasked == 0) fail(ErrorCode::empty_region, "volume fractions of an all-masked label volume");
    std::map<int, double> out;
    for (int c = 1; c < 256; ++c)
        if (counts[static_cast<std::size_t>(c)])
            out[c] = static_cast<double>(counts[static_cast<std::size_t>(c)]) / static_cast<double>(unmasked);
    return out;
}

// ---------------------------------------------------------------------------
// distance transform

namespace {

// 1D lower envelope of parabolas rooted at finite samples of f.
void edt_1d(const double* f, double* d, std::size_t n, std::vector<std::size_t>& v, std::vector<double>& z) {
    const double inf = std::numeric_limits<double>::infinity();
    v.resize(n);
    z.resize(n + 1);
    std::size_t k = 0;
    bool any = false;
    for (std::size_t q = 0; q < n; ++q) {
        if (!std::isfinite(f[q])) continue;
        if (!any) {
            v[0] = q;
            z[0] = -inf;
            z[1] = inf;
            any = true;
            continue;
        }
        double s;
        for (;;) {
            const auto p = v[k];
            const double qd = static_cast<double>(q), pd = static_cast<double>(p);
            s = ((f[q] + qd * qd) - (f[p] + pd * pd)) / (2.0 * (qd - pd));
            if (s <= z[k] && k > 0) {
                --k;
                continue;
            }
            break;
        }
        if (s <= z[k]) {  // k == 0 and the new parabola dominates the first
            v[0] = q;
            z[0] = -inf;
            z[1] = inf;
            continue;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = inf;
    }
    if (!any) {
        for (std::size_t q = 0; q < n; ++q) d[q] = inf;
        return;
    }
    k = 0;
    for (std::size_t q = 0; q < n; ++q) {
        while (z[k + 1] < static_cast<double>(q)) ++k;
        const double t = static_cast<double>(q) - static_cast<double>(v[k]);
        d[q] = t * t + f[v[k]];
    }
}

}  // namespace

std::vector<double> squared_distance_transform(const Dims& dims, const std::vector<std::uint8_t>& foreground) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> d(dims.count());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = foreground[i] ? inf : 0.0;
    const std::size_t n[3] = {dims.nx, dims.ny, dims.nz};
    const std::size_t stride[3] = {1, dims.nx, dims.nx * dims.ny};
    for (int axis = 0; axis < 3; ++axis) {
        const std::size_t len = n[axis];
        const std::size_t lines = dims.count() / len;
#pragma omp parallel
        {
            std::vector<double> f(len), out(len), z;
            std::vector<std::size_t> v;
#pragma omp for schedule(static)
            for (std::ptrdiff_t line = 0; line < static_cast<std::ptrdiff_t>(lines); ++line) {
                // base index of the line: enumerate the other two axes
                std::size_t base;
                const auto l = static_cast<std::size_t>(line);
                if (axis == 0) base = l * dims.nx;
                else if (axis == 1) base = (l / dims.nx) * dims.nx * dims.ny + l % dims.nx;
                else base = l;
                for (std::size_t q = 0; q < len; ++q) f[q] = d[base + q * stride[axis]];
                edt_1d(f.data(), out.data(), len, v, z);
                for (std::size_t q = 0; q < len; ++q) d[base + q * stride[axis]] = out[q];
            }
        }
    }
    const double cap = static_cast<double>(dims.nx * dims.nx + dims.ny * dims.ny + dims.nz * dims.nz);
    for (double& x : d)
        if (!std::isfinite(x)) x = cap;
    return d;
}

// ---------------------------------------------------------------------------
// watershed

WatershedResult watershed_from_maxima(const Dims& dims, const std::vector<double>& height,
                                      const std::vector<std::uint8_t>& mask, double plateau_tol) {
    const auto nx = static_cast<long>(dims.nx), ny = static_cast<long>(dims.ny), nz = static_cast<long>(dims.nz);
    const std::size_t n = dims.count();
    WatershedResult r;
    r.regions.assign(n, 0);

    auto coords = [&](std::size_t i, long& x, long& y, long& z) {
        x = static_cast<long>(i % dims.nx);
        y = static_cast<long>((i / dims.nx) % dims.ny);
        z = static_cast<long>(i / (dims.nx * dims.ny));
    };
    auto inside = [&](long x, long y, long z) { return x >= 0 && y >= 0 && z >= 0 && x < nx && y < ny && z < nz; };
    auto idx = [&](long x, long y, long z) { return static_cast<std::size_t>((z * ny + y) * nx + x); };

    struct Entry {
        double h;
        std::uint64_t seq;
        std::size_t voxel;
        std::int32_t label;
    };
    auto lower = [](const Entry& a, const Entry& b) { return a.h < b.h || (a.h == b.h && a.seq > b.seq); };
    std::priority_queue<Entry, std::vector<Entry>, decltype(lower)> queue(lower);
    std::uint64_t seq = 0;

    auto push_faces = [&](std::size_t i, std::int32_t label) {
        long x, y, z;
        coords(i, x, y, z);
        const long off[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
        for (const auto& o : off) {
            const long a = x + o[0], b = y + o[1], c = z + o[2];
            if (!inside(a, b, c)) continue;
            const std::size_t j = idx(a, b, c);
            if (mask[j] && r.regions[j] == 0) queue.push({height[j], seq++, j, label});
        }
    };
    auto flood = [&]() {
        while (!queue.empty()) {
            const Entry e = queue.top();
            queue.pop();
            if (r.regions[e.voxel] != 0) continue;
            r.regions[e.voxel] = e.label;
            push_faces(e.voxel, e.label);
        }
    };

    // regional maxima (26-connected plateaus)
    std::vector<std::uint8_t> visited(n, 0);
    std::vector<std::size_t> plateau, stack;
    std::vector<std::vector<std::size_t>> markers;
    for (std::size_t s = 0; s < n; ++s) {
        if (!mask[s] || visited[s]) continue;
        const double h0 = height[s];
        const double tol = plateau_tol * std::max(1.0, std::abs(h0));
        plateau.clear();
        stack.assign(1, s);
        visited[s] = 1;
        bool is_max = true;
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            plateau.push_back(i);
            long x, y, z;
            coords(i, x, y, z);
            for (long dz = -1; dz <= 1; ++dz)
                for (long dy = -1; dy <= 1; ++dy)
                    for (long dx = -1; dx <= 1; ++dx) {
                        if (!dx && !dy && !dz) continue;
                        if (!inside(x + dx, y + dy, z + dz)) continue;
                        const std::size_t j = idx(x + dx, y + dy, z + dz);
                        if (!mask[j]) continue;
                        if (height[j] > h0 + tol) {
                            is_max = false;
                        } else if (std::abs(height[j] - h0) <= tol && !visited[j]) {
                            visited[j] = 1;
                            stack.push_back(j);
                        }
                    }
        }
        if (is_max) {
            std::sort(plateau.begin(), plateau.end());
            markers.push_back(plateau);
        }
    }
    for (const auto& m : markers) {
        const std::int32_t label = ++r.count;
        for (std::size_t i : m) r.regions[i] = label;
    }
    for (const auto& m : markers)
        for (std::size_t i : m) push_faces(i, r.regions[i]);
    flood();

    for (std::size_t s = 0; s < n; ++s) {
        if (!mask[s] || r.regions[s] != 0) continue;
        r.regions[s] = ++r.count;
        push_faces(s, r.regions[s]);
        flood();
    }
    return r;
}

// ---------------------------------------------------------------------------
// pore size distribution

PsdResult pore_size_distribution(const LabelVolume& labels, int pore_class, double voxel_size, const PsdParams& params,
                                 const RunControl& ctl) {
    check_pore_class(labels, pore_class);
    if (!(voxel_size > 0)) fail(ErrorCode::parameter, "voxel size must be positive");
    if (params.smoothing_sigma < 0) fail(ErrorCode::parameter, "PSD smoothing sigma must be >= 0");
    if (params.histogram_bins < 1) fail(ErrorCode::parameter, "PSD histogram needs at least one bin");
    const Dims& dims = labels.dims();
    std::vector<std::uint8_t> mask(dims.count());
    std::size_t pore = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = labels.labels()[i] == pore_class;
        pore += mask[i];
    }
    if (pore == 0) fail(ErrorCode::empty_region, "pore class " + std::to_string(pore_class) + " is empty");

    ctl.checkpoint(0.0);
    Field dist{dims, squared_distance_transform(dims, mask)};
    for (double& v : dist.values) v = std::sqrt(v);
    ctl.checkpoint(0.3);
    const Field smooth = gaussian_blur(dist, params.smoothing_sigma);
    ctl.checkpoint(0.5);

    PsdResult r;
    r.partition = watershed_from_maxima(dims, smooth.values, mask);
    r.region_count = static_cast<std::size_t>(r.partition.count);
    r.voxel_counts.assign(r.region_count, 0);
    for (std::int32_t l : r.partition.regions)
        if (l > 0) ++r.voxel_counts[static_cast<std::size_t>(l - 1)];
    const double v3 = voxel_size * voxel_size * voxel_size;
    for (std::size_t c : r.voxel_counts)
        r.diameters.push_back(2.0 * std::cbrt(3.0 * static_cast<double>(c) * v3 / (4.0 * std::numbers::pi)));

    r.mean = std::accumulate(r.diameters.begin(), r.diameters.end(), 0.0) / static_cast<double>(r.diameters.size());
    r.std = sample_std(r.diameters, r.mean);
    const auto [mn, mx] = std::minmax_element(r.diameters.begin(), r.diameters.end());
    const double lo = *mn, hi = *mx > *mn ? *mx : *mn + 1.0;
    const auto bins = static_cast<std::size_t>(params.histogram_bins);
    for (std::size_t b = 0; b <= bins; ++b) r.bin_edges.push_back(lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins));
    r.histogram.assign(bins, 0);
    for (double d : r.diameters)
        ++r.histogram[std::min(bins - 1, static_cast<std::size_t>((d - lo) / (hi - lo) * static_cast<double>(bins)))];
    ctl.report(1.0);
    return r;
}

// ---------------------------------------------------------------------------
// REV

RevCurve rev_curve(const LabelVolume& labels, int pore_class, const std::vector<std::size_t>& edges,
                   const RevParams& params) {
    check_pore_class(labels, pore_class);
    if (edges.empty()) fail(ErrorCode::parameter, "REV curve needs at least one edge length");
    if (!(params.band >= 0)) fail(ErrorCode::parameter, "REV band must be >= 0");
    for (std::size_t i = 0; i < edges.size(); ++i) {
        if (edges[i] == 0) fail(ErrorCode::parameter, "REV edge lengths must be positive");
        if (i && edges[i] <= edges[i - 1]) fail(ErrorCode::parameter, "REV edge lengths must be strictly increasing");
    }
    const Dims& d = labels.dims();
    const long c[3] = {static_cast<long>(d.nx / 2) + params.offset_x, static_cast<long>(d.ny / 2) + params.offset_y,
                       static_cast<long>(d.nz / 2) + params.offset_z};
    const long n[3] = {static_cast<long>(d.nx), static_cast<long>(d.ny), static_cast<long>(d.nz)};

    RevCurve r;
    r.band = params.band;
    r.full_porosity = porosity(labels, pore_class);
    for (std::size_t e : edges) {
        const long len = static_cast<long>(e);
        long start[3];
        for (int a = 0; a < 3; ++a) {
            start[a] = c[a] - len / 2;
            if (start[a] < 0 || start[a] + len > n[a])
                fail(ErrorCode::bounds, "REV cube of edge " + std::to_string(e) + " does not fit volume " + d.str() +
                                            " around the chosen centre");
        }
        std::size_t pore = 0, unmasked = 0;
        for (long z = start[2]; z < start[2] + len; ++z)
            for (long y = start[1]; y < start[1] + len; ++y)
                for (long x = start[0]; x < start[0] + len; ++x) {
                    const std::uint8_t l = labels.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), static_cast<std::size_t>(z));
                    unmasked += l != 0;
                    pore += l == pore_class;
                }
        r.edge_lengths.push_back(e);
        r.porosity.push_back(unmasked ? static_cast<double>(pore) / static_cast<double>(unmasked)
                                      : std::numeric_limits<double>::quiet_NaN());
    }
    for (std::size_t i = r.porosity.size(); i-- > 0;) {
        if (!(std::abs(r.porosity[i] - r.full_porosity) <= r.band)) break;
        r.stable_from = r.edge_lengths[i];
    }
    return r;
}

}  // namespace rockseg
