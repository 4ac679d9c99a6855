#include "rockseg/filters.hpp"

#include "rockseg/error.hpp"
#include "rockseg/io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rockseg {

namespace {

std::ptrdiff_t clampi(std::ptrdiff_t v, std::ptrdiff_t lo, std::ptrdiff_t hi) { return std::min(std::max(v, lo), hi); }

double stddev(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size()));
}

}  // namespace

Field Field::from(const VoxelVolume& vol) {
    return Field{vol.dims(), std::vector<double>(vol.data().begin(), vol.data().end())};
}

VoxelVolume to_volume(const Field& field, const VoxelVolume& like) {
    const double top = like.max_value();
    std::vector<std::uint16_t> out(field.values.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<std::uint16_t>(std::clamp(std::round(field.values[i]), 0.0, top));
    return VoxelVolume(field.dims, like.bit_depth(), like.voxel_size(), std::move(out));
}

// ---------------------------------------------------------------------------
// non-local means

void NlmParams::validate() const {
    if (search_window < 1 || search_window % 2 == 0)
        fail(ErrorCode::parameter, "NLM search window must be a positive odd size, got " + std::to_string(search_window));
    if (neighborhood < 1) fail(ErrorCode::parameter, "NLM neighborhood must be >= 1");
    if (neighborhood > search_window)
        fail(ErrorCode::parameter, "NLM neighborhood (" + std::to_string(neighborhood) +
                                       ") must not exceed the search window (" + std::to_string(search_window) + ")");
    if (!(similarity > 0)) fail(ErrorCode::parameter, "NLM similarity must be positive");
}

Field nlm_filter_field(const VoxelVolume& vol, const NlmParams& p, const RunControl& ctl) {
    p.validate();
    Field in = Field::from(vol);
    const double sd = stddev(in.values);
    if (sd == 0.0 || vol.empty()) return in;
    const double h2 = (p.similarity * sd) * (p.similarity * sd);

    const auto nx = static_cast<std::ptrdiff_t>(vol.nx());
    const auto ny = static_cast<std::ptrdiff_t>(vol.ny());
    const auto nz = static_cast<std::ptrdiff_t>(vol.nz());
    const std::ptrdiff_t r = p.patch_radius();
    const std::ptrdiff_t rz = p.three_d ? r : 0;
    const std::ptrdiff_t s = p.search_radius();
    const std::ptrdiff_t sz = p.three_d ? s : 0;
    const double patch_count = static_cast<double>((2 * r + 1) * (2 * r + 1) * (2 * rz + 1));

    // Edge-replicated copy padded by the patch radius.
    const std::ptrdiff_t px = nx + 2 * r, py = ny + 2 * r, pz = nz + 2 * rz;
    auto pidx = [&](std::ptrdiff_t x, std::ptrdiff_t y, std::ptrdiff_t z) { return (z * py + y) * px + x; };
    std::vector<double> pad(static_cast<std::size_t>(px * py * pz));
    for (std::ptrdiff_t z = 0; z < pz; ++z)
        for (std::ptrdiff_t y = 0; y < py; ++y)
            for (std::ptrdiff_t x = 0; x < px; ++x)
                pad[pidx(x, y, z)] = in.values[vol.dims().index(clampi(x - r, 0, nx - 1), clampi(y - r, 0, ny - 1),
                                                                clampi(z - rz, 0, nz - 1))];

    const std::size_t n = in.values.size();
    std::vector<double> wsum(n, 0.0), acc(n, 0.0);
    std::vector<double> diff(pad.size());
    // Box sums: along x first (x collapsed to output coords), then y, then z.
    std::vector<double> bx(static_cast<std::size_t>(nx * py * pz)), by(static_cast<std::size_t>(nx * ny * pz));

    const std::ptrdiff_t total = (2 * sz + 1) * (2 * s + 1) * (2 * s + 1);
    std::ptrdiff_t done = 0;
    for (std::ptrdiff_t oz = -sz; oz <= sz; ++oz)
        for (std::ptrdiff_t oy = -s; oy <= s; ++oy)
            for (std::ptrdiff_t ox = -s; ox <= s; ++ox) {
                ctl.checkpoint(static_cast<double>(done++) / static_cast<double>(total));
                if (std::abs(ox) >= nx || std::abs(oy) >= ny || std::abs(oz) >= nz) continue;

#pragma omp parallel for schedule(static)
                for (std::ptrdiff_t z = 0; z < pz; ++z)
                    for (std::ptrdiff_t y = 0; y < py; ++y) {
                        const std::ptrdiff_t yy = clampi(y + oy, 0, py - 1), zz = clampi(z + oz, 0, pz - 1);
                        for (std::ptrdiff_t x = 0; x < px; ++x) {
                            const double d = pad[pidx(x, y, z)] - pad[pidx(clampi(x + ox, 0, px - 1), yy, zz)];
                            diff[pidx(x, y, z)] = d * d;
                        }
                    }
#pragma omp parallel for schedule(static)
                for (std::ptrdiff_t z = 0; z < pz; ++z)
                    for (std::ptrdiff_t y = 0; y < py; ++y)
                        for (std::ptrdiff_t x = 0; x < nx; ++x) {
                            double t = 0.0;
                            for (std::ptrdiff_t k = 0; k <= 2 * r; ++k) t += diff[pidx(x + k, y, z)];
                            bx[static_cast<std::size_t>((z * py + y) * nx + x)] = t;
                        }
#pragma omp parallel for schedule(static)
                for (std::ptrdiff_t z = 0; z < pz; ++z)
                    for (std::ptrdiff_t y = 0; y < ny; ++y)
                        for (std::ptrdiff_t x = 0; x < nx; ++x) {
                            double t = 0.0;
                            for (std::ptrdiff_t k = 0; k <= 2 * r; ++k)
                                t += bx[static_cast<std::size_t>((z * py + y + k) * nx + x)];
                            by[static_cast<std::size_t>((z * ny + y) * nx + x)] = t;
                        }
#pragma omp parallel for schedule(static)
                for (std::ptrdiff_t z = 0; z < nz; ++z) {
                    if (z + oz < 0 || z + oz >= nz) continue;
                    for (std::ptrdiff_t y = std::max<std::ptrdiff_t>(0, -oy); y < std::min(ny, ny - oy); ++y)
                        for (std::ptrdiff_t x = std::max<std::ptrdiff_t>(0, -ox); x < std::min(nx, nx - ox); ++x) {
                            double d2 = 0.0;
                            for (std::ptrdiff_t k = 0; k <= 2 * rz; ++k)
                                d2 += by[static_cast<std::size_t>(((z + k) * ny + y) * nx + x)];
                            const double w = std::exp(-(d2 / patch_count) / h2);
                            const std::size_t i = static_cast<std::size_t>((z * ny + y) * nx + x);
                            const std::size_t j = static_cast<std::size_t>(((z + oz) * ny + y + oy) * nx + x + ox);
                            wsum[i] += w;
                            acc[i] += w * in.values[j];
                        }
                }
            }

    Field out{in.dims, std::vector<double>(n)};
    for (std::size_t i = 0; i < n; ++i) out.values[i] = acc[i] / wsum[i];
    ctl.report(1.0);
    return out;
}

VoxelVolume nlm_filter(const VoxelVolume& vol, const NlmParams& p, const RunControl& ctl) {
    return to_volume(nlm_filter_field(vol, p, ctl), vol);
}

// ---------------------------------------------------------------------------
// anisotropic diffusion

void AdParams::validate() const {
    if (!(threshold > 0)) fail(ErrorCode::parameter, "AD threshold must be positive");
    if (iterations < 1) fail(ErrorCode::parameter, "AD iterations must be >= 1");
    if (smoothing_sigma < 0) fail(ErrorCode::parameter, "AD smoothing sigma must be >= 0");
}

Field anisotropic_diffusion_field(const Field& in, const AdParams& p, const RunControl& ctl) {
    p.validate();
    const auto nx = static_cast<std::ptrdiff_t>(in.dims.nx);
    const auto ny = static_cast<std::ptrdiff_t>(in.dims.ny);
    const auto nz = static_cast<std::ptrdiff_t>(in.dims.nz);
    Field u = in;
    Field next = in;
    for (int it = 0; it < p.iterations; ++it) {
        ctl.checkpoint(static_cast<double>(it) / p.iterations);
        const Field gate = p.smoothing_sigma > 0 ? gaussian_blur(u, p.smoothing_sigma) : Field{};
        const std::vector<double>& g = p.smoothing_sigma > 0 ? gate.values : u.values;
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t z = 0; z < nz; ++z)
            for (std::ptrdiff_t y = 0; y < ny; ++y)
                for (std::ptrdiff_t x = 0; x < nx; ++x) {
                    const std::ptrdiff_t i = (z * ny + y) * nx + x;
                    const double c = u.values[static_cast<std::size_t>(i)];
                    const double gc = g[static_cast<std::size_t>(i)];
                    double flux = 0.0;
                    auto face = [&](std::ptrdiff_t j) {
                        if (std::abs(g[static_cast<std::size_t>(j)] - gc) < p.threshold)
                            flux += u.values[static_cast<std::size_t>(j)] - c;
                    };
                    if (x > 0) face(i - 1);
                    if (x + 1 < nx) face(i + 1);
                    if (y > 0) face(i - nx);
                    if (y + 1 < ny) face(i + nx);
                    if (z > 0) face(i - nx * ny);
                    if (z + 1 < nz) face(i + nx * ny);
                    next.values[static_cast<std::size_t>(i)] = c + kAdStepWeight * flux;
                }
        std::swap(u.values, next.values);
    }
    ctl.report(1.0);
    return u;
}

VoxelVolume anisotropic_diffusion(const VoxelVolume& vol, const AdParams& p, const RunControl& ctl) {
    return to_volume(anisotropic_diffusion_field(Field::from(vol), p, ctl), vol);
}

// ---------------------------------------------------------------------------
// gaussian blur

Field gaussian_blur(const Field& in, double sigma, bool three_d) {
    if (!(sigma > 0)) return in;
    const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    for (std::ptrdiff_t i = -radius; i <= radius; ++i)
        kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    const double norm = std::accumulate(kernel.begin(), kernel.end(), 0.0);
    for (double& k : kernel) k /= norm;

    const std::ptrdiff_t n[3] = {static_cast<std::ptrdiff_t>(in.dims.nx), static_cast<std::ptrdiff_t>(in.dims.ny),
                                 static_cast<std::ptrdiff_t>(in.dims.nz)};
    const std::ptrdiff_t stride[3] = {1, n[0], n[0] * n[1]};
    Field cur = in, tmp = in;
    for (int axis = 0; axis < (three_d ? 3 : 2); ++axis) {
        if (n[axis] <= 1) continue;
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t z = 0; z < n[2]; ++z)
            for (std::ptrdiff_t y = 0; y < n[1]; ++y)
                for (std::ptrdiff_t x = 0; x < n[0]; ++x) {
                    const std::ptrdiff_t pos[3] = {x, y, z};
                    const std::ptrdiff_t base = (z * n[1] + y) * n[0] + x - pos[axis] * stride[axis];
                    double v = 0.0;
                    for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
                        const std::ptrdiff_t q = clampi(pos[axis] + k, 0, n[axis] - 1);
                        v += kernel[static_cast<std::size_t>(k + radius)] * cur.values[static_cast<std::size_t>(base + q * stride[axis])];
                    }
                    tmp.values[static_cast<std::size_t>((z * n[1] + y) * n[0] + x)] = v;
                }
        std::swap(cur.values, tmp.values);
    }
    return cur;
}

// ---------------------------------------------------------------------------
// smoothing

SmoothMethod parse_smooth_method(const std::string& s) {
    if (s == "median") return SmoothMethod::median;
    if (s == "mean" || s == "average") return SmoothMethod::mean;
    if (s == "gaussian") return SmoothMethod::gaussian;
    fail(ErrorCode::parameter, "smoothing method must be median, mean or gaussian, got '" + s + "'");
}

VoxelVolume smooth(const VoxelVolume& vol, SmoothMethod method, int radius, double sigma, const RunControl& ctl) {
    if (radius < 1) fail(ErrorCode::parameter, "smoothing radius must be >= 1, got " + std::to_string(radius));
    const auto nx = static_cast<std::ptrdiff_t>(vol.nx());
    const auto ny = static_cast<std::ptrdiff_t>(vol.ny());
    const std::ptrdiff_t r = radius;
    const std::size_t side = static_cast<std::size_t>(2 * r + 1);

    std::vector<double> weights(side * side, 1.0);
    if (method == SmoothMethod::gaussian) {
        const double sg = sigma > 0 ? sigma : radius / 2.0;
        for (std::ptrdiff_t dy = -r; dy <= r; ++dy)
            for (std::ptrdiff_t dx = -r; dx <= r; ++dx)
                weights[static_cast<std::size_t>((dy + r) * (2 * r + 1) + dx + r)] =
                    std::exp(-0.5 * static_cast<double>(dx * dx + dy * dy) / (sg * sg));
    }
    const double wnorm = std::accumulate(weights.begin(), weights.end(), 0.0);

    std::vector<std::uint16_t> out(vol.size());
    for (std::size_t z = 0; z < vol.nz(); ++z) {
        ctl.checkpoint(static_cast<double>(z) / static_cast<double>(vol.nz()));
        const auto sl = vol.slice(z);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t y = 0; y < ny; ++y) {
            std::vector<std::uint16_t> window(side * side);
            for (std::ptrdiff_t x = 0; x < nx; ++x) {
                std::size_t k = 0;
                double acc = 0.0;
                for (std::ptrdiff_t dy = -r; dy <= r; ++dy)
                    for (std::ptrdiff_t dx = -r; dx <= r; ++dx, ++k) {
                        const std::uint16_t v = sl[static_cast<std::size_t>(clampi(y + dy, 0, ny - 1) * nx + clampi(x + dx, 0, nx - 1))];
                        window[k] = v;
                        acc += weights[k] * v;
                    }
                std::uint16_t result;
                if (method == SmoothMethod::median) {
                    auto mid = window.begin() + static_cast<std::ptrdiff_t>(window.size() / 2);
                    std::nth_element(window.begin(), mid, window.end());
                    result = *mid;
                } else {
                    result = static_cast<std::uint16_t>(std::clamp(std::round(acc / wnorm), 0.0, double(vol.max_value())));
                }
                out[z * vol.dims().slice_size() + static_cast<std::size_t>(y * nx + x)] = result;
            }
        }
    }
    ctl.report(1.0);
    return VoxelVolume(vol.dims(), vol.bit_depth(), vol.voxel_size(), std::move(out));
}

// ---------------------------------------------------------------------------
// contrast

double percentile(std::vector<std::uint16_t> values, double pct) {
    if (values.empty()) fail(ErrorCode::empty_region, "percentile of an empty set");
    std::sort(values.begin(), values.end());
    const double pos = pct / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (static_cast<double>(values[hi]) - values[lo]);
}

VoxelVolume contrast_stretch(const VoxelVolume& vol, double low_pct, double high_pct) {
    if (!(low_pct >= 0 && low_pct < high_pct && high_pct <= 100))
        fail(ErrorCode::parameter, "contrast percentiles must satisfy 0 <= low < high <= 100");
    std::vector<std::uint16_t> values(vol.data().begin(), vol.data().end());
    const double lo = percentile(values, low_pct);
    const double hi = percentile(std::move(values), high_pct);
    if (hi <= lo)
        fail(ErrorCode::degenerate_histogram, "intensity percentiles coincide (" + format_number(lo) + "), nothing to stretch");
    const double top = vol.max_value();
    std::vector<std::uint16_t> out(vol.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = (vol.data()[i] - lo) / (hi - lo) * top;
        out[i] = static_cast<std::uint16_t>(std::clamp(std::round(v), 0.0, top));
    }
    return VoxelVolume(vol.dims(), vol.bit_depth(), vol.voxel_size(), std::move(out));
}

}  // namespace rockseg
