#pragma once

#include "rockseg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rockseg::test {

// Straight quadruple loop: every voxel, every search offset, every patch cell.
inline std::vector<double> nlm_reference(const VoxelVolume& vol, int search_window, int neighborhood,
                                         double similarity, bool three_d) {
    const long nx = static_cast<long>(vol.nx()), ny = static_cast<long>(vol.ny()), nz = static_cast<long>(vol.nz());
    auto I = [&](long x, long y, long z) {
        x = std::clamp(x, 0L, nx - 1);
        y = std::clamp(y, 0L, ny - 1);
        z = std::clamp(z, 0L, nz - 1);
        return static_cast<double>(vol.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), static_cast<std::size_t>(z)));
    };
    double mean = 0;
    for (auto v : vol.data()) mean += v;
    mean /= static_cast<double>(vol.size());
    double var = 0;
    for (auto v : vol.data()) var += (v - mean) * (v - mean);
    const double h = similarity * std::sqrt(var / static_cast<double>(vol.size()));
    const long r = neighborhood / 2, rz = three_d ? r : 0;
    const long s = search_window / 2, sz = three_d ? s : 0;
    std::vector<double> out(vol.size());
    for (long z = 0; z < nz; ++z)
        for (long y = 0; y < ny; ++y)
            for (long x = 0; x < nx; ++x) {
                double wsum = 0, acc = 0;
                for (long qz = z - sz; qz <= z + sz; ++qz)
                    for (long qy = y - s; qy <= y + s; ++qy)
                        for (long qx = x - s; qx <= x + s; ++qx) {
                            if (qx < 0 || qy < 0 || qz < 0 || qx >= nx || qy >= ny || qz >= nz) continue;
                            double d2 = 0;
                            long cells = 0;
                            for (long c = -rz; c <= rz; ++c)
                                for (long b = -r; b <= r; ++b)
                                    for (long a = -r; a <= r; ++a) {
                                        const double diff = I(x + a, y + b, z + c) - I(qx + a, qy + b, qz + c);
                                        d2 += diff * diff;
                                        ++cells;
                                    }
                            const double w = std::exp(-(d2 / static_cast<double>(cells)) / (h * h));
                            wsum += w;
                            acc += w * I(qx, qy, qz);
                        }
                out[vol.dims().index(static_cast<std::size_t>(x), static_cast<std::size_t>(y), static_cast<std::size_t>(z))] =
                    acc / wsum;
            }
    return out;
}

// Explicit gated diffusion, one voxel and one face at a time.
inline std::vector<double> ad_reference(const Dims& d, std::vector<double> u, double threshold, int iterations) {
    const long nx = static_cast<long>(d.nx), ny = static_cast<long>(d.ny), nz = static_cast<long>(d.nz);
    for (int it = 0; it < iterations; ++it) {
        std::vector<double> next(u.size());
        for (long z = 0; z < nz; ++z)
            for (long y = 0; y < ny; ++y)
                for (long x = 0; x < nx; ++x) {
                    const long i = (z * ny + y) * nx + x;
                    double flux = 0;
                    const long nb[6][3] = {{x - 1, y, z}, {x + 1, y, z}, {x, y - 1, z}, {x, y + 1, z}, {x, y, z - 1}, {x, y, z + 1}};
                    for (const auto& q : nb) {
                        if (q[0] < 0 || q[1] < 0 || q[2] < 0 || q[0] >= nx || q[1] >= ny || q[2] >= nz) continue;
                        const double diff = u[static_cast<std::size_t>((q[2] * ny + q[1]) * nx + q[0])] - u[static_cast<std::size_t>(i)];
                        if (std::abs(diff) < threshold) flux += diff;
                    }
                    next[static_cast<std::size_t>(i)] = u[static_cast<std::size_t>(i)] + flux / 7.0;
                }
        u = std::move(next);
    }
    return u;
}

// Minimum within-cluster sum of squares over every assignment of the points
// to k clusters.
inline double exhaustive_wcss(const std::vector<double>& pts, int k) {
    const std::size_t n = pts.size();
    std::vector<int> a(n, 0);
    double best = std::numeric_limits<double>::infinity();
    while (true) {
        double sum[3] = {0, 0, 0}, sq[3] = {0, 0, 0}, cnt[3] = {0, 0, 0};
        for (std::size_t i = 0; i < n; ++i) {
            sum[a[i]] += pts[i];
            sq[a[i]] += pts[i] * pts[i];
            cnt[a[i]] += 1;
        }
        double w = 0;
        for (int c = 0; c < k; ++c)
            if (cnt[c] > 0) w += sq[c] - sum[c] * sum[c] / cnt[c];
        best = std::min(best, w);
        std::size_t i = 0;
        while (i < n && ++a[i] == k) a[i++] = 0;
        if (i == n) break;
    }
    return best;
}

// Gaussian elimination with partial pivoting on a dense row-major system.
inline std::vector<double> dense_solve(std::vector<double> A, std::vector<double> b) {
    const std::size_t n = b.size();
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t p = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(A[r * n + c]) > std::abs(A[p * n + c])) p = r;
        if (A[p * n + c] == 0) throw std::runtime_error("singular system");
        if (p != c) {
            for (std::size_t j = 0; j < n; ++j) std::swap(A[c * n + j], A[p * n + j]);
            std::swap(b[c], b[p]);
        }
        for (std::size_t r = c + 1; r < n; ++r) {
            const double f = A[r * n + c] / A[c * n + c];
            if (f == 0) continue;
            for (std::size_t j = c; j < n; ++j) A[r * n + j] -= f * A[c * n + j];
            b[r] -= f * b[c];
        }
    }
    std::vector<double> x(n);
    for (std::size_t c = n; c-- > 0;) {
        double s = b[c];
        for (std::size_t j = c + 1; j < n; ++j) s -= A[c * n + j] * x[j];
        x[c] = s / A[c * n + c];
    }
    return x;
}

inline double relative_residual(const std::vector<double>& A, const std::vector<double>& x, const std::vector<double>& b) {
    const std::size_t n = b.size();
    double rn = 0, bn = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < n; ++j) s += A[i * n + j] * x[j];
        rn += (s - b[i]) * (s - b[i]);
        bn += b[i] * b[i];
    }
    return std::sqrt(rn) / std::max(std::sqrt(bn), 1e-300);
}

// Squared distance to the nearest background voxel by scanning all of them.
inline std::vector<double> brute_edt(const Dims& d, const std::vector<std::uint8_t>& fg) {
    std::vector<std::size_t> bg;
    for (std::size_t i = 0; i < fg.size(); ++i)
        if (!fg[i]) bg.push_back(i);
    std::vector<double> out(fg.size(), 0.0);
    for (std::size_t z = 0; z < d.nz; ++z)
        for (std::size_t y = 0; y < d.ny; ++y)
            for (std::size_t x = 0; x < d.nx; ++x) {
                const std::size_t i = d.index(x, y, z);
                if (!fg[i]) continue;
                double best = std::numeric_limits<double>::infinity();
                for (std::size_t j : bg) {
                    const double bx = static_cast<double>(j % d.nx), by = static_cast<double>((j / d.nx) % d.ny),
                                 bz = static_cast<double>(j / (d.nx * d.ny));
                    const double dx = bx - x, dy = by - y, dz = bz - z;
                    best = std::min(best, dx * dx + dy * dy + dz * dz);
                }
                out[i] = best;
            }
    return out;
}

// Minimal legacy VTK STRUCTURED_POINTS reader.
struct VtkFile {
    std::string title, encoding, scalar_type, array_name;
    std::size_t dims[3] = {0, 0, 0};
    double spacing[3] = {0, 0, 0}, origin[3] = {0, 0, 0};
    std::size_t points = 0;
    std::vector<double> scalars;
};

inline VtkFile parse_vtk(const std::string& bytes) {
    VtkFile f;
    std::size_t pos = 0;
    auto line = [&]() {
        const std::size_t e = bytes.find('\n', pos);
        if (e == std::string::npos) throw std::runtime_error("truncated header");
        std::string s = bytes.substr(pos, e - pos);
        pos = e + 1;
        return s;
    };
    if (line().rfind("# vtk DataFile Version", 0) != 0) throw std::runtime_error("bad magic");
    f.title = line();
    f.encoding = line();
    if (line() != "DATASET STRUCTURED_POINTS") throw std::runtime_error("not structured points");
    for (int seen = 0; seen < 5;) {
        std::istringstream is(line());
        std::string key;
        is >> key;
        if (key == "DIMENSIONS") is >> f.dims[0] >> f.dims[1] >> f.dims[2];
        else if (key == "SPACING" || key == "ASPECT_RATIO") is >> f.spacing[0] >> f.spacing[1] >> f.spacing[2];
        else if (key == "ORIGIN") is >> f.origin[0] >> f.origin[1] >> f.origin[2];
        else if (key == "POINT_DATA") is >> f.points;
        else if (key == "SCALARS") {
            int comps = 1;
            is >> f.array_name >> f.scalar_type >> comps;
            if (comps != 1) throw std::runtime_error("multi-component scalars");
        } else throw std::runtime_error("unexpected header key " + key);
        ++seen;
    }
    if (line() != "LOOKUP_TABLE default") throw std::runtime_error("missing lookup table");
    if (f.points != f.dims[0] * f.dims[1] * f.dims[2]) throw std::runtime_error("POINT_DATA mismatch");
    if (f.encoding == "ASCII") {
        std::istringstream is(bytes.substr(pos));
        double v;
        while (is >> v) f.scalars.push_back(v);
    } else if (f.encoding == "BINARY") {
        const std::size_t width = f.scalar_type == "unsigned_short" ? 2 : f.scalar_type == "unsigned_char" ? 1 : 0;
        if (!width) throw std::runtime_error("unsupported scalar type");
        if (bytes.size() < pos + f.points * width) throw std::runtime_error("short payload");
        for (std::size_t i = 0; i < f.points; ++i) {
            const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos + i * width);
            f.scalars.push_back(width == 2 ? (p[0] << 8) | p[1] : p[0]);
        }
    } else {
        throw std::runtime_error("bad encoding");
    }
    if (f.scalars.size() != f.points) throw std::runtime_error("scalar count mismatch");
    return f;
}

}  // namespace rockseg::test
