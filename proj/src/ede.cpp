#include "rockseg/ede.hpp"

#include "rockseg/error.hpp"
#include "rockseg/io.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace rockseg {

PhaseMap PhaseMap::defaults() {
    return PhaseMap{{{"noise", 0, 0},
                     {"edl", 1, 2},
                     {"brine", 1, 3},
                     {"quartz", 4, 4},
                     {"edh", 5, 5},
                     {"hydrate", 6, 7}}};
}

PhaseMap PhaseMap::parse(const std::string& spec) {
    if (spec.empty() || spec == "default") return defaults();
    PhaseMap map;
    std::istringstream in(spec);
    std::string item;
    while (std::getline(in, item, ',')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) fail(ErrorCode::parameter, "phase map entry '" + item + "' lacks '='");
        PhaseRange r;
        r.name = item.substr(0, eq);
        const std::string range = item.substr(eq + 1);
        try {
            const auto dash = range.find('-');
            r.lo = std::stoi(range.substr(0, dash));
            r.hi = dash == std::string::npos ? r.lo : std::stoi(range.substr(dash + 1));
        } catch (const std::exception&) {
            fail(ErrorCode::parameter, "phase map range '" + range + "' is not 'n' or 'lo-hi'");
        }
        map.phases.push_back(r);
    }
    return map;
}

std::vector<std::string> PhaseMap::validate() const {
    std::set<std::string> names;
    for (const auto& p : phases) {
        if (p.name.empty()) fail(ErrorCode::parameter, "phase map has an unnamed phase");
        if (!names.insert(p.name).second) fail(ErrorCode::parameter, "phase '" + p.name + "' appears twice in the phase map");
        if (p.lo < 0 || p.hi < p.lo || p.hi > 255)
            fail(ErrorCode::parameter, "phase '" + p.name + "' has invalid label range " + std::to_string(p.lo) + ".." +
                                           std::to_string(p.hi));
    }
    std::vector<std::string> warnings;
    for (std::size_t a = 0; a < phases.size(); ++a)
        for (std::size_t b = a + 1; b < phases.size(); ++b)
            if (phases[a].lo <= phases[b].hi && phases[b].lo <= phases[a].hi)
                warnings.push_back("indexing ranges of " + phases[a].name + " and " + phases[b].name + " overlap");
    return warnings;
}

const PhaseRange* PhaseMap::find(const std::string& name) const {
    for (const auto& p : phases)
        if (p.name == name) return &p;
    return nullptr;
}

std::string PhaseMap::str() const {
    std::string s;
    for (const auto& p : phases) {
        if (!s.empty()) s += ',';
        s += p.name + "=" + std::to_string(p.lo);
        if (p.hi != p.lo) s += "-" + std::to_string(p.hi);
    }
    return s;
}

const PhaseStat& PhaseStats::get(const std::string& name) const {
    for (const auto& p : phases)
        if (p.name == name) return p;
    fail(ErrorCode::parameter, "no statistics for phase '" + name + "'");
}

std::map<std::string, int> default_phase_bins() { return {{"noise", 10}, {"edh", 10}}; }

namespace {

// Equal-width bins spanning [min, max], like MATLAB's hist(x, n).
void histogram(const std::vector<std::uint16_t>& v, int bins, PhaseStat& s) {
    s.bin_centers.assign(static_cast<std::size_t>(bins), 0.0);
    s.bin_counts.assign(static_cast<std::size_t>(bins), 0);
    const double width = (s.max - s.min) / bins;
    for (int i = 0; i < bins; ++i)
        s.bin_centers[static_cast<std::size_t>(i)] = width > 0 ? s.min + (i + 0.5) * width : s.min - bins / 2.0 + i + 0.5;
    for (std::uint16_t x : v) {
        std::size_t b;
        if (width > 0) b = std::min(static_cast<std::size_t>((x - s.min) / width), static_cast<std::size_t>(bins - 1));
        else b = static_cast<std::size_t>(bins / 2);
        ++s.bin_counts[b];
    }
}

}  // namespace

PhaseStats phase_index_stats(const VoxelVolume& raw, const LabelVolume& seg, const PhaseMap& map,
                             const std::map<std::string, int>& bins) {
    if (raw.dims() != seg.dims())
        fail(ErrorCode::dimension_mismatch, "raw volume " + raw.dims().str() + " and segmentation " + seg.dims().str() +
                                                " differ in size");
    PhaseStats out;
    out.warnings = map.validate();
    std::vector<std::uint8_t> present(256, 0);
    for (std::uint8_t l : seg.labels()) present[l] = 1;

    for (const auto& range : map.phases) {
        PhaseStat s;
        s.name = range.name;
        std::vector<std::uint16_t> values;
        for (std::size_t i = 0; i < raw.size(); ++i) {
            const int l = seg.labels()[i];
            if (l >= range.lo && l <= range.hi) values.push_back(raw.data()[i]);
        }
        const auto nb = bins.count(range.name) ? bins.at(range.name) : 100;
        if (nb < 1) fail(ErrorCode::parameter, "histogram bins for " + range.name + " must be >= 1");
        if (!present[static_cast<std::size_t>(range.lo)] || !present[static_cast<std::size_t>(range.hi)])
            out.warnings.push_back(range.name + ": labels " + std::to_string(range.lo) + ".." + std::to_string(range.hi) +
                                   " are not all present at the range ends");
        if (values.empty()) {
            out.warnings.push_back(range.name + ": phase is empty, statistics undefined");
            out.phases.push_back(std::move(s));
            continue;
        }
        s.empty = false;
        s.count = values.size();
        const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
        s.min = *mn;
        s.max = *mx;
        double sum = 0;
        for (auto v : values) sum += v;
        s.mean = sum / static_cast<double>(values.size());
        double m2 = 0, m3 = 0;
        for (auto v : values) {
            const double d = v - s.mean;
            m2 += d * d;
            m3 += d * d * d;
        }
        m2 /= static_cast<double>(values.size());
        m3 /= static_cast<double>(values.size());
        s.std = std::sqrt(m2);
        s.skewness = m2 > 0 ? m3 / std::pow(m2, 1.5) : 0.0;
        histogram(values, nb, s);
        out.phases.push_back(std::move(s));
    }

    for (std::size_t a = 0; a < out.phases.size(); ++a)
        for (std::size_t b = a + 1; b < out.phases.size(); ++b) {
            const auto& p = out.phases[a];
            const auto& q = out.phases[b];
            if (p.empty || q.empty) continue;
            const double lo = std::max(p.min, q.min), hi = std::min(p.max, q.max);
            if (lo <= hi) out.overlaps.push_back(p.name + "/" + q.name + ": " + format_number(lo) + ".." + format_number(hi));
        }
    return out;
}

std::vector<Substitution> default_substitutions() {
    return {{"brine", "brine"}, {"quartz", "quartz"}, {"edh", "quartz"}, {"hydrate", "hydrate"}};
}

VoxelVolume rescale_phases(const VoxelVolume& raw, const PhaseStats& stats, const std::vector<Substitution>& subs) {
    for (const auto& s : subs) {
        for (const std::string& name : {s.phase, s.mean_of})
            if (stats.get(name).empty)
                fail(ErrorCode::empty_region, "phase '" + name + "' has no voxels; cannot rescale");
    }
    std::vector<std::string> collisions;
    for (std::size_t a = 0; a < subs.size(); ++a)
        for (std::size_t b = a + 1; b < subs.size(); ++b) {
            const auto& p = stats.get(subs[a].phase);
            const auto& q = stats.get(subs[b].phase);
            if (p.min <= q.max && q.min <= p.max)
                collisions.push_back(p.name + " [" + format_number(p.min) + ", " + format_number(p.max) + "] vs " + q.name +
                                     " [" + format_number(q.min) + ", " + format_number(q.max) + "]");
        }
    if (!collisions.empty()) {
        std::string msg = "intensity ranges of replaced phases overlap: ";
        for (std::size_t i = 0; i < collisions.size(); ++i) msg += (i ? "; " : "") + collisions[i];
        fail(ErrorCode::range_overlap, msg + " (repeat the phase indexing step)");
    }

    std::vector<std::uint16_t> data(raw.data().begin(), raw.data().end());
    const double top = raw.max_value();
    for (const auto& s : subs) {
        const auto& range = stats.get(s.phase);
        const auto value = static_cast<std::uint16_t>(std::clamp(std::round(stats.get(s.mean_of).mean), 0.0, top));
        const double lo = range.min, hi = range.max;
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(data.size()); ++i) {
            auto& v = data[static_cast<std::size_t>(i)];
            if (v >= lo && v <= hi) v = value;
        }
    }
    return VoxelVolume(raw.dims(), raw.bit_depth(), raw.voxel_size(), std::move(data));
}

void EdeConfig::validate(const Dims& dims) const {
    if (k1 < 1 || final_k < 1) fail(ErrorCode::parameter, "cluster counts must be >= 1");
    if (seg_slices.empty()) fail(ErrorCode::parameter, "at least one slice must be clustered in step 2");
    for (std::size_t z : seg_slices)
        if (z >= dims.nz)
            fail(ErrorCode::bounds, "step-2 slice " + std::to_string(z) + " outside volume " + dims.str());
    for (const char* need : {"brine", "quartz", "edh", "hydrate"})
        if (!map.find(need)) fail(ErrorCode::parameter, std::string("phase map lacks required phase '") + need + "'");
    for (const auto& p : map.phases)
        if (p.hi > k1)
            fail(ErrorCode::parameter, "phase '" + p.name + "' references label " + std::to_string(p.hi) +
                                           " above k1 = " + std::to_string(k1));
}

VoxelVolume gather_slices(const VoxelVolume& vol, const std::vector<std::size_t>& slices) {
    std::vector<std::uint16_t> data;
    data.reserve(slices.size() * vol.dims().slice_size());
    for (std::size_t z : slices) {
        if (z >= vol.nz()) fail(ErrorCode::bounds, "slice " + std::to_string(z) + " outside volume " + vol.dims().str());
        const auto s = vol.slice(z);
        data.insert(data.end(), s.begin(), s.end());
    }
    return VoxelVolume(Dims{vol.nx(), vol.ny(), slices.size()}, vol.bit_depth(), vol.voxel_size(), std::move(data));
}

EdeResult dual_cluster_pipeline(const VoxelVolume& raw, const EdeConfig& cfg, const RunControl& ctl) {
    cfg.validate(raw.dims());
    EdeResult r;

    // over-clustering of the selected slices
    ctl.checkpoint(0.0);
    const VoxelVolume sub = gather_slices(raw, cfg.seg_slices);
    KmeansConfig over;
    over.k = cfg.k1;
    over.restarts = cfg.restarts;
    over.mask_threshold = cfg.mask_threshold;
    over.seed = cfg.seed;
    ClusterResult c1 = kmeans_segment(sub, over);
    r.over_labels = std::move(c1.labels);
    r.over_centers = std::move(c1.centers);

    // indexing
    ctl.checkpoint(0.3);
    r.stats = phase_index_stats(sub, r.over_labels, cfg.map, cfg.bins);
    for (const auto& w : r.stats.warnings) r.advisory.push_back("warning: " + w);
    for (const auto& ov : r.stats.overlaps) {
        const auto slash = ov.find('/'), colon = ov.find(':');
        const PhaseRange* a = cfg.map.find(ov.substr(0, slash));
        const PhaseRange* b = cfg.map.find(ov.substr(slash + 1, colon - slash - 1));
        const bool by_map = a && b && a->lo <= b->hi && b->lo <= a->hi;
        r.advisory.push_back(by_map ? "note: intensity ranges " + ov + " overlap through shared labels"
                                    : "overlap: intensity ranges " + ov + " overlap; repeat step 3 with a revised phase map");
    }
    for (const auto& p : r.stats.phases)
        if (!p.empty && std::abs(p.skewness) > 1.0)
            r.advisory.push_back("skew: " + p.name + " histogram skewness " + format_number(p.skewness) +
                                 " suggests mixed phases");

    // rescaling of the whole stack
    ctl.checkpoint(0.5);
    r.rescaled = rescale_phases(raw, r.stats);

    // final clustering
    ctl.checkpoint(0.7);
    KmeansConfig fin;
    fin.k = cfg.final_k;
    fin.distance = Distance::sq_euclidean;
    fin.mask_threshold = cfg.mask_threshold;
    fin.seed = cfg.seed;
    if (cfg.final_k == 3) {
        fin.initial_centers = {r.stats.get("brine").mean, r.stats.get("quartz").mean, r.stats.get("hydrate").mean};
        fin.restarts = 1;
    } else {
        fin.restarts = cfg.restarts;
    }
    ClusterResult c2 = kmeans_segment(r.rescaled, fin);
    r.final_centers = std::move(c2.centers);
    std::vector<std::string> names;
    if (cfg.final_k == 3) names = {"brine", "quartz", "hydrate"};
    r.final_labels = LabelVolume(c2.labels.dims(), c2.labels.voxel_size(),
                                 std::vector<std::uint8_t>(c2.labels.labels().begin(), c2.labels.labels().end()),
                                 cfg.final_k, names);
    ctl.report(1.0);
    return r;
}

}  // namespace rockseg
