#include "rockseg/volume.hpp"

#include "rockseg/control.hpp"
#include "rockseg/error.hpp"

#include <algorithm>
#include <sstream>

namespace rockseg {

const char* to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::io: return "io";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::bounds: return "bounds";
    case ErrorCode::parameter: return "parameter";
    case ErrorCode::unsupported_format: return "unsupported_format";
    case ErrorCode::degenerate_histogram: return "degenerate_histogram";
    case ErrorCode::infeasible: return "infeasible";
    case ErrorCode::conditioning: return "conditioning";
    case ErrorCode::empty_region: return "empty_region";
    case ErrorCode::range_overlap: return "range_overlap";
    case ErrorCode::coordinate: return "coordinate";
    case ErrorCode::validation: return "validation";
    case ErrorCode::cancelled: return "cancelled";
    }
    return "unknown";
}

void RunControl::checkpoint(double fraction) const {
    if (cancelled && cancelled()) fail(ErrorCode::cancelled, "run cancelled");
    report(fraction);
}

const RunControl& no_control() {
    static const RunControl none;
    return none;
}

std::string Dims::str() const {
    std::ostringstream os;
    os << nx << "x" << ny << "x" << nz;
    return os.str();
}

std::string Roi::str() const {
    std::ostringstream os;
    os << "origin (" << x0 << "," << y0 << "," << z0 << ") extent " << dx << "x" << dy << "x" << dz;
    return os.str();
}

void Roi::check_within(const Dims& parent) const {
    const bool ok = dx >= 1 && dy >= 1 && dz >= 1 && x0 + dx <= parent.nx && y0 + dy <= parent.ny &&
                    z0 + dz <= parent.nz;
    if (!ok) fail(ErrorCode::bounds, "ROI " + str() + " does not fit volume " + parent.str());
}

VoxelVolume::VoxelVolume(Dims dims, int bit_depth, double voxel_size, std::vector<std::uint16_t> data)
    : dims_(dims), bit_depth_(bit_depth), voxel_size_(voxel_size), data_(std::move(data)) {
    if (bit_depth != 8 && bit_depth != 16)
        fail(ErrorCode::parameter, "bit depth must be 8 or 16, got " + std::to_string(bit_depth));
    if (!(voxel_size > 0)) fail(ErrorCode::parameter, "voxel size must be positive");
    if (data_.size() != dims_.count())
        fail(ErrorCode::dimension_mismatch, "volume " + dims_.str() + " needs " + std::to_string(dims_.count()) +
                                                " samples, got " + std::to_string(data_.size()));
    if (bit_depth == 8 && std::any_of(data_.begin(), data_.end(), [](std::uint16_t v) { return v > 255; }))
        fail(ErrorCode::parameter, "8-bit volume holds a sample above 255");
}

VoxelVolume VoxelVolume::filled(Dims dims, int bit_depth, double voxel_size, std::uint16_t value) {
    return VoxelVolume(dims, bit_depth, voxel_size, std::vector<std::uint16_t>(dims.count(), value));
}

LabelVolume::LabelVolume(Dims dims, double voxel_size, std::vector<std::uint8_t> labels, int k,
                         std::vector<std::string> class_names)
    : dims_(dims), voxel_size_(voxel_size), k_(k), labels_(std::move(labels)), class_names_(std::move(class_names)) {
    if (k < 0 || k > 255) fail(ErrorCode::parameter, "class count must be in 0..255");
    if (!(voxel_size > 0)) fail(ErrorCode::parameter, "voxel size must be positive");
    if (labels_.size() != dims_.count())
        fail(ErrorCode::dimension_mismatch, "label volume " + dims_.str() + " needs " +
                                                std::to_string(dims_.count()) + " labels, got " +
                                                std::to_string(labels_.size()));
    if (std::any_of(labels_.begin(), labels_.end(), [k](std::uint8_t l) { return l > k; }))
        fail(ErrorCode::parameter, "label above class count " + std::to_string(k));
    if (!class_names_.empty() && class_names_.size() != static_cast<std::size_t>(k))
        fail(ErrorCode::parameter, "class_names must have one entry per class");
}

}  // namespace rockseg
