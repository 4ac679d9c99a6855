#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace rockseg {

struct Dims {
    std::size_t nx = 0;
    std::size_t ny = 0;
    std::size_t nz = 0;

    std::size_t count() const noexcept { return nx * ny * nz; }
    std::size_t slice_size() const noexcept { return nx * ny; }
    std::size_t index(std::size_t x, std::size_t y, std::size_t z) const noexcept {
        return (z * ny + y) * nx + x;
    }
    std::string str() const;

    friend bool operator==(const Dims&, const Dims&) = default;
};

// Start voxel (inclusive) plus extents.
struct Roi {
    std::size_t x0 = 0, y0 = 0, z0 = 0;
    std::size_t dx = 1, dy = 1, dz = 1;

    static Roi full(const Dims& d) { return {0, 0, 0, d.nx, d.ny, d.nz}; }

    // Throws ErrorCode::bounds naming both geometries.
    void check_within(const Dims& parent) const;
    std::string str() const;

    friend bool operator==(const Roi&, const Roi&) = default;
};

// Scalar intensity grid, slice-major with x fastest. Samples are held as
// 16-bit regardless of bit depth; bit_depth bounds the admissible values.
class VoxelVolume {
public:
    VoxelVolume() = default;
    VoxelVolume(Dims dims, int bit_depth, double voxel_size, std::vector<std::uint16_t> data);

    static VoxelVolume filled(Dims dims, int bit_depth, double voxel_size, std::uint16_t value);

    const Dims& dims() const noexcept { return dims_; }
    std::size_t nx() const noexcept { return dims_.nx; }
    std::size_t ny() const noexcept { return dims_.ny; }
    std::size_t nz() const noexcept { return dims_.nz; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }
    int bit_depth() const noexcept { return bit_depth_; }
    double voxel_size() const noexcept { return voxel_size_; }
    std::uint16_t max_value() const noexcept { return bit_depth_ == 8 ? 255 : 65535; }

    std::span<const std::uint16_t> data() const noexcept { return data_; }
    std::span<const std::uint16_t> slice(std::size_t z) const noexcept {
        return std::span<const std::uint16_t>(data_).subspan(z * dims_.slice_size(), dims_.slice_size());
    }
    std::uint16_t at(std::size_t x, std::size_t y, std::size_t z) const noexcept {
        return data_[dims_.index(x, y, z)];
    }

    friend bool operator==(const VoxelVolume&, const VoxelVolume&) = default;

private:
    Dims dims_;
    int bit_depth_ = 16;
    double voxel_size_ = 1.0;
    std::vector<std::uint16_t> data_;
};

// Per-voxel class labels; 0 is reserved for masked voxels, phases are 1..k.
class LabelVolume {
public:
    LabelVolume() = default;
    LabelVolume(Dims dims, double voxel_size, std::vector<std::uint8_t> labels, int k,
                std::vector<std::string> class_names = {});

    const Dims& dims() const noexcept { return dims_; }
    std::size_t nx() const noexcept { return dims_.nx; }
    std::size_t ny() const noexcept { return dims_.ny; }
    std::size_t nz() const noexcept { return dims_.nz; }
    std::size_t size() const noexcept { return labels_.size(); }
    bool empty() const noexcept { return labels_.empty(); }
    double voxel_size() const noexcept { return voxel_size_; }
    int k() const noexcept { return k_; }
    const std::vector<std::string>& class_names() const noexcept { return class_names_; }

    std::span<const std::uint8_t> labels() const noexcept { return labels_; }
    std::span<const std::uint8_t> slice(std::size_t z) const noexcept {
        return std::span<const std::uint8_t>(labels_).subspan(z * dims_.slice_size(), dims_.slice_size());
    }
    std::uint8_t at(std::size_t x, std::size_t y, std::size_t z) const noexcept {
        return labels_[dims_.index(x, y, z)];
    }

    friend bool operator==(const LabelVolume&, const LabelVolume&) = default;

private:
    Dims dims_;
    double voxel_size_ = 1.0;
    int k_ = 0;
    std::vector<std::uint8_t> labels_;
    std::vector<std::string> class_names_;
};

}  // namespace rockseg
