#pragma once

#include "rockseg/volume.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace rockseg {

enum class ByteOrder { little, big };

ByteOrder parse_byte_order(const std::string& s);

struct RawGeometry {
    Dims dims;
    int bit_depth = 16;
    ByteOrder byte_order = ByteOrder::little;
    double voxel_size = 1.0;
    // Slices stored y-fastest (column-major) on disk; transposed on load.
    bool transpose = false;
};

// Headerless raw stack, slices read sequentially. Trailing bytes beyond the
// requested geometry are ignored.
VoxelVolume load_raw(const std::filesystem::path& path, const RawGeometry& geometry);

// Inverse of load_raw for the same geometry (transpose is honoured).
void export_raw(const VoxelVolume& vol, const std::filesystem::path& path,
                ByteOrder order = ByteOrder::little, bool transpose = false);

// Label volumes as one byte per voxel, same layout as intensities.
void export_labels_raw(const LabelVolume& labels, const std::filesystem::path& path);
LabelVolume load_labels_raw(const std::filesystem::path& path, const Dims& dims, double voxel_size);

// Baseline grayscale TIFF (8/16 bit, uncompressed or deflate, strips). One
// file per slice, in the order given.
VoxelVolume load_tiff_stack(const std::vector<std::filesystem::path>& paths, double voxel_size = 1.0);

VoxelVolume crop(const VoxelVolume& vol, const Roi& roi);
LabelVolume crop(const LabelVolume& labels, const Roi& roi);

// Block mean over factor^3 blocks, partial border blocks averaged over the
// voxels present. Result is rounded to nearest.
VoxelVolume downsample(const VoxelVolume& vol, int factor);

enum class VtkEncoding { ascii, binary };

// Legacy VTK STRUCTURED_POINTS.
void export_vtk(const VoxelVolume& vol, const std::filesystem::path& path,
                VtkEncoding encoding = VtkEncoding::binary);
void export_vtk(const LabelVolume& labels, const std::filesystem::path& path,
                VtkEncoding encoding = VtkEncoding::binary);
std::string to_vtk(const VoxelVolume& vol, VtkEncoding encoding);
std::string to_vtk(const LabelVolume& labels, VtkEncoding encoding);

struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
    // Optional text key per row, written as the first column.
    std::vector<std::string> row_names;
};

std::string format_number(double v);
std::string to_csv(const Table& table);
void export_csv(const Table& table, const std::filesystem::path& path);

// Whole-file helpers shared by the CLI and the service.
std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temp file and renames, so readers never see a partial file.
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace rockseg
