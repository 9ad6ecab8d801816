#pragma once

#include "cloudtomo/cloud.hpp"
#include "cloudtomo/measurements.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace cloudtomo {

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& file);

/// Shortest text that reads back to the same double (%.17g).
std::string format_double(double value);

// GridFile: header lines (dims, voxel_size, base_height, effective_variance, records),
// then one "i j k lwc re" record per masked voxel in lexicographic order.
void write_grid(std::ostream& out, const VoxelCloud& cloud);
VoxelCloud read_grid(std::istream& in);
void save_grid(const std::filesystem::path& file, const VoxelCloud& cloud);
VoxelCloud load_grid(const std::filesystem::path& file);

void save_measurements(const std::filesystem::path& file, const MeasurementSet& set);
MeasurementSet load_measurements(const std::filesystem::path& file);

/// 16-bit binary PGM, linearly scaled from [min, max] of values; the scaling is
/// recorded as a header comment "value = offset + scale * pixel".
void save_pgm16(const std::filesystem::path& file, const Eigen::ArrayXd& values, int width, int height);

/// Writes a CSV with a header row; numbers use format_double.
void save_csv(const std::filesystem::path& file, const std::vector<std::string>& header,
              const std::vector<std::vector<double>>& rows);

void save_text(const std::filesystem::path& file, std::string_view text);
std::string load_text(const std::filesystem::path& file);

}  // namespace cloudtomo
