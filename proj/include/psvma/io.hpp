#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace psvma::io {

// Little-endian flat binary files. f32 is the dataset interchange format;
// f64 carries model parameters where bit-exact round-trips are required.
void write_f32(const std::filesystem::path& path, const std::vector<double>& values);
std::vector<double> read_f32(const std::filesystem::path& path,
                             std::size_t expected_count);
void write_f64(const std::filesystem::path& path, const std::vector<double>& values);
std::vector<double> read_f64(const std::filesystem::path& path,
                             std::size_t expected_count);

std::string sha256_file(const std::filesystem::path& path);

// Quantize through float so generated data is exactly representable in f32.
double to_f32(double v);

}  // namespace psvma::io
