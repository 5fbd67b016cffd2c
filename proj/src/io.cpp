#include "psvma/io.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace psvma::io {

namespace {

void write_blob(const std::filesystem::path& path, const void* data, std::size_t bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for write: " + path.string());
    f.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::vector<char> read_blob(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw std::runtime_error("cannot open for read: " + path.string());
    auto size = f.tellg();
    f.seekg(0);
    std::vector<char> buf(static_cast<std::size_t>(size));
    f.read(buf.data(), size);
    if (!f) throw std::runtime_error("read failed: " + path.string());
    return buf;
}

}  // namespace

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

void write_f32(const std::filesystem::path& path, const std::vector<double>& values) {
    std::vector<float> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i)
        out[i] = static_cast<float>(values[i]);
    write_blob(path, out.data(), out.size() * sizeof(float));
}

std::vector<double> read_f32(const std::filesystem::path& path,
                             std::size_t expected_count) {
    auto buf = read_blob(path);
    if (buf.size() != expected_count * sizeof(float))
        throw std::runtime_error("shape inconsistency in " + path.string() + ": " +
                                 std::to_string(buf.size()) + " bytes, expected " +
                                 std::to_string(expected_count * sizeof(float)));
    std::vector<double> out(expected_count);
    const float* p = reinterpret_cast<const float*>(buf.data());
    for (std::size_t i = 0; i < expected_count; ++i)
        out[i] = static_cast<double>(p[i]);
    return out;
}

void write_f64(const std::filesystem::path& path, const std::vector<double>& values) {
    write_blob(path, values.data(), values.size() * sizeof(double));
}

std::vector<double> read_f64(const std::filesystem::path& path,
                             std::size_t expected_count) {
    auto buf = read_blob(path);
    if (buf.size() != expected_count * sizeof(double))
        throw std::runtime_error("shape inconsistency in " + path.string() + ": " +
                                 std::to_string(buf.size()) + " bytes, expected " +
                                 std::to_string(expected_count * sizeof(double)));
    std::vector<double> out(expected_count);
    const double* p = reinterpret_cast<const double*>(buf.data());
    for (std::size_t i = 0; i < expected_count; ++i) out[i] = p[i];
    return out;
}

std::string sha256_file(const std::filesystem::path& path) {
    auto buf = read_blob(path);
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(buf.data(), buf.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 failed for " + path.string());
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

}  // namespace psvma::io
