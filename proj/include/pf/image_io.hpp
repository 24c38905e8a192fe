#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pf/tensor.hpp"

namespace pf {

// 8-bit binary PPM (P6). Values are mapped [0,1] <-> round(v*255).
void write_ppm(const std::string& path, const Tensor& image);
TensorPtr read_ppm(const std::string& path);

// raw interleaved RGB bytes of a P6 file, for sentinel-pixel scans
struct RawPpm {
    int width = 0, height = 0;
    std::vector<std::uint8_t> rgb;
};
RawPpm read_ppm_bytes(const std::string& path);

// little-endian doubles, independent of host endianness
void write_doubles_le(std::ostream& os, const double* data, std::size_t n);
void read_doubles_le(std::istream& is, double* data, std::size_t n);

std::uint64_t file_digest(const std::string& path);

} // namespace pf
