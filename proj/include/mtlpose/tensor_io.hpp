#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mtlpose/tensor.hpp"

namespace mtlpose {

// Binary tensor layout (little-endian):
//   bytes 0-3   magic "MTLT"
//   byte  4     format version (1)
//   byte  5     dtype: 1 = float64, 2 = uint8
//   bytes 6-7   rank (uint16)
//   then rank x uint64 dims, then the row-major payload.
inline constexpr std::uint8_t kTensorFormatVersion = 1;

enum class DType : std::uint8_t { Float64 = 1, UInt8 = 2 };

struct ByteTensor {
    Shape shape;
    std::vector<std::uint8_t> data;
};

std::string encode_tensor(const Tensor& t);
std::string encode_tensor(const ByteTensor& t);
/// Throws CorruptDataset on bad magic, dtype, shape or truncated payload.
Tensor decode_f64_tensor(std::string_view bytes);
ByteTensor decode_u8_tensor(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);
/// Throws IoError naming the path.
void write_file(const std::filesystem::path& path, std::string_view bytes);

std::uint32_t crc32_of(std::string_view bytes);

}  // namespace mtlpose
