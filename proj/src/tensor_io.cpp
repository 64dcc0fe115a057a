#include "mtlpose/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <zlib.h>

#include "mtlpose/errors.hpp"

namespace mtlpose {

static_assert(std::endian::native == std::endian::little, "tensor files are written in host order");

namespace {

std::string header(DType dtype, const Shape& shape) {
    std::string out = "MTLT";
    out.push_back(static_cast<char>(kTensorFormatVersion));
    out.push_back(static_cast<char>(dtype));
    const auto rank = static_cast<std::uint16_t>(shape.size());
    out.append(reinterpret_cast<const char*>(&rank), sizeof rank);
    for (auto d : shape) {
        const auto u = static_cast<std::uint64_t>(d);
        out.append(reinterpret_cast<const char*>(&u), sizeof u);
    }
    return out;
}

// Returns the payload view after validating the header against the expected dtype.
std::string_view parse_header(std::string_view bytes, DType expected, Shape& shape) {
    if (bytes.size() < 8 || bytes.substr(0, 4) != "MTLT") throw CorruptDataset("tensor: bad magic");
    if (static_cast<std::uint8_t>(bytes[4]) != kTensorFormatVersion) throw CorruptDataset("tensor: unsupported version");
    if (static_cast<std::uint8_t>(bytes[5]) != static_cast<std::uint8_t>(expected))
        throw CorruptDataset("tensor: unexpected dtype");
    std::uint16_t rank = 0;
    std::memcpy(&rank, bytes.data() + 6, sizeof rank);
    const std::size_t dims_end = 8 + static_cast<std::size_t>(rank) * 8;
    if (bytes.size() < dims_end) throw CorruptDataset("tensor: truncated shape");
    shape.resize(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        std::uint64_t d = 0;
        std::memcpy(&d, bytes.data() + 8 + i * 8, sizeof d);
        if (d > (1ull << 40)) throw CorruptDataset("tensor: implausible dimension");
        shape[i] = static_cast<std::int64_t>(d);
    }
    const std::size_t elem = expected == DType::Float64 ? 8 : 1;
    const std::size_t payload = shape_numel(shape) * elem;
    if (bytes.size() != dims_end + payload)
        throw CorruptDataset("tensor: payload is " + std::to_string(bytes.size() - dims_end) + " bytes, shape " +
                             shape_str(shape) + " needs " + std::to_string(payload));
    return bytes.substr(dims_end);
}

}  // namespace

std::string encode_tensor(const Tensor& t) {
    std::string out = header(DType::Float64, t.shape);
    out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(double));
    return out;
}

std::string encode_tensor(const ByteTensor& t) {
    if (t.data.size() != shape_numel(t.shape)) throw ShapeError("byte tensor size does not match its shape");
    std::string out = header(DType::UInt8, t.shape);
    out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size());
    return out;
}

Tensor decode_f64_tensor(std::string_view bytes) {
    Shape shape;
    const auto payload = parse_header(bytes, DType::Float64, shape);
    std::vector<double> data(shape_numel(shape));
    std::memcpy(data.data(), payload.data(), payload.size());
    return Tensor(std::move(shape), std::move(data));
}

ByteTensor decode_u8_tensor(std::string_view bytes) {
    ByteTensor t;
    const auto payload = parse_header(bytes, DType::UInt8, t.shape);
    t.data.assign(payload.begin(), payload.end());
    return t;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw IoError("read failed: " + path.string());
    return std::move(ss).str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    if (!out) throw IoError("write failed: " + path.string());
}

std::uint32_t crc32_of(std::string_view bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
    return static_cast<std::uint32_t>(crc);
}

}  // namespace mtlpose
