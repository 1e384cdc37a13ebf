#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "dynint/error.hpp"

namespace dynint {

// Named tensor blocks with shape headers. Layout (little-endian):
//   magic "DYNC" | u16 version | u32 block count
//   per block: u16 name length | name bytes | u8 ndim | u64 dims... | f64 data
constexpr std::uint16_t kCheckpointVersion = 1;

struct TensorBlock {
    std::vector<std::uint64_t> dims;
    std::vector<double> data;
};

using TensorMap = std::map<std::string, TensorBlock>;

inline void write_tensor_map(std::ostream& out, const TensorMap& tensors) {
    out.write("DYNC", 4);
    std::uint16_t ver = kCheckpointVersion;
    out.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
    std::uint32_t count = static_cast<std::uint32_t>(tensors.size());
    out.write(reinterpret_cast<const char*>(&count), sizeof(count));
    for (const auto& [name, block] : tensors) {
        std::uint16_t len = static_cast<std::uint16_t>(name.size());
        out.write(reinterpret_cast<const char*>(&len), sizeof(len));
        out.write(name.data(), len);
        std::uint8_t ndim = static_cast<std::uint8_t>(block.dims.size());
        out.write(reinterpret_cast<const char*>(&ndim), sizeof(ndim));
        for (auto d : block.dims) out.write(reinterpret_cast<const char*>(&d), sizeof(d));
        out.write(reinterpret_cast<const char*>(block.data.data()),
                  static_cast<std::streamsize>(block.data.size() * sizeof(double)));
    }
}

inline TensorMap read_tensor_map(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "DYNC", 4) != 0)
        throw FormatError("not a DYNC checkpoint (bad magic)");
    std::uint16_t ver = 0;
    in.read(reinterpret_cast<char*>(&ver), sizeof(ver));
    if (ver != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(ver));
    std::uint32_t count = 0;
    in.read(reinterpret_cast<char*>(&count), sizeof(count));
    TensorMap tensors;
    for (std::uint32_t b = 0; b < count; ++b) {
        std::uint16_t len = 0;
        in.read(reinterpret_cast<char*>(&len), sizeof(len));
        std::string name(len, '\0');
        in.read(name.data(), len);
        std::uint8_t ndim = 0;
        in.read(reinterpret_cast<char*>(&ndim), sizeof(ndim));
        TensorBlock block;
        std::uint64_t total = 1;
        for (std::uint8_t d = 0; d < ndim; ++d) {
            std::uint64_t dim = 0;
            in.read(reinterpret_cast<char*>(&dim), sizeof(dim));
            block.dims.push_back(dim);
            total *= dim;
        }
        block.data.resize(total);
        in.read(reinterpret_cast<char*>(block.data.data()),
                static_cast<std::streamsize>(total * sizeof(double)));
        if (!in) throw FormatError("truncated checkpoint block '" + name + "'");
        tensors.emplace(std::move(name), std::move(block));
    }
    return tensors;
}

inline void write_tensor_map_file(const std::string& path, const TensorMap& tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint: " + path);
    write_tensor_map(out, tensors);
}

inline TensorMap read_tensor_map_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint: " + path);
    return read_tensor_map(in);
}

}  // namespace dynint
