#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "compresslab/core/errors.hpp"
#include "compresslab/core/tensor.hpp"

// Named-tensor checkpoint container. Little-endian layout:
//   magic "CLTC" | u32 version(=1) | u32 tensor count
//   per tensor: u32 name length | name bytes | u32 rank | i32 dims[rank] |
//               f32 values (row-major)

namespace clab {

namespace detail {

inline void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& is, const std::string& what) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw DataError("checkpoint truncated while reading " + what);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace detail

inline void save_checkpoint(const std::string& path,
                            const std::vector<std::pair<std::string, Tensor>>& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open checkpoint for writing: " + path);
    os.write("CLTC", 4);
    detail::write_u32(os, 1);
    detail::write_u32(os, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        detail::write_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_u32(os, static_cast<uint32_t>(t.ndim()));
        for (int d = 0; d < t.ndim(); ++d)
            detail::write_u32(os, static_cast<uint32_t>(t.dim(d)));
        os.write(reinterpret_cast<const char*>(t.data()),
                 static_cast<std::streamsize>(sizeof(float) * t.numel()));
    }
    if (!os) throw DataError("write failure on checkpoint: " + path);
}

inline std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "CLTC", 4) != 0)
        throw DataError("not a checkpoint file: " + path);
    uint32_t version = detail::read_u32(is, "version");
    if (version != 1)
        throw DataError("unsupported checkpoint version " + std::to_string(version) +
                        " in " + path);
    uint32_t count = detail::read_u32(is, "tensor count");
    std::map<std::string, Tensor> out;
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t name_len = detail::read_u32(is, "name length");
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw DataError("checkpoint truncated while reading tensor name");
        uint32_t rank = detail::read_u32(is, "rank");
        if (rank > 8) throw DataError("implausible tensor rank in checkpoint: " + path);
        Shape shape(rank);
        for (uint32_t d = 0; d < rank; ++d)
            shape[d] = static_cast<int>(detail::read_u32(is, "dimension"));
        std::vector<float> data(static_cast<size_t>(shape_numel(shape)));
        is.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(sizeof(float) * data.size()));
        if (!is) throw DataError("checkpoint truncated in tensor '" + name + "'");
        out.emplace(name, Tensor::from_data(shape, std::move(data)));
    }
    return out;
}

}  // namespace clab
