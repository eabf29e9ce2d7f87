#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "compresslab/core/errors.hpp"

// Compressed-image container (.clb). Fixed 32-byte little-endian header
// followed by the entropy-coded payload; full byte layout in FORMATS.md.
// Rate accounting treats header and payload separately: bpp is defined on
// payload bits alone, header bits are reported by header_bits().

namespace clab {

enum CodecId : uint16_t {
    kCodecDct = 1,
    kCodecLossless = 2,
    kCodecLearned = 3,
};

struct BitstreamHeader {
    uint16_t codec_id = 0;
    uint32_t width = 0;
    uint32_t height = 0;
    uint16_t channels = 0;
    float knob = 0.0f;  // quality for DCT, lambda for the learned codec
};

struct Bitstream {
    BitstreamHeader header;
    std::vector<uint8_t> payload;

    static constexpr size_t kHeaderBytes = 32;
    static constexpr uint16_t kVersion = 1;

    double bpp() const {
        return static_cast<double>(payload.size()) * 8.0 /
               (static_cast<double>(header.width) * header.height);
    }
    size_t header_bits() const { return kHeaderBytes * 8; }

    std::vector<uint8_t> serialize() const {
        std::vector<uint8_t> out(kHeaderBytes + payload.size());
        uint8_t* p = out.data();
        std::memcpy(p, "CLB1", 4);
        put_u16(p + 4, kVersion);
        put_u16(p + 6, header.codec_id);
        put_u32(p + 8, header.width);
        put_u32(p + 12, header.height);
        put_u16(p + 16, header.channels);
        put_u16(p + 18, 0);  // reserved
        uint32_t knob_bits;
        std::memcpy(&knob_bits, &header.knob, 4);
        put_u32(p + 20, knob_bits);
        uint64_t len = payload.size();
        for (int i = 0; i < 8; ++i)
            p[24 + i] = static_cast<uint8_t>(len >> (8 * i));
        std::memcpy(p + kHeaderBytes, payload.data(), payload.size());
        return out;
    }

    static Bitstream parse(const uint8_t* data, size_t size) {
        if (size < kHeaderBytes)
            throw CorruptStreamError("bitstream shorter than header", size);
        if (std::memcmp(data, "CLB1", 4) != 0)
            throw CorruptStreamError("bad bitstream magic", 0);
        uint16_t version = get_u16(data + 4);
        if (version != kVersion)
            throw DataError("unsupported bitstream version " + std::to_string(version));
        Bitstream bs;
        bs.header.codec_id = get_u16(data + 6);
        bs.header.width = get_u32(data + 8);
        bs.header.height = get_u32(data + 12);
        bs.header.channels = get_u16(data + 16);
        uint32_t knob_bits = get_u32(data + 20);
        std::memcpy(&bs.header.knob, &knob_bits, 4);
        uint64_t len = 0;
        for (int i = 0; i < 8; ++i)
            len |= static_cast<uint64_t>(data[24 + i]) << (8 * i);
        if (bs.header.width == 0 || bs.header.height == 0)
            throw CorruptStreamError("bitstream header has zero dimensions", 8);
        if (size - kHeaderBytes < len)
            throw CorruptStreamError("bitstream payload truncated", size);
        bs.payload.assign(data + kHeaderBytes, data + kHeaderBytes + len);
        return bs;
    }

    static Bitstream parse(const std::vector<uint8_t>& bytes) {
        return parse(bytes.data(), bytes.size());
    }

    void save(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw DataError("cannot open bitstream for writing: " + path);
        auto bytes = serialize();
        os.write(reinterpret_cast<const char*>(bytes.data()),
                 static_cast<std::streamsize>(bytes.size()));
        if (!os) throw DataError("write failure on bitstream: " + path);
    }

    static Bitstream load(const std::string& path) {
        std::ifstream is(path, std::ios::binary | std::ios::ate);
        if (!is) throw DataError("cannot open bitstream: " + path);
        auto size = static_cast<size_t>(is.tellg());
        is.seekg(0);
        std::vector<uint8_t> bytes(size);
        is.read(reinterpret_cast<char*>(bytes.data()),
                static_cast<std::streamsize>(size));
        if (!is) throw DataError("read failure on bitstream: " + path);
        return parse(bytes);
    }

private:
    static void put_u16(uint8_t* p, uint16_t v) {
        p[0] = static_cast<uint8_t>(v);
        p[1] = static_cast<uint8_t>(v >> 8);
    }
    static void put_u32(uint8_t* p, uint32_t v) {
        for (int i = 0; i < 4; ++i) p[i] = static_cast<uint8_t>(v >> (8 * i));
    }
    static uint16_t get_u16(const uint8_t* p) {
        return static_cast<uint16_t>(p[0] | (p[1] << 8));
    }
    static uint32_t get_u32(const uint8_t* p) {
        return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
               (static_cast<uint32_t>(p[2]) << 16) |
               (static_cast<uint32_t>(p[3]) << 24);
    }
};

}  // namespace clab
