#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "compresslab/core/errors.hpp"

// 32-bit renormalizing range coder with carry propagation through a byte
// cache. Three symbol paths share one stream: adaptive binary (12-bit
// probabilities, shift-5 update), fixed-probability bypass bits, and static
// multi-symbol coding from cumulative-frequency tables (totals <= 2^16).
// Encoder and decoder perform identical interval arithmetic, which is what
// makes the stream bit-exact across machines. Byte layout notes live in
// FORMATS.md.

namespace clab {

constexpr uint32_t kProbBits = 12;
constexpr uint32_t kProbOne = 1u << kProbBits;   // 4096
constexpr uint32_t kProbInit = kProbOne / 2;     // 2048
constexpr uint32_t kProbShift = 5;
constexpr uint32_t kTopValue = 1u << 24;

/// Probability that the next bit is 1, in [1, 4095], adapted after each bit.
struct AdaptiveBitModel {
    uint16_t p1 = kProbInit;

    void update(int bit) {
        if (bit)
            p1 = static_cast<uint16_t>(p1 + ((kProbOne - p1) >> kProbShift));
        else
            p1 = static_cast<uint16_t>(p1 - (p1 >> kProbShift));
    }
};

/// Static cumulative-frequency table for multi-symbol coding. Frequencies
/// are >= 1 so every symbol stays codable.
class CumFreqTable {
public:
    explicit CumFreqTable(const std::vector<uint32_t>& freqs) {
        if (freqs.empty()) throw UsageError("CumFreqTable: empty alphabet");
        cum_.resize(freqs.size() + 1);
        cum_[0] = 0;
        for (size_t i = 0; i < freqs.size(); ++i) {
            if (freqs[i] == 0)
                throw UsageError("CumFreqTable: zero frequency at symbol " +
                                 std::to_string(i));
            cum_[i + 1] = cum_[i] + freqs[i];
        }
        if (cum_.back() > (1u << 16))
            throw UsageError("CumFreqTable: total exceeds 2^16");
    }

    int num_symbols() const { return static_cast<int>(cum_.size()) - 1; }
    uint32_t total() const { return cum_.back(); }
    uint32_t cum(int s) const { return cum_[static_cast<size_t>(s)]; }
    uint32_t freq(int s) const {
        return cum_[static_cast<size_t>(s) + 1] - cum_[static_cast<size_t>(s)];
    }

    int find(uint32_t value) const {
        auto it = std::upper_bound(cum_.begin(), cum_.end(), value);
        return static_cast<int>(it - cum_.begin()) - 1;
    }

private:
    std::vector<uint32_t> cum_;
};

class RangeEncoder {
public:
    void encode_bit(AdaptiveBitModel& model, int bit) {
        uint32_t bound = (range_ >> kProbBits) * model.p1;
        if (bit) {
            range_ = bound;
        } else {
            low_ += bound;
            range_ -= bound;
        }
        model.update(bit);
        normalize();
    }

    void encode_bypass(int bit) {
        range_ >>= 1;
        if (bit) low_ += range_;
        normalize();
    }

    void encode_bypass_bits(uint32_t value, int nbits) {
        for (int i = nbits - 1; i >= 0; --i) encode_bypass((value >> i) & 1u);
    }

    void encode_symbol(const CumFreqTable& table, int sym) {
        uint32_t r = range_ / table.total();
        low_ += static_cast<uint64_t>(r) * table.cum(sym);
        if (sym + 1 == table.num_symbols())
            range_ -= r * table.cum(sym);  // last symbol absorbs the remainder
        else
            range_ = r * table.freq(sym);
        normalize();
    }

    /// Terminates the stream; the trailing bytes let the decoder renormalize
    /// to the end without reading past the payload.
    std::vector<uint8_t> finish() {
        for (int i = 0; i < 5; ++i) shift_low();
        return std::move(out_);
    }

private:
    void normalize() {
        while (range_ < kTopValue) {
            shift_low();
            range_ <<= 8;
        }
    }

    void shift_low() {
        if (static_cast<uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
            uint8_t carry = static_cast<uint8_t>(low_ >> 32);
            out_.push_back(static_cast<uint8_t>(cache_ + carry));
            while (--pending_ != 0)
                out_.push_back(static_cast<uint8_t>(0xFFu + carry));
            cache_ = static_cast<uint8_t>(low_ >> 24);
        }
        ++pending_;
        low_ = (low_ << 8) & 0xFFFFFFFFull;
    }

    uint64_t low_ = 0;
    uint32_t range_ = 0xFFFFFFFFu;
    uint8_t cache_ = 0;
    uint64_t pending_ = 1;
    std::vector<uint8_t> out_;
};

class RangeDecoder {
public:
    explicit RangeDecoder(const uint8_t* data, size_t size)
        : data_(data), size_(size) {
        next_byte();  // the encoder's initial zero cache byte
        for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
    }

    explicit RangeDecoder(const std::vector<uint8_t>& payload)
        : RangeDecoder(payload.data(), payload.size()) {}

    int decode_bit(AdaptiveBitModel& model) {
        uint32_t bound = (range_ >> kProbBits) * model.p1;
        int bit;
        if (code_ < bound) {
            bit = 1;
            range_ = bound;
        } else {
            bit = 0;
            code_ -= bound;
            range_ -= bound;
        }
        model.update(bit);
        normalize();
        return bit;
    }

    int decode_bypass() {
        range_ >>= 1;
        int bit = 0;
        if (code_ >= range_) {
            code_ -= range_;
            bit = 1;
        }
        normalize();
        return bit;
    }

    uint32_t decode_bypass_bits(int nbits) {
        uint32_t v = 0;
        for (int i = 0; i < nbits; ++i) v = (v << 1) | static_cast<uint32_t>(decode_bypass());
        return v;
    }

    int decode_symbol(const CumFreqTable& table) {
        uint32_t r = range_ / table.total();
        uint32_t value = std::min(code_ / r, table.total() - 1);
        int sym = table.find(value);
        code_ -= r * table.cum(sym);
        if (sym + 1 == table.num_symbols())
            range_ -= r * table.cum(sym);
        else
            range_ = r * table.freq(sym);
        normalize();
        return sym;
    }

    size_t bytes_consumed() const { return pos_; }

private:
    void normalize() {
        while (range_ < kTopValue) {
            code_ = (code_ << 8) | next_byte();
            range_ <<= 8;
        }
    }

    uint8_t next_byte() {
        if (pos_ >= size_)
            throw CorruptStreamError("range decoder read past end of payload", pos_);
        return data_[pos_++];
    }

    const uint8_t* data_;
    size_t size_;
    size_t pos_ = 0;
    uint32_t code_ = 0;
    uint32_t range_ = 0xFFFFFFFFu;
};

// Shared magnitude code: value >= 1 is sent as an adaptive unary prefix for
// bit_length-1 (capped model bank) followed by the low bits in bypass.
// Small values therefore cost ~2 adaptive bits and large ones grow
// logarithmically.

constexpr int kMagPrefixModels = 18;

struct MagnitudeModel {
    AdaptiveBitModel prefix[kMagPrefixModels];
};

inline void encode_magnitude(RangeEncoder& enc, MagnitudeModel& m, uint32_t value) {
    if (value == 0) throw UsageError("encode_magnitude: value must be >= 1");
    int nbits = 32 - __builtin_clz(value);  // bit_length(value) >= 1
    for (int i = 0; i < nbits - 1; ++i)
        enc.encode_bit(m.prefix[std::min(i, kMagPrefixModels - 1)], 1);
    enc.encode_bit(m.prefix[std::min(nbits - 1, kMagPrefixModels - 1)], 0);
    if (nbits > 1)
        enc.encode_bypass_bits(value & ((1u << (nbits - 1)) - 1u), nbits - 1);
}

inline uint32_t decode_magnitude(RangeDecoder& dec, MagnitudeModel& m) {
    int nbits = 1;
    while (dec.decode_bit(m.prefix[std::min(nbits - 1, kMagPrefixModels - 1)]) == 1) {
        ++nbits;
        if (nbits > 31)
            throw CorruptStreamError("magnitude prefix overran 31 bits",
                                     dec.bytes_consumed());
    }
    uint32_t v = 1;
    if (nbits > 1) v = (1u << (nbits - 1)) | dec.decode_bypass_bits(nbits - 1);
    return v;
}

}  // namespace clab
