#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "qres/common.hpp"
#include "qres/prob.hpp"

namespace qres {

// 64-bit state / 32-bit renormalization / 16-bit probability rANS.
// While streaming, the state stays in [2^32, 2^64); the flush writes the
// full 8-byte state, which is the fixed per-stream overhead.
constexpr uint64_t kRansLowerBound = 1ull << 32;
constexpr size_t kRansFlushBytes = 8;

// Symbols must be pushed in reverse order (LIFO); the decoder reads forward.
class RansEncoder {
public:
    void put(uint32_t cum, uint32_t freq);
    void put_symbol(int symbol_index, const QuantizedPmf& pmf);
    // 8-byte final state (LE) followed by the renorm words in reverse
    // emission order, so the decoder consumes them forward.
    std::vector<uint8_t> finish() const;

private:
    uint64_t state_ = kRansLowerBound;
    std::vector<uint32_t> words_;
};

class RansDecoder {
public:
    explicit RansDecoder(std::span<const uint8_t> bytes);

    uint32_t peek() const { return static_cast<uint32_t>(state_ & (kCdfTotal - 1)); }
    void advance(uint32_t cum, uint32_t freq);
    int get_symbol(const QuantizedPmf& pmf);

    size_t bytes_consumed() const { return pos_; }
    // After all symbols: state must be back at the lower bound and every
    // byte consumed, which catches truncation and most corruption.
    void expect_finished(size_t expected_end) const;

private:
    std::span<const uint8_t> bytes_;
    size_t pos_ = 0;
    uint64_t state_ = 0;
};

// Convenience forms matching the (symbol_index, pmf) sequence contract.
std::vector<uint8_t> rans_encode(std::span<const std::pair<int, const QuantizedPmf*>> symbols);
std::vector<int> rans_decode(std::span<const uint8_t> bytes,
                             std::span<const QuantizedPmf* const> pmfs);

// Fixed-width raw bit packing, LSB-first within bytes.
class BypassWriter {
public:
    void put(uint64_t value, int bits);
    std::vector<uint8_t> finish();

private:
    std::vector<uint8_t> bytes_;
    uint64_t acc_ = 0;
    int nbits_ = 0;
};

class BypassReader {
public:
    explicit BypassReader(std::span<const uint8_t> bytes) : bytes_(bytes) {}
    uint64_t get(int bits);
    size_t bytes_consumed() const { return pos_; }

private:
    std::span<const uint8_t> bytes_;
    size_t pos_ = 0;
    uint64_t acc_ = 0;
    int nbits_ = 0;
};

std::vector<uint8_t> bypass_encode(std::span<const uint64_t> values, int bits_per_value);
std::vector<uint64_t> bypass_decode(std::span<const uint8_t> bytes, int bits_per_value,
                                    size_t count);

// One latent/pixel stream = rANS payload followed by the byte-reversed
// bypass payload. The reader pulls rANS words from the front and bypass
// bytes from the back; a clean decode consumes the payload exactly.
std::vector<uint8_t> assemble_stream(std::vector<uint8_t> rans_bytes,
                                     const std::vector<uint8_t>& bypass_bytes);

class StreamReader {
public:
    explicit StreamReader(std::span<const uint8_t> payload);

    RansDecoder& rans() { return rans_; }
    uint64_t read_bypass(int bits);
    // Front and back cursors must meet exactly; throws DecodeError if not.
    void expect_consumed();

private:
    std::span<const uint8_t> payload_;
    RansDecoder rans_;
    size_t bypass_bytes_read_ = 0;
    uint64_t acc_ = 0;
    int nbits_ = 0;

    uint8_t next_bypass_byte();
};

}  // namespace qres
