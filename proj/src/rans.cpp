#include "qres/rans.hpp"

#include <algorithm>

namespace qres {

namespace {

void write_u32_le(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xFF));
    out.push_back(static_cast<uint8_t>((v >> 8) & 0xFF));
    out.push_back(static_cast<uint8_t>((v >> 16) & 0xFF));
    out.push_back(static_cast<uint8_t>((v >> 24) & 0xFF));
}

}  // namespace

void RansEncoder::put(uint32_t cum, uint32_t freq) {
    if (freq == 0 || cum + freq > kCdfTotal) throw ContractError("RansEncoder: bad cum/freq");
    // Renormalize before the state update; freq can be 2^16, so the
    // threshold needs 128-bit headroom.
    if (static_cast<unsigned __int128>(state_) >=
        (static_cast<unsigned __int128>(freq) << 48)) {
        words_.push_back(static_cast<uint32_t>(state_ & 0xFFFFFFFFu));
        state_ >>= 32;
    }
    state_ = ((state_ / freq) << kCdfPrecisionBits) + (state_ % freq) + cum;
}

void RansEncoder::put_symbol(int symbol_index, const QuantizedPmf& pmf) {
    if (symbol_index < 0 || symbol_index >= pmf.alphabet_size())
        throw ContractError("RansEncoder: symbol outside alphabet");
    put(pmf.cum(symbol_index), pmf.freq(symbol_index));
}

std::vector<uint8_t> RansEncoder::finish() const {
    std::vector<uint8_t> out;
    out.reserve(kRansFlushBytes + 4 * words_.size());
    uint64_t s = state_;
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<uint8_t>(s & 0xFF));
        s >>= 8;
    }
    for (auto it = words_.rbegin(); it != words_.rend(); ++it) write_u32_le(out, *it);
    return out;
}

RansDecoder::RansDecoder(std::span<const uint8_t> bytes) : bytes_(bytes) {
    if (bytes_.size() < kRansFlushBytes) throw DecodeError("rANS stream shorter than flush");
    state_ = 0;
    for (int i = 7; i >= 0; --i) state_ = (state_ << 8) | bytes_[static_cast<size_t>(i)];
    pos_ = kRansFlushBytes;
    if (state_ < kRansLowerBound) throw DecodeError("rANS state below lower bound");
}

void RansDecoder::advance(uint32_t cum, uint32_t freq) {
    uint32_t low = peek();
    if (low < cum || low >= cum + freq) throw DecodeError("rANS advance outside symbol range");
    state_ = static_cast<uint64_t>(freq) * (state_ >> kCdfPrecisionBits) + low - cum;
    while (state_ < kRansLowerBound) {
        if (pos_ + 4 > bytes_.size()) throw DecodeError("rANS stream truncated");
        uint32_t w = static_cast<uint32_t>(bytes_[pos_]) |
                     (static_cast<uint32_t>(bytes_[pos_ + 1]) << 8) |
                     (static_cast<uint32_t>(bytes_[pos_ + 2]) << 16) |
                     (static_cast<uint32_t>(bytes_[pos_ + 3]) << 24);
        pos_ += 4;
        state_ = (state_ << 32) | w;
    }
}

int RansDecoder::get_symbol(const QuantizedPmf& pmf) {
    int idx = pmf.find(peek());
    advance(pmf.cum(idx), pmf.freq(idx));
    return idx;
}

void RansDecoder::expect_finished(size_t expected_end) const {
    if (state_ != kRansLowerBound) throw DecodeError("rANS final state mismatch");
    if (pos_ != expected_end) throw DecodeError("rANS stream has unconsumed bytes");
}

std::vector<uint8_t> rans_encode(std::span<const std::pair<int, const QuantizedPmf*>> symbols) {
    RansEncoder enc;
    for (auto it = symbols.rbegin(); it != symbols.rend(); ++it)
        enc.put_symbol(it->first, *it->second);
    return enc.finish();
}

std::vector<int> rans_decode(std::span<const uint8_t> bytes,
                             std::span<const QuantizedPmf* const> pmfs) {
    RansDecoder dec(bytes);
    std::vector<int> out;
    out.reserve(pmfs.size());
    for (const QuantizedPmf* pmf : pmfs) out.push_back(dec.get_symbol(*pmf));
    dec.expect_finished(bytes.size());
    return out;
}

// ---- bypass ----------------------------------------------------------------------

void BypassWriter::put(uint64_t value, int bits) {
    if (bits < 0 || bits > 56) throw ContractError("BypassWriter: bits must be in [0, 56]");
    if (bits < 64 && (value >> bits) != 0) throw ContractError("BypassWriter: value exceeds width");
    acc_ |= value << nbits_;
    nbits_ += bits;
    while (nbits_ >= 8) {
        bytes_.push_back(static_cast<uint8_t>(acc_ & 0xFF));
        acc_ >>= 8;
        nbits_ -= 8;
    }
}

std::vector<uint8_t> BypassWriter::finish() {
    if (nbits_ > 0) {
        bytes_.push_back(static_cast<uint8_t>(acc_ & 0xFF));
        acc_ = 0;
        nbits_ = 0;
    }
    return std::move(bytes_);
}

uint64_t BypassReader::get(int bits) {
    if (bits < 0 || bits > 56) throw ContractError("BypassReader: bits must be in [0, 56]");
    while (nbits_ < bits) {
        if (pos_ >= bytes_.size()) throw DecodeError("bypass stream exhausted");
        acc_ |= static_cast<uint64_t>(bytes_[pos_++]) << nbits_;
        nbits_ += 8;
    }
    uint64_t v = bits == 0 ? 0 : (acc_ & ((uint64_t{1} << bits) - 1));
    acc_ >>= bits;
    nbits_ -= bits;
    return v;
}

std::vector<uint8_t> bypass_encode(std::span<const uint64_t> values, int bits_per_value) {
    BypassWriter w;
    for (uint64_t v : values) w.put(v, bits_per_value);
    return w.finish();
}

std::vector<uint64_t> bypass_decode(std::span<const uint8_t> bytes, int bits_per_value,
                                    size_t count) {
    BypassReader r(bytes);
    std::vector<uint64_t> out;
    out.reserve(count);
    for (size_t i = 0; i < count; ++i) out.push_back(r.get(bits_per_value));
    return out;
}

// ---- stream assembly -------------------------------------------------------------

std::vector<uint8_t> assemble_stream(std::vector<uint8_t> rans_bytes,
                                     const std::vector<uint8_t>& bypass_bytes) {
    rans_bytes.insert(rans_bytes.end(), bypass_bytes.rbegin(), bypass_bytes.rend());
    return rans_bytes;
}

StreamReader::StreamReader(std::span<const uint8_t> payload)
    : payload_(payload), rans_(payload) {}

uint8_t StreamReader::next_bypass_byte() {
    size_t next_index = payload_.size() - 1 - bypass_bytes_read_;
    if (bypass_bytes_read_ >= payload_.size() || next_index < rans_.bytes_consumed())
        throw DecodeError("bypass tail collides with rANS payload");
    ++bypass_bytes_read_;
    return payload_[next_index];
}

uint64_t StreamReader::read_bypass(int bits) {
    if (bits < 0 || bits > 56) throw ContractError("StreamReader: bits must be in [0, 56]");
    while (nbits_ < bits) {
        acc_ |= static_cast<uint64_t>(next_bypass_byte()) << nbits_;
        nbits_ += 8;
    }
    uint64_t v = bits == 0 ? 0 : (acc_ & ((uint64_t{1} << bits) - 1));
    acc_ >>= bits;
    nbits_ -= bits;
    return v;
}

void StreamReader::expect_consumed() {
    if (acc_ != 0) throw DecodeError("bypass tail has nonzero padding");
    if (rans_.bytes_consumed() + bypass_bytes_read_ != payload_.size())
        throw DecodeError("stream payload not fully consumed");
    rans_.expect_finished(rans_.bytes_consumed());
}

}  // namespace qres
