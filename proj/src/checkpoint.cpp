#include "qres/checkpoint.hpp"

#include <algorithm>
#include <cstring>

#include "qres/image.hpp"

namespace qres {

namespace {

constexpr uint8_t kMagic[4] = {'Q', 'R', 'W', 'T'};
constexpr uint8_t kVersion = 1;

void put_u16_le(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xFF));
    out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32_le(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_f64_le(std::vector<uint8_t>& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((bits >> (8 * i)) & 0xFF));
}

struct Cursor {
    std::span<const uint8_t> bytes;
    size_t pos = 0;

    bool eof() const { return pos >= bytes.size(); }
    uint8_t u8() {
        need(1);
        return bytes[pos++];
    }
    uint16_t u16() {
        need(2);
        uint16_t v = static_cast<uint16_t>(bytes[pos] | (bytes[pos + 1] << 8));
        pos += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    double f64() {
        need(8);
        uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(bytes[pos + i]) << (8 * i);
        pos += 8;
        double v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }
    void need(size_t n) const {
        if (pos + n > bytes.size()) throw FormatError("checkpoint truncated");
    }
};

}  // namespace

std::vector<uint8_t> checkpoint_serialize(
    const std::vector<std::pair<std::string, Tensor>>& params) {
    std::vector<std::pair<std::string, Tensor>> sorted(params.begin(), params.end());
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (size_t i = 1; i < sorted.size(); ++i)
        if (sorted[i].first == sorted[i - 1].first)
            throw ContractError("checkpoint: duplicate parameter name " + sorted[i].first);

    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    out.push_back(kVersion);
    for (const auto& [name, t] : sorted) {
        if (name.size() > 0xFFFF) throw ContractError("checkpoint: name too long");
        if (t.rank() > 255) throw ContractError("checkpoint: rank too large");
        put_u16_le(out, static_cast<uint16_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        out.push_back(static_cast<uint8_t>(t.rank()));
        for (int i = 0; i < t.rank(); ++i) put_u32_le(out, static_cast<uint32_t>(t.dim(i)));
        const double* p = t.data();
        for (int64_t i = 0; i < t.numel(); ++i) put_f64_le(out, p[i]);
    }
    return out;
}

std::map<std::string, Tensor> checkpoint_deserialize(std::span<const uint8_t> bytes) {
    Cursor c{bytes};
    for (uint8_t m : kMagic)
        if (c.u8() != m) throw FormatError("checkpoint: bad magic");
    if (c.u8() != kVersion) throw FormatError("checkpoint: unsupported version");
    std::map<std::string, Tensor> out;
    while (!c.eof()) {
        uint16_t name_len = c.u16();
        c.need(name_len);
        std::string name(reinterpret_cast<const char*>(bytes.data() + c.pos), name_len);
        c.pos += name_len;
        uint8_t rank = c.u8();
        std::vector<int64_t> shape(rank);
        int64_t n = 1;
        for (auto& d : shape) {
            d = static_cast<int64_t>(c.u32());
            n *= d;
        }
        std::vector<double> data(static_cast<size_t>(n));
        for (auto& v : data) v = c.f64();
        if (out.count(name)) throw FormatError("checkpoint: duplicate record " + name);
        out.emplace(name, Tensor::from_data(std::move(shape), std::move(data)));
    }
    return out;
}

void checkpoint_save(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& params) {
    write_file_atomic(path, checkpoint_serialize(params));
}

std::map<std::string, Tensor> checkpoint_load(const std::string& path) {
    return checkpoint_deserialize(read_file(path));
}

uint64_t fnv1a64(std::span<const uint8_t> bytes) {
    uint64_t h = 14695981039346656037ull;
    for (uint8_t b : bytes) {
        h ^= b;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace qres
