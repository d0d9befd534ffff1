#include "qres/container.hpp"

namespace qres {

namespace {

constexpr uint8_t kMagic[4] = {'Q', 'R', 'E', 'S'};

void put_u32_le(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xFF));
    out.push_back(static_cast<uint8_t>((v >> 8) & 0xFF));
    out.push_back(static_cast<uint8_t>((v >> 16) & 0xFF));
    out.push_back(static_cast<uint8_t>((v >> 24) & 0xFF));
}

struct Cursor {
    std::span<const uint8_t> bytes;
    size_t pos = 0;

    uint8_t u8() {
        if (pos + 1 > bytes.size()) throw FormatError("container truncated");
        return bytes[pos++];
    }
    uint32_t u32() {
        if (pos + 4 > bytes.size()) throw FormatError("container truncated");
        uint32_t v = static_cast<uint32_t>(bytes[pos]) |
                     (static_cast<uint32_t>(bytes[pos + 1]) << 8) |
                     (static_cast<uint32_t>(bytes[pos + 2]) << 16) |
                     (static_cast<uint32_t>(bytes[pos + 3]) << 24);
        pos += 4;
        return v;
    }
};

}  // namespace

size_t CodedImage::total_bytes() const {
    size_t n = kContainerHeaderBytes;
    for (const auto& s : streams) n += 4 + s.size();
    return n;
}

std::vector<uint8_t> container_write(const CodedImage& image) {
    if (image.mode != kModeLossy && image.mode != kModeLossless)
        throw FormatError("container_write: bad mode");
    if (image.width == 0 || image.height == 0)
        throw FormatError("container_write: zero dimensions");
    if (image.streams.size() > 255) throw FormatError("container_write: too many streams");
    std::vector<uint8_t> out;
    out.reserve(image.total_bytes());
    out.insert(out.end(), kMagic, kMagic + 4);
    out.push_back(kContainerVersion);
    out.push_back(image.mode);
    put_u32_le(out, image.width);
    put_u32_le(out, image.height);
    out.push_back(image.model_id);
    out.push_back(image.lambda_code);
    out.push_back(static_cast<uint8_t>(image.streams.size()));
    for (const auto& s : image.streams) {
        put_u32_le(out, static_cast<uint32_t>(s.size()));
        out.insert(out.end(), s.begin(), s.end());
    }
    return out;
}

CodedImage container_read(std::span<const uint8_t> bytes) {
    Cursor c{bytes};
    for (uint8_t m : kMagic)
        if (c.u8() != m) throw FormatError("container: bad magic");
    if (c.u8() != kContainerVersion) throw FormatError("container: unsupported version");
    CodedImage image;
    image.mode = c.u8();
    if (image.mode != kModeLossy && image.mode != kModeLossless)
        throw FormatError("container: bad mode byte");
    image.width = c.u32();
    image.height = c.u32();
    if (image.width == 0 || image.height == 0) throw FormatError("container: zero dimensions");
    image.model_id = c.u8();
    image.lambda_code = c.u8();
    uint8_t num_streams = c.u8();
    image.streams.resize(num_streams);
    for (auto& s : image.streams) {
        uint32_t len = c.u32();
        if (c.pos + len > bytes.size()) throw FormatError("container: stream truncated");
        s.assign(bytes.begin() + static_cast<ptrdiff_t>(c.pos),
                 bytes.begin() + static_cast<ptrdiff_t>(c.pos + len));
        c.pos += len;
    }
    if (c.pos != bytes.size()) throw FormatError("container: trailing bytes");
    return image;
}

}  // namespace qres
