#include "qres/image.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace qres {

namespace {

// Skips whitespace and '#' comment lines between PPM header tokens.
size_t skip_ppm_separators(const std::vector<uint8_t>& b, size_t pos) {
    while (pos < b.size()) {
        if (std::isspace(b[pos])) {
            ++pos;
        } else if (b[pos] == '#') {
            while (pos < b.size() && b[pos] != '\n') ++pos;
        } else {
            break;
        }
    }
    return pos;
}

uint64_t read_ppm_int(const std::vector<uint8_t>& b, size_t& pos) {
    pos = skip_ppm_separators(b, pos);
    if (pos >= b.size() || !std::isdigit(b[pos])) throw FormatError("ppm: expected integer");
    uint64_t v = 0;
    while (pos < b.size() && std::isdigit(b[pos])) {
        v = v * 10 + static_cast<uint64_t>(b[pos] - '0');
        if (v > (1u << 30)) throw FormatError("ppm: integer too large");
        ++pos;
    }
    return v;
}

}  // namespace

ImageU8 decode_ppm(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6')
        throw FormatError("ppm: not a P6 file");
    size_t pos = 2;
    uint64_t w = read_ppm_int(bytes, pos);
    uint64_t h = read_ppm_int(bytes, pos);
    uint64_t maxval = read_ppm_int(bytes, pos);
    if (maxval != 255) throw FormatError("ppm: only maxval 255 supported");
    if (pos >= bytes.size() || !std::isspace(bytes[pos]))
        throw FormatError("ppm: missing separator before pixel data");
    ++pos;  // single whitespace byte before binary data
    if (w == 0 || h == 0) throw FormatError("ppm: zero dimensions");
    size_t need = static_cast<size_t>(3 * w * h);
    if (bytes.size() - pos < need) throw FormatError("ppm: pixel data truncated");
    ImageU8 img;
    img.width = static_cast<int>(w);
    img.height = static_cast<int>(h);
    img.rgb.assign(bytes.begin() + static_cast<ptrdiff_t>(pos),
                   bytes.begin() + static_cast<ptrdiff_t>(pos + need));
    return img;
}

std::vector<uint8_t> encode_ppm(const ImageU8& image) {
    if (image.width <= 0 || image.height <= 0 ||
        image.rgb.size() != static_cast<size_t>(3 * image.width * image.height))
        throw FormatError("ppm: inconsistent image");
    std::string header =
        "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    std::vector<uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), image.rgb.begin(), image.rgb.end());
    return out;
}

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open file: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    return bytes;
}

void write_file_atomic(const std::string& path, std::span<const uint8_t> bytes) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw FormatError("cannot open file for writing: " + tmp);
        f.write(reinterpret_cast<const char*>(bytes.data()),
                static_cast<std::streamsize>(bytes.size()));
        if (!f) throw FormatError("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

ImageU8 read_ppm(const std::string& path) { return decode_ppm(read_file(path)); }

void write_ppm(const std::string& path, const ImageU8& image) {
    auto bytes = encode_ppm(image);
    write_file_atomic(path, bytes);
}

Tensor image_to_tensor(const ImageU8& image) {
    int64_t h = image.height, w = image.width;
    Tensor t = Tensor::zeros({1, 3, h, w});
    double* p = t.data();
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
                p[(c * h + y) * w + x] =
                    static_cast<double>(image.rgb[static_cast<size_t>(3 * (y * w + x) + c)]) /
                    255.0;
    return t;
}

ImageU8 tensor_to_image(const Tensor& t) {
    if (t.rank() != 4 || t.dim(0) != 1 || t.dim(1) != 3)
        throw ShapeError("tensor_to_image: expected (1,3,H,W)");
    int64_t h = t.dim(2), w = t.dim(3);
    ImageU8 img;
    img.width = static_cast<int>(w);
    img.height = static_cast<int>(h);
    img.rgb.resize(static_cast<size_t>(3 * h * w));
    const double* p = t.data();
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                double v = p[(c * h + y) * w + x];
                v = std::min(std::max(v, 0.0), 1.0);
                img.rgb[static_cast<size_t>(3 * (y * w + x) + c)] =
                    static_cast<uint8_t>(round_half_even(v * 255.0));
            }
    return img;
}

}  // namespace qres
