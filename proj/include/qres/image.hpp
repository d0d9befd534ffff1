#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qres/common.hpp"
#include "qres/tensor.hpp"

namespace qres {

// 8-bit RGB image, interleaved row-major.
struct ImageU8 {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> rgb;  // size 3 * width * height

    bool operator==(const ImageU8&) const = default;
};

ImageU8 read_ppm(const std::string& path);
void write_ppm(const std::string& path, const ImageU8& image);  // atomic (temp + rename)

ImageU8 decode_ppm(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> encode_ppm(const ImageU8& image);

// (1, 3, H, W) tensor with values in [0, 1] (v / 255).
Tensor image_to_tensor(const ImageU8& image);

// Clamp to [0, 1], scale by 255, round half-to-even.
ImageU8 tensor_to_image(const Tensor& t);

std::vector<uint8_t> read_file(const std::string& path);
void write_file_atomic(const std::string& path, std::span<const uint8_t> bytes);

}  // namespace qres
