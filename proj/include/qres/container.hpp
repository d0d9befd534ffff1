#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "qres/common.hpp"

namespace qres {

constexpr uint8_t kContainerVersion = 1;
constexpr uint8_t kModeLossy = 0;
constexpr uint8_t kModeLossless = 1;
// magic(4) + version + mode + width(4) + height(4) + model_id + lambda_code
// + num_streams
constexpr size_t kContainerHeaderBytes = 17;

// One coded image: header plus N independent byte streams.
struct CodedImage {
    uint8_t mode = kModeLossy;
    uint32_t width = 0;   // pre-padding size
    uint32_t height = 0;
    uint8_t model_id = 0;
    uint8_t lambda_code = 0;
    std::vector<std::vector<uint8_t>> streams;

    size_t total_bytes() const;
};

// Bit-exact .qres serialization; all integers little-endian.
std::vector<uint8_t> container_write(const CodedImage& image);
CodedImage container_read(std::span<const uint8_t> bytes);

}  // namespace qres
