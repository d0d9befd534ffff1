#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "qres/tensor.hpp"

namespace qres {

// Parameter checkpoint: magic "QRWT", version u8, then records of
// (name length u16, UTF-8 name, rank u8, dims u32 x rank, raw LE f64
// payload), written in lexicographic name order.
std::vector<uint8_t> checkpoint_serialize(
    const std::vector<std::pair<std::string, Tensor>>& params);
std::map<std::string, Tensor> checkpoint_deserialize(std::span<const uint8_t> bytes);

void checkpoint_save(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& params);
std::map<std::string, Tensor> checkpoint_load(const std::string& path);

// FNV-1a 64 of the serialized bytes; the low byte is the container model_id.
uint64_t fnv1a64(std::span<const uint8_t> bytes);

}  // namespace qres
