#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "promptaug/adamw.hpp"
#include "promptaug/tensor.hpp"

namespace promptaug {

// Self-describing binary container: 8-byte magic, little-endian u64 header
// length, JSON header, then the raw float32 parameter buffers concatenated in
// header order. Raw bytes in and out, so save/load round-trips bit-exactly.
void save_checkpoint(const std::string& path, nlohmann::json meta,
                     std::span<const Parameter> params);

struct LoadedCheckpoint {
    nlohmann::json meta;
    std::vector<std::pair<std::string, Tensor>> buffers;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// FNV-1a over every parameter buffer (name, shape and bytes); the standard
// identity used to pair artifacts with the exact weights that produced them.
uint64_t fingerprint_params(std::span<const Parameter> params);

}  // namespace promptaug
