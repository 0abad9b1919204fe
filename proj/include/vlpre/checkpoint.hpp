#pragma once

#include <string>
#include <utility>
#include <vector>

#include "vlpre/tensor.hpp"

namespace vlpre::checkpoint {

// On-disk format: <stem>.json manifest (tensor name -> shape, dtype, byte
// offset into the blob) plus <stem>.bin, a flat little-endian float64 blob.
// Round-trips are bit-exact.

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void save(const std::string& stem, const NamedTensors& tensors);

// Loads blob data into the given tensors in place; every manifest entry must
// match an existing tensor by name and shape.
void load_into(const std::string& stem, const NamedTensors& tensors);

NamedTensors load(const std::string& stem, bool requires_grad = false);

// Checkpoint identity: FNV-1a over the blob bytes.
std::string blob_hash(const std::string& stem);

}  // namespace vlpre::checkpoint
