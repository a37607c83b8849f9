#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mscount/tensor.hpp"

namespace mscount {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Parameter checkpoint container, little-endian throughout:
//
//   "PKC1"
//   repeated until end of file:
//     u32 name_length, name bytes (UTF-8, no terminator)
//     u32 rank (always 4), rank x u64 dims (n, c, h, w)
//     n*c*h*w x f64 payload, row-major
//
// Values are written bit-for-bit, so save followed by load reproduces every
// parameter exactly.

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::filesystem::path& path);

/// Copies loaded values into `dest` by name. Throws std::runtime_error naming
/// both shapes on mismatch, and on missing or unexpected names.
void assign_checkpoint(const NamedTensors& loaded, NamedTensors& dest);

}  // namespace mscount
