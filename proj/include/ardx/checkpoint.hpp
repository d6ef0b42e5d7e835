#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ardx/tensor.hpp"

namespace ardx {

using NamedArrays = std::vector<std::pair<std::string, Tensor>>;

// Checkpoint container: "ARDX1" magic, a human-readable manifest of
// (name, shape, byte offset), then raw little-endian 64-bit floats.
// Round-trips are bitwise exact.
void save_arrays(const std::string& path, const NamedArrays& arrays);
NamedArrays load_arrays(const std::string& path);

const Tensor& find_array(const NamedArrays& arrays, const std::string& name);
bool has_array(const NamedArrays& arrays, const std::string& name);

} // namespace ardx
