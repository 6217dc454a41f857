#pragma once

#include <string>
#include <utility>
#include <vector>

#include "yolors/tensor.hpp"

namespace yolors {

// Versioned binary container of named parameter tensors: per entry a name,
// the shape, and raw 64-bit little-endian values.
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& params);

// Loads values into the given tensors, matched by name; shapes must agree
// and every parameter must be present.
void load_checkpoint(const std::string& path,
                     std::vector<std::pair<std::string, Tensor>>& params);

}  // namespace yolors
