#pragma once

#include <string>
#include <utility>
#include <vector>

namespace yolors {

struct GradCheckEntry {
  std::string name;
  double max_rel_error;
};

// Central-difference checks (eps = 1e-5, inputs in [-1,1], double precision)
// over every differentiable operation and the composed attention, multi-
// kernel convolution, fusion, and loss paths. Passing means every entry is
// below 1e-4.
std::vector<GradCheckEntry> gradient_suite();

}  // namespace yolors
