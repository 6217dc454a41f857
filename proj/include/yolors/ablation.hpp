#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "yolors/dataset.hpp"
#include "yolors/detector.hpp"

namespace yolors {

struct AblationRow {
  std::string variant;
  uint64_t seed = 0;
  bool diverged = false;
  std::string error;
  double precision = 0, recall = 0, map50 = 0, f1 = 0;
  long long flops = 0;
};

struct AblationTable {
  std::vector<AblationRow> rows;

  nlohmann::json to_json() const;
  std::string to_markdown() const;
};

// Trains and evaluates each variant under identical seeds and data order.
// Every seed regenerates the dataset from spec so augmentation-level
// variants see identical raw data.
AblationTable run_ablation(const ModelConfig& base, const SyntheticSpec& data_spec,
                           const std::vector<std::string>& variants,
                           const std::vector<uint64_t>& seeds);

// Same harness over a fixed, preloaded dataset.
AblationTable run_ablation_on(const ModelConfig& base, const InMemoryDataset& data,
                              const std::vector<std::string>& variants,
                              const std::vector<uint64_t>& seeds);

}  // namespace yolors
