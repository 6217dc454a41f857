#include "yolors/ablation.hpp"

#include <cstdio>

namespace yolors {

nlohmann::json AblationTable::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json row;
    row["variant"] = r.variant;
    row["seed"] = r.seed;
    row["diverged"] = r.diverged;
    if (r.diverged) row["error"] = r.error;
    row["precision"] = r.precision;
    row["recall"] = r.recall;
    row["map50"] = r.map50;
    row["f1"] = r.f1;
    row["flops"] = r.flops;
    arr.push_back(row);
  }
  return {{"rows", arr}};
}

std::string AblationTable::to_markdown() const {
  std::string out = "| Approach | seed | P | R | mAP@.5 | F1 | GFLOPs |\n";
  out += "|---|---|---|---|---|---|---|\n";
  char buf[256];
  for (const auto& r : rows) {
    if (r.diverged) {
      std::snprintf(buf, sizeof buf, "| %s | %llu | diverged: %s | | | | |\n", r.variant.c_str(),
                    static_cast<unsigned long long>(r.seed), r.error.c_str());
    } else {
      std::snprintf(buf, sizeof buf, "| %s | %llu | %.3f | %.3f | %.3f | %.3f | %.4f |\n",
                    r.variant.c_str(), static_cast<unsigned long long>(r.seed), r.precision,
                    r.recall, r.map50, r.f1, static_cast<double>(r.flops) / 1e9);
    }
    out += buf;
  }
  return out;
}

AblationTable run_ablation_on(const ModelConfig& base, const InMemoryDataset& data,
                              const std::vector<std::string>& variants,
                              const std::vector<uint64_t>& seeds) {
  AblationTable table;
  for (uint64_t seed : seeds) {
    for (const auto& name : variants) {
      ModelConfig cfg = base;
      cfg.toggles = toggles_for_variant(name);
      cfg.seed = seed;
      AblationRow row;
      row.variant = name;
      row.seed = seed;
      row.flops = count_flops(cfg).variant_flops.at(name == "full" ? "full" : name);
      try {
        Model m = build_model(cfg);
        train(m, data.train);
        EvalReport eval = evaluate_model(m, data.val);
        row.precision = eval.precision;
        row.recall = eval.recall;
        row.map50 = eval.maps.map50;
        row.f1 = eval.f1;
      } catch (const std::exception& e) {
        row.diverged = true;
        row.error = e.what();
      }
      table.rows.push_back(row);
    }
  }
  return table;
}

AblationTable run_ablation(const ModelConfig& base, const SyntheticSpec& data_spec,
                           const std::vector<std::string>& variants,
                           const std::vector<uint64_t>& seeds) {
  AblationTable table;
  for (uint64_t seed : seeds) {
    SyntheticSpec spec = data_spec;
    spec.seed = seed;
    InMemoryDataset data = generate_synthetic_memory(spec);
    AblationTable part = run_ablation_on(base, data, variants, {seed});
    table.rows.insert(table.rows.end(), part.rows.begin(), part.rows.end());
  }
  return table;
}

}  // namespace yolors
