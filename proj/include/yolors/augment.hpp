#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "yolors/dataset.hpp"
#include "yolors/random.hpp"

namespace yolors {

struct ClassFrequencyTable {
  std::map<int, long> counts;
  std::map<int, double> freq;  // count / max count, in (0,1]
  long total = 0;

  double freq_of(int class_id) const;
  bool has_minority() const;
};

ClassFrequencyTable compute_class_frequencies(const std::vector<AnnotatedImage>& dataset);

// Contrast around the 128 pivot: gamma = 1 + strength * (1 - min present
// class frequency); labels untouched.
AnnotatedImage contrast_adjust(const AnnotatedImage& img, const ClassFrequencyTable& table,
                               double strength);

struct MixRecipe {
  std::string donor_id, recipient_id;
  double beta = 0.0;
  std::vector<LabelRecord> pasted;
  std::vector<std::string> warnings;
};

// Beta(beta_param, beta_param) blend of each minority-class donor crop into a
// uniformly drawn non-overlapping spot of the recipient. forced_beta is a
// test hook bypassing the draw.
AnnotatedImage mix_samples(const AnnotatedImage& donor, const AnnotatedImage& recipient,
                           const ClassFrequencyTable& table, RandomSource& rng,
                           double beta_param, MixRecipe* recipe = nullptr,
                           const double* forced_beta = nullptr);

enum class GeomOp { crop, scale, rotate90, hflip, vflip };

GeomOp geom_op_from_string(const std::string& s);
std::string to_string(GeomOp op);

// Applies the listed ops in order; labels follow the same mapping, boxes
// keeping less than half their area are dropped.
AnnotatedImage geometric_augment(const AnnotatedImage& img, RandomSource& rng,
                                 const std::vector<GeomOp>& ops);

struct AugmentConfig {
  int multiplier = 2;       // output size = multiplier * input size
  double strength = 0.5;    // contrast strength
  double beta_param = 1.0;  // symmetric Beta parameter
  std::vector<GeomOp> geometric = {GeomOp::hflip};
  uint64_t seed = 1;
};

struct AugmentResult {
  std::vector<AnnotatedImage> images;  // originals followed by generated samples
  nlohmann::json manifest;             // per-sample recipe + seed, plus warnings
};

AugmentResult build_augmented_set(const std::vector<AnnotatedImage>& dataset,
                                  const ClassFrequencyTable& table, const AugmentConfig& cfg,
                                  RandomSource& rng);

}  // namespace yolors
