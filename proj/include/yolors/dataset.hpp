#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "yolors/image_io.hpp"
#include "yolors/metrics.hpp"
#include "yolors/random.hpp"

namespace yolors {

// One normalized box: "class_id cx cy w h", everything in [0,1].
struct LabelRecord {
  int class_id = 0;
  double cx = 0, cy = 0, w = 0, h = 0;

  bool operator==(const LabelRecord&) const = default;
};

struct AnnotatedImage {
  Image8 image;
  std::vector<LabelRecord> labels;
  std::string id;
};

std::vector<LabelRecord> load_yolo_labels(const std::string& path);
void write_yolo_labels(const std::string& path, const std::vector<LabelRecord>& labels);

struct DatasetManifest {
  struct Item {
    std::string id, image, labels;  // paths relative to root
  };
  std::string root;
  std::vector<std::string> class_names;
  int image_size = 0;
  std::vector<Item> train, val;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j, const std::string& root);
};

struct InMemoryDataset {
  std::vector<AnnotatedImage> train, val;
  std::vector<std::string> class_names;
  int image_size = 0;
};

struct SyntheticSpec {
  int image_size = 64;
  int classes = 2;
  int train_count = 200;
  int val_count = 50;
  int objects_min = 1;
  int objects_max = 3;
  double imbalance_ratio = 1.0;  // class-0 instances per instance of every other class
  uint64_t seed = 1;
  int object_min_px = 10;
  int object_max_px = 22;
  double noise = 14.0;         // background value-noise amplitude
  double color_jitter = 18.0;  // per-object color jitter
  int distractors = 0;         // unlabeled clutter shapes per image

  void validate() const;
};

// Colored geometric shapes on a textured background with exact labels.
// Class counts follow the imbalance ratio via a deterministic quota.
InMemoryDataset generate_synthetic_memory(const SyntheticSpec& spec);

// Same, written to out_dir as P6 images + label files + manifest.json.
DatasetManifest generate_synthetic(const SyntheticSpec& spec, const std::string& out_dir);

DatasetManifest load_manifest(const std::string& dir);
InMemoryDataset load_dataset(const std::string& dir);

void save_dataset(const InMemoryDataset& data, const std::string& out_dir);

// Ground-truth boxes in one fixed color, predictions in another; byte
// deterministic for fixed inputs.
void render_detections(const Image8& img, const std::vector<LabelRecord>& truths,
                       const std::vector<Detection>& dets, const std::string& out_path);

}  // namespace yolors
