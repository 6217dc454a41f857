#include "yolors/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace yolors {

namespace {

void check_label(const LabelRecord& l, const std::string& where) {
  if (l.class_id < 0) throw std::runtime_error(where + ": negative class id");
  if (l.w <= 0.0 || l.w > 1.0) throw std::runtime_error(where + ": width out of range (0,1]");
  if (l.h <= 0.0 || l.h > 1.0) throw std::runtime_error(where + ": height out of range (0,1]");
  if (l.cx - l.w / 2 < -1e-9 || l.cx + l.w / 2 > 1.0 + 1e-9)
    throw std::runtime_error(where + ": center-x places the box outside [0,1]");
  if (l.cy - l.h / 2 < -1e-9 || l.cy + l.h / 2 > 1.0 + 1e-9)
    throw std::runtime_error(where + ": center-y places the box outside [0,1]");
}

}  // namespace

std::vector<LabelRecord> load_yolo_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_yolo_labels: cannot open " + path);
  std::vector<LabelRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    // strip comments and blank lines
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    LabelRecord l;
    if (!(ls >> l.class_id)) {
      std::string leftover;
      if (ls.clear(), ls >> leftover)
        throw std::runtime_error("load_yolo_labels: " + path + ":" + std::to_string(lineno) +
                                 ": malformed line");
      continue;  // blank
    }
    if (!(ls >> l.cx >> l.cy >> l.w >> l.h))
      throw std::runtime_error("load_yolo_labels: " + path + ":" + std::to_string(lineno) +
                               ": malformed line, expected 'class_id cx cy w h'");
    std::string extra;
    if (ls >> extra)
      throw std::runtime_error("load_yolo_labels: " + path + ":" + std::to_string(lineno) +
                               ": trailing tokens");
    check_label(l, "load_yolo_labels: " + path + ":" + std::to_string(lineno));
    out.push_back(l);
  }
  return out;
}

void write_yolo_labels(const std::string& path, const std::vector<LabelRecord>& labels) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_yolo_labels: cannot open " + path + " for writing");
  char buf[128];
  for (const auto& l : labels) {
    std::snprintf(buf, sizeof buf, "%d %.6f %.6f %.6f %.6f\n", l.class_id, l.cx, l.cy, l.w, l.h);
    out << buf;
  }
}

nlohmann::json DatasetManifest::to_json() const {
  nlohmann::json j;
  j["classes"] = class_names;
  j["image_size"] = image_size;
  for (const char* split : {"train", "val"}) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& it : (std::string(split) == "train" ? train : val))
      arr.push_back({{"id", it.id}, {"image", it.image}, {"labels", it.labels}});
    j[split] = arr;
  }
  return j;
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j, const std::string& root) {
  DatasetManifest m;
  m.root = root;
  m.class_names = j.at("classes").get<std::vector<std::string>>();
  m.image_size = j.at("image_size").get<int>();
  for (const char* split : {"train", "val"}) {
    auto& dst = std::string(split) == "train" ? m.train : m.val;
    for (const auto& it : j.at(split))
      dst.push_back({it.at("id").get<std::string>(), it.at("image").get<std::string>(),
                     it.at("labels").get<std::string>()});
  }
  return m;
}

void SyntheticSpec::validate() const {
  if (classes < 1) throw std::invalid_argument("SyntheticSpec: need at least one class");
  if (imbalance_ratio < 1.0) throw std::invalid_argument("SyntheticSpec: imbalance ratio must be >= 1");
  if (objects_min < 1 || objects_max < objects_min)
    throw std::invalid_argument("SyntheticSpec: bad objects-per-image range");
  if (image_size < 16) throw std::invalid_argument("SyntheticSpec: image size too small");
  if (object_max_px >= image_size / 2)
    throw std::invalid_argument("SyntheticSpec: objects too large for the image");
}

namespace {

struct ClassQuota {
  std::vector<double> share;  // target fraction per class
  std::vector<long> count;

  explicit ClassQuota(int classes, double ratio) : share(classes), count(classes, 0) {
    double total = ratio + (classes - 1);
    share[0] = ratio / total;
    for (int c = 1; c < classes; ++c) share[static_cast<size_t>(c)] = 1.0 / total;
  }

  int next() {
    long total = 1;
    for (long c : count) total += c;
    int best = 0;
    double best_deficit = -1e300;
    for (size_t c = 0; c < share.size(); ++c) {
      const double deficit = share[c] * static_cast<double>(total) - static_cast<double>(count[c]);
      if (deficit > best_deficit) {
        best_deficit = deficit;
        best = static_cast<int>(c);
      }
    }
    ++count[static_cast<size_t>(best)];
    return best;
  }
};

std::array<uint8_t, 3> class_color(int c) {
  static const std::array<uint8_t, 3> palette[] = {
      {204, 64, 52}, {52, 94, 204}, {56, 168, 74}, {214, 168, 36}, {142, 68, 173}, {40, 170, 170}};
  return palette[static_cast<size_t>(c) % 6];
}

uint8_t clamp_u8(double v) { return static_cast<uint8_t>(std::clamp(v, 0.0, 255.0)); }

void fill_background(Image8& img, RandomSource& rng, double noise) {
  const double base_r = rng.uniform(80, 140);
  const double base_g = rng.uniform(90, 150);
  const double base_b = rng.uniform(60, 120);
  const double gx = rng.uniform(-30, 30), gy = rng.uniform(-30, 30);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      const double fx = static_cast<double>(x) / img.w, fy = static_cast<double>(y) / img.h;
      const double n = rng.uniform(-1, 1);
      img.at(y, x, 0) = clamp_u8(base_r + gx * fx + n * noise);
      img.at(y, x, 1) = clamp_u8(base_g + gy * fy + n * noise);
      img.at(y, x, 2) = clamp_u8(base_b + gx * fy + n * noise);
    }
}

// Draws one object of the class-specific shape family, returns its tight box.
LabelRecord draw_object(Image8& img, int class_id, int cx, int cy, int w, int h,
                        std::array<double, 3> color) {
  const int s = img.w;
  const int x1 = cx - w / 2, y1 = cy - h / 2;
  const int x2 = x1 + w - 1, y2 = y1 + h - 1;
  const int shape = class_id % 3;
  for (int y = y1; y <= y2; ++y)
    for (int x = x1; x <= x2; ++x) {
      if (y < 0 || y >= img.h || x < 0 || x >= img.w) continue;
      bool inside = false;
      if (shape == 0) {  // ellipse
        const double nx = (x - cx + 0.5) / (w / 2.0), ny = (y - cy + 0.5) / (h / 2.0);
        inside = nx * nx + ny * ny <= 1.0;
      } else if (shape == 1) {  // filled box
        inside = true;
      } else {  // upward triangle
        const double fy = static_cast<double>(y - y1) / std::max(1, h - 1);
        const double half = fy * (w / 2.0);
        inside = std::fabs(x - cx + 0.5) <= half;
      }
      if (!inside) continue;
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = clamp_u8(color[static_cast<size_t>(c)]);
    }
  LabelRecord l;
  l.class_id = class_id;
  l.cx = (x1 + w / 2.0) / s;
  l.cy = (y1 + h / 2.0) / s;
  l.w = static_cast<double>(w) / s;
  l.h = static_cast<double>(h) / s;
  return l;
}

double label_iou(const LabelRecord& a, const LabelRecord& b) {
  const double ax1 = a.cx - a.w / 2, ax2 = a.cx + a.w / 2, ay1 = a.cy - a.h / 2, ay2 = a.cy + a.h / 2;
  const double bx1 = b.cx - b.w / 2, bx2 = b.cx + b.w / 2, by1 = b.cy - b.h / 2, by2 = b.cy + b.h / 2;
  const double ix = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1));
  const double iy = std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
  const double inter = ix * iy;
  return inter / (a.w * a.h + b.w * b.h - inter);
}

AnnotatedImage synth_image(const SyntheticSpec& spec, ClassQuota& quota, RandomSource& rng,
                           const std::string& id) {
  AnnotatedImage ai;
  ai.id = id;
  ai.image.w = ai.image.h = spec.image_size;
  ai.image.rgb.assign(static_cast<size_t>(spec.image_size) * spec.image_size * 3, 0);
  fill_background(ai.image, rng, spec.noise);

  for (int i = 0; i < spec.distractors; ++i) {
    // muted clutter shapes that carry no label
    const int w = rng.uniform_int(spec.object_min_px, spec.object_max_px);
    const int h = rng.uniform_int(spec.object_min_px, spec.object_max_px);
    const int cx = rng.uniform_int(w / 2 + 1, spec.image_size - w / 2 - 2);
    const int cy = rng.uniform_int(h / 2 + 1, spec.image_size - h / 2 - 2);
    std::array<double, 3> col = {rng.uniform(70, 170), rng.uniform(70, 170), rng.uniform(60, 150)};
    draw_object(ai.image, rng.uniform_int(0, 2), cx, cy, w, h, col);
  }

  const int n = rng.uniform_int(spec.objects_min, spec.objects_max);
  for (int i = 0; i < n; ++i) {
    const int class_id = quota.next();
    const int w = rng.uniform_int(spec.object_min_px, spec.object_max_px);
    const int h = rng.uniform_int(spec.object_min_px, spec.object_max_px);
    bool placed = false;
    for (int attempt = 0; attempt < 20 && !placed; ++attempt) {
      const int cx = rng.uniform_int(w / 2 + 1, spec.image_size - w / 2 - 2);
      const int cy = rng.uniform_int(h / 2 + 1, spec.image_size - h / 2 - 2);
      LabelRecord cand;
      cand.cx = static_cast<double>(cx) / spec.image_size;
      cand.cy = static_cast<double>(cy) / spec.image_size;
      cand.w = static_cast<double>(w) / spec.image_size;
      cand.h = static_cast<double>(h) / spec.image_size;
      bool clash = false;
      for (const auto& l : ai.labels)
        if (label_iou(cand, l) > 0.15) clash = true;
      if (clash) continue;
      auto base = class_color(class_id);
      std::array<double, 3> col;
      for (int c = 0; c < 3; ++c)
        col[static_cast<size_t>(c)] =
            base[static_cast<size_t>(c)] + rng.uniform(-spec.color_jitter, spec.color_jitter);
      ai.labels.push_back(draw_object(ai.image, class_id, cx, cy, w, h, col));
      placed = true;
    }
    if (!placed) --quota.count[static_cast<size_t>(class_id)];  // object skipped, return quota
  }
  return ai;
}

}  // namespace

InMemoryDataset generate_synthetic_memory(const SyntheticSpec& spec) {
  spec.validate();
  InMemoryDataset data;
  data.image_size = spec.image_size;
  for (int c = 0; c < spec.classes; ++c) data.class_names.push_back("class" + std::to_string(c));
  ClassQuota quota(spec.classes, spec.imbalance_ratio);
  RandomSource rng(spec.seed);
  char id[32];
  for (int i = 0; i < spec.train_count; ++i) {
    std::snprintf(id, sizeof id, "t%05d", i);
    RandomSource sub = rng.split(static_cast<uint64_t>(i));
    data.train.push_back(synth_image(spec, quota, sub, id));
  }
  for (int i = 0; i < spec.val_count; ++i) {
    std::snprintf(id, sizeof id, "v%05d", i);
    RandomSource sub = rng.split(0x10000u + static_cast<uint64_t>(i));
    data.val.push_back(synth_image(spec, quota, sub, id));
  }
  return data;
}

void save_dataset(const InMemoryDataset& data, const std::string& out_dir) {
  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "labels");
  DatasetManifest m;
  m.root = out_dir;
  m.class_names = data.class_names;
  m.image_size = data.image_size;
  auto emit = [&](const std::vector<AnnotatedImage>& split, std::vector<DatasetManifest::Item>& items) {
    for (const auto& ai : split) {
      DatasetManifest::Item it;
      it.id = ai.id;
      it.image = "images/" + ai.id + ".ppm";
      it.labels = "labels/" + ai.id + ".txt";
      write_ppm((fs::path(out_dir) / it.image).string(), ai.image);
      write_yolo_labels((fs::path(out_dir) / it.labels).string(), ai.labels);
      items.push_back(it);
    }
  };
  emit(data.train, m.train);
  emit(data.val, m.val);
  std::ofstream out(fs::path(out_dir) / "manifest.json");
  out << m.to_json().dump(2) << "\n";
}

DatasetManifest generate_synthetic(const SyntheticSpec& spec, const std::string& out_dir) {
  InMemoryDataset data = generate_synthetic_memory(spec);
  save_dataset(data, out_dir);
  return load_manifest(out_dir);
}

DatasetManifest load_manifest(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw std::runtime_error("load_manifest: no manifest.json under " + dir);
  nlohmann::json j;
  in >> j;
  return DatasetManifest::from_json(j, dir);
}

InMemoryDataset load_dataset(const std::string& dir) {
  const DatasetManifest m = load_manifest(dir);
  InMemoryDataset data;
  data.class_names = m.class_names;
  data.image_size = m.image_size;
  const int classes = static_cast<int>(m.class_names.size());
  auto load_split = [&](const std::vector<DatasetManifest::Item>& items,
                        std::vector<AnnotatedImage>& dst) {
    for (const auto& it : items) {
      AnnotatedImage ai;
      ai.id = it.id;
      ai.image = read_ppm((fs::path(dir) / it.image).string());
      ai.labels = load_yolo_labels((fs::path(dir) / it.labels).string());
      for (const auto& l : ai.labels)
        if (l.class_id >= classes)
          throw std::runtime_error("load_dataset: label class " + std::to_string(l.class_id) +
                                   " exceeds class table in " + it.labels);
      dst.push_back(std::move(ai));
    }
  };
  load_split(m.train, data.train);
  load_split(m.val, data.val);
  return data;
}

void render_detections(const Image8& img, const std::vector<LabelRecord>& truths,
                       const std::vector<Detection>& dets, const std::string& out_path) {
  Image8 out = img;
  for (const auto& t : truths) {
    const int x1 = static_cast<int>(std::lround((t.cx - t.w / 2) * img.w));
    const int y1 = static_cast<int>(std::lround((t.cy - t.h / 2) * img.h));
    const int x2 = static_cast<int>(std::lround((t.cx + t.w / 2) * img.w)) - 1;
    const int y2 = static_cast<int>(std::lround((t.cy + t.h / 2) * img.h)) - 1;
    draw_box_outline(out, x1, y1, x2, y2, {0, 255, 0});
  }
  for (const auto& d : dets)
    draw_box_outline(out, static_cast<int>(std::lround(d.box.x1)),
                     static_cast<int>(std::lround(d.box.y1)),
                     static_cast<int>(std::lround(d.box.x2)) - 1,
                     static_cast<int>(std::lround(d.box.y2)) - 1, {255, 40, 40});
  write_ppm(out_path, out);
}

}  // namespace yolors
