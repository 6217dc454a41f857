#include "yolors/augment.hpp"

#include <algorithm>
#include <cmath>

namespace yolors {

namespace {

uint8_t clamp_u8(double v) { return static_cast<uint8_t>(std::clamp(std::lround(v), 0l, 255l)); }

struct PixBox {
  int x1, y1, x2, y2;  // inclusive
};

PixBox to_pixels(const LabelRecord& l, int w, int h) {
  PixBox b;
  b.x1 = std::clamp(static_cast<int>(std::lround((l.cx - l.w / 2) * w)), 0, w - 1);
  b.y1 = std::clamp(static_cast<int>(std::lround((l.cy - l.h / 2) * h)), 0, h - 1);
  b.x2 = std::clamp(static_cast<int>(std::lround((l.cx + l.w / 2) * w)) - 1, b.x1, w - 1);
  b.y2 = std::clamp(static_cast<int>(std::lround((l.cy + l.h / 2) * h)) - 1, b.y1, h - 1);
  return b;
}

double norm_iou(double acx, double acy, double aw, double ah, const LabelRecord& b) {
  const double ax1 = acx - aw / 2, ax2 = acx + aw / 2, ay1 = acy - ah / 2, ay2 = acy + ah / 2;
  const double bx1 = b.cx - b.w / 2, bx2 = b.cx + b.w / 2, by1 = b.cy - b.h / 2, by2 = b.cy + b.h / 2;
  const double ix = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1));
  const double iy = std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
  const double inter = ix * iy;
  return inter / (aw * ah + b.w * b.h - inter);
}

}  // namespace

double ClassFrequencyTable::freq_of(int class_id) const {
  auto it = freq.find(class_id);
  if (it == freq.end()) throw std::invalid_argument("ClassFrequencyTable: unknown class");
  return it->second;
}

bool ClassFrequencyTable::has_minority() const {
  for (const auto& [c, f] : freq)
    if (f < 1.0) return true;
  return false;
}

ClassFrequencyTable compute_class_frequencies(const std::vector<AnnotatedImage>& dataset) {
  ClassFrequencyTable t;
  for (const auto& img : dataset)
    for (const auto& l : img.labels) {
      ++t.counts[l.class_id];
      ++t.total;
    }
  if (t.total == 0)
    throw std::invalid_argument("compute_class_frequencies: dataset holds zero labeled instances");
  long max_count = 0;
  for (const auto& [c, n] : t.counts) max_count = std::max(max_count, n);
  for (const auto& [c, n] : t.counts)
    t.freq[c] = static_cast<double>(n) / static_cast<double>(max_count);
  return t;
}

AnnotatedImage contrast_adjust(const AnnotatedImage& img, const ClassFrequencyTable& table,
                               double strength) {
  if (strength < 0.0) throw std::invalid_argument("contrast_adjust: strength must be >= 0");
  AnnotatedImage out = img;
  if (img.labels.empty() || strength == 0.0) return out;
  double fmin = 1.0;
  for (const auto& l : img.labels) fmin = std::min(fmin, table.freq_of(l.class_id));
  const double gamma = 1.0 + strength * (1.0 - fmin);
  if (gamma == 1.0) return out;
  for (auto& v : out.image.rgb) v = clamp_u8(128.0 + gamma * (static_cast<double>(v) - 128.0));
  return out;
}

AnnotatedImage mix_samples(const AnnotatedImage& donor, const AnnotatedImage& recipient,
                           const ClassFrequencyTable& table, RandomSource& rng,
                           double beta_param, MixRecipe* recipe, const double* forced_beta) {
  std::vector<const LabelRecord*> minority;
  for (const auto& l : donor.labels)
    if (table.freq_of(l.class_id) < 1.0) minority.push_back(&l);
  if (minority.empty())
    throw std::invalid_argument("mix_samples: donor holds no minority-class object");
  if (donor.image.w != recipient.image.w || donor.image.h != recipient.image.h)
    throw std::invalid_argument("mix_samples: donor and recipient sizes differ");

  const double beta = forced_beta ? *forced_beta : rng.beta(beta_param, beta_param);
  AnnotatedImage out = recipient;
  if (recipe) {
    recipe->donor_id = donor.id;
    recipe->recipient_id = recipient.id;
    recipe->beta = beta;
  }

  const int w = out.image.w, h = out.image.h;
  for (const LabelRecord* obj : minority) {
    const PixBox src = to_pixels(*obj, w, h);
    const int bw = src.x2 - src.x1 + 1, bh = src.y2 - src.y1 + 1;
    bool placed = false;
    for (int attempt = 0; attempt < 50 && !placed; ++attempt) {
      const int nx1 = rng.uniform_int(0, w - bw);
      const int ny1 = rng.uniform_int(0, h - bh);
      const double ncx = (nx1 + bw / 2.0) / w, ncy = (ny1 + bh / 2.0) / h;
      const double nw = static_cast<double>(bw) / w, nh = static_cast<double>(bh) / h;
      bool overlap = false;
      for (const auto& l : out.labels)
        if (norm_iou(ncx, ncy, nw, nh, l) > 0.0) overlap = true;
      if (overlap) continue;
      for (int y = 0; y < bh; ++y)
        for (int x = 0; x < bw; ++x)
          for (int c = 0; c < 3; ++c) {
            const double rec = out.image.at(ny1 + y, nx1 + x, c);
            const double don = donor.image.at(src.y1 + y, src.x1 + x, c);
            out.image.at(ny1 + y, nx1 + x, c) = clamp_u8(beta * rec + (1.0 - beta) * don);
          }
      LabelRecord moved = *obj;
      moved.cx = ncx;
      moved.cy = ncy;
      moved.w = nw;
      moved.h = nh;
      out.labels.push_back(moved);
      if (recipe) recipe->pasted.push_back(moved);
      placed = true;
    }
    if (!placed && recipe)
      recipe->warnings.push_back("mix_samples: no non-overlapping spot for a class-" +
                                 std::to_string(obj->class_id) + " crop after 50 attempts");
  }
  return out;
}

GeomOp geom_op_from_string(const std::string& s) {
  if (s == "crop") return GeomOp::crop;
  if (s == "scale") return GeomOp::scale;
  if (s == "rotate90") return GeomOp::rotate90;
  if (s == "hflip") return GeomOp::hflip;
  if (s == "vflip") return GeomOp::vflip;
  throw std::invalid_argument("unknown geometric op: " + s);
}

std::string to_string(GeomOp op) {
  switch (op) {
    case GeomOp::crop: return "crop";
    case GeomOp::scale: return "scale";
    case GeomOp::rotate90: return "rotate90";
    case GeomOp::hflip: return "hflip";
    case GeomOp::vflip: return "vflip";
  }
  return "?";
}

namespace {

AnnotatedImage apply_hflip(const AnnotatedImage& in) {
  AnnotatedImage out = in;
  for (int y = 0; y < in.image.h; ++y)
    for (int x = 0; x < in.image.w; ++x)
      for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = in.image.at(y, in.image.w - 1 - x, c);
  for (auto& l : out.labels) l.cx = 1.0 - l.cx;
  return out;
}

AnnotatedImage apply_vflip(const AnnotatedImage& in) {
  AnnotatedImage out = in;
  for (int y = 0; y < in.image.h; ++y)
    for (int x = 0; x < in.image.w; ++x)
      for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = in.image.at(in.image.h - 1 - y, x, c);
  for (auto& l : out.labels) l.cy = 1.0 - l.cy;
  return out;
}

AnnotatedImage apply_rotate90(const AnnotatedImage& in) {
  // clockwise quarter turn
  AnnotatedImage out = in;
  out.image.w = in.image.h;
  out.image.h = in.image.w;
  out.image.rgb.assign(in.image.rgb.size(), 0);
  for (int y = 0; y < out.image.h; ++y)
    for (int x = 0; x < out.image.w; ++x)
      for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = in.image.at(in.image.h - 1 - x, y, c);
  for (auto& l : out.labels) {
    const double cx = l.cx, cy = l.cy, w = l.w, h = l.h;
    l.cx = 1.0 - cy;
    l.cy = cx;
    l.w = h;
    l.h = w;
  }
  return out;
}

// Clip a box to the unit square, dropping it when less than half the area
// survives.
std::optional<LabelRecord> clip_label(const LabelRecord& l) {
  const double x1 = std::max(0.0, l.cx - l.w / 2), x2 = std::min(1.0, l.cx + l.w / 2);
  const double y1 = std::max(0.0, l.cy - l.h / 2), y2 = std::min(1.0, l.cy + l.h / 2);
  if (x2 <= x1 || y2 <= y1) return std::nullopt;
  if ((x2 - x1) * (y2 - y1) < 0.5 * l.w * l.h) return std::nullopt;
  LabelRecord out = l;
  out.cx = (x1 + x2) / 2;
  out.cy = (y1 + y2) / 2;
  out.w = x2 - x1;
  out.h = y2 - y1;
  return out;
}

AnnotatedImage apply_scale(const AnnotatedImage& in, RandomSource& rng) {
  const double s = rng.uniform(0.7, 1.3);
  AnnotatedImage out = in;
  for (int y = 0; y < in.image.h; ++y)
    for (int x = 0; x < in.image.w; ++x) {
      // inverse map about the image center, nearest neighbour, gray fill
      const double sx = (x - in.image.w / 2.0) / s + in.image.w / 2.0;
      const double sy = (y - in.image.h / 2.0) / s + in.image.h / 2.0;
      const int ix = static_cast<int>(std::floor(sx)), iy = static_cast<int>(std::floor(sy));
      for (int c = 0; c < 3; ++c)
        out.image.at(y, x, c) = (ix >= 0 && ix < in.image.w && iy >= 0 && iy < in.image.h)
                                    ? in.image.at(iy, ix, c)
                                    : 114;
    }
  out.labels.clear();
  for (const auto& l : in.labels) {
    LabelRecord m = l;
    m.cx = 0.5 + s * (l.cx - 0.5);
    m.cy = 0.5 + s * (l.cy - 0.5);
    m.w = s * l.w;
    m.h = s * l.h;
    if (auto kept = clip_label(m)) out.labels.push_back(*kept);
  }
  return out;
}

AnnotatedImage apply_crop(const AnnotatedImage& in, RandomSource& rng) {
  const int w = in.image.w, h = in.image.h;
  const int cw = std::max(8, static_cast<int>(std::lround(w * rng.uniform(0.6, 0.95))));
  const int ch = std::max(8, static_cast<int>(std::lround(h * rng.uniform(0.6, 0.95))));
  if (cw < 8 || ch < 8 || cw > w || ch > h)
    throw std::invalid_argument("geometric_augment: crop window smaller than 8x8");
  const int x0 = rng.uniform_int(0, w - cw);
  const int y0 = rng.uniform_int(0, h - ch);

  AnnotatedImage out = in;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int sx = x0 + std::min(cw - 1, x * cw / w);
      const int sy = y0 + std::min(ch - 1, y * ch / h);
      for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = in.image.at(sy, sx, c);
    }
  out.labels.clear();
  for (const auto& l : in.labels) {
    LabelRecord m = l;  // window coordinates
    m.cx = (l.cx * w - x0) / cw;
    m.cy = (l.cy * h - y0) / ch;
    m.w = l.w * w / cw;
    m.h = l.h * h / ch;
    if (auto kept = clip_label(m)) out.labels.push_back(*kept);
  }
  return out;
}

}  // namespace

AnnotatedImage geometric_augment(const AnnotatedImage& img, RandomSource& rng,
                                 const std::vector<GeomOp>& ops) {
  AnnotatedImage cur = img;
  for (GeomOp op : ops) {
    switch (op) {
      case GeomOp::hflip: cur = apply_hflip(cur); break;
      case GeomOp::vflip: cur = apply_vflip(cur); break;
      case GeomOp::rotate90: cur = apply_rotate90(cur); break;
      case GeomOp::scale: cur = apply_scale(cur, rng); break;
      case GeomOp::crop: cur = apply_crop(cur, rng); break;
    }
  }
  return cur;
}

AugmentResult build_augmented_set(const std::vector<AnnotatedImage>& dataset,
                                  const ClassFrequencyTable& table, const AugmentConfig& cfg,
                                  RandomSource& rng) {
  if (cfg.multiplier < 1)
    throw std::invalid_argument("build_augmented_set: multiplier must be >= 1");
  AugmentResult result;
  result.images = dataset;
  result.manifest["seed"] = rng.seed();
  result.manifest["generated"] = nlohmann::json::array();
  result.manifest["warnings"] = nlohmann::json::array();
  if (cfg.multiplier == 1) return result;

  std::vector<int> minority_images;
  for (size_t i = 0; i < dataset.size(); ++i)
    for (const auto& l : dataset[i].labels)
      if (table.freq_of(l.class_id) < 1.0) {
        minority_images.push_back(static_cast<int>(i));
        break;
      }

  const long gen_count = static_cast<long>(cfg.multiplier - 1) * static_cast<long>(dataset.size());
  for (long j = 0; j < gen_count; ++j) {
    RandomSource sub = rng.split(static_cast<uint64_t>(j));
    const int rec_idx = sub.uniform_int(0, static_cast<int>(dataset.size()) - 1);
    AnnotatedImage sample = dataset[static_cast<size_t>(rec_idx)];
    nlohmann::json recipe;
    recipe["recipient"] = sample.id;
    recipe["seed"] = sub.seed();

    if (!cfg.geometric.empty()) {
      sample = geometric_augment(sample, sub, cfg.geometric);
      nlohmann::json ops = nlohmann::json::array();
      for (GeomOp op : cfg.geometric) ops.push_back(to_string(op));
      recipe["geometric"] = ops;
    }
    if (!minority_images.empty()) {
      const int don_idx =
          minority_images[static_cast<size_t>(sub.uniform_int(0, static_cast<int>(minority_images.size()) - 1))];
      MixRecipe mix;
      sample = mix_samples(dataset[static_cast<size_t>(don_idx)], sample, table, sub,
                           cfg.beta_param, &mix);
      recipe["donor"] = mix.donor_id;
      recipe["beta"] = mix.beta;
      nlohmann::json pasted = nlohmann::json::array();
      for (const auto& l : mix.pasted)
        pasted.push_back({{"class", l.class_id}, {"cx", l.cx}, {"cy", l.cy}, {"w", l.w}, {"h", l.h}});
      recipe["pasted"] = pasted;
      for (const auto& w : mix.warnings) result.manifest["warnings"].push_back(w);
    }
    sample = contrast_adjust(sample, table, cfg.strength);
    char id[32];
    std::snprintf(id, sizeof id, "aug%06ld", j);
    sample.id = id;
    recipe["id"] = sample.id;
    result.manifest["generated"].push_back(recipe);
    result.images.push_back(std::move(sample));
  }
  return result;
}

}  // namespace yolors
