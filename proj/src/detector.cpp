#include "yolors/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "yolors/augment.hpp"

namespace yolors {

void ModelConfig::validate() const {
  if (input_size < 16 || input_size % 16 != 0)
    throw std::invalid_argument("ModelConfig: input size must be a positive multiple of 16");
  if (backbone_widths.size() != 3) throw std::invalid_argument("ModelConfig: need 3 stage widths");
  if (levels != 3) throw std::invalid_argument("ModelConfig: the pyramid is three levels deep");
  if (classes < 1) throw std::invalid_argument("ModelConfig: need at least one class");
  if (batch_size < 1 || epochs < 1) throw std::invalid_argument("ModelConfig: bad batch/epochs");
  if (lr < 0 || lr_final < 0 || lr_final > lr)
    throw std::invalid_argument("ModelConfig: bad learning-rate range");
}

Toggles toggles_for_variant(const std::string& name) {
  Toggles t;
  if (name == "full") return t;
  if (name == "no-rfaconv") {
    t.rfaconv = false;
  } else if (name == "no-bifpn") {
    t.bifpn = false;
  } else if (name == "no-self-attention") {
    t.self_attention = false;
  } else if (name == "no-rfafpn") {
    t.rfaconv = false;
    t.bifpn = false;
  } else if (name == "no-caa") {
    t.caa = false;
  } else if (name == "no-acmix") {
    t.acmix = false;
  } else {
    throw std::invalid_argument("unknown ablation variant: " + name);
  }
  return t;
}

std::vector<std::string> standard_variants() {
  return {"full", "no-rfaconv", "no-bifpn", "no-self-attention", "no-rfafpn", "no-caa", "no-acmix"};
}

Model build_model(const ModelConfig& cfg) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  RandomSource rng(cfg.seed);

  const int w0 = cfg.backbone_widths[0], w1 = cfg.backbone_widths[1], w2 = cfg.backbone_widths[2];
  const int p = cfg.pyramid_channels;
  auto conv = [&rng](int cout, int cin, int k) {
    return Tensor::he_normal({cout, cin, k, k}, cin * k * k, rng).set_requires_grad();
  };
  m.backbone_convs = {conv(w0, 3, 3), conv(w1, w0, 3), conv(w2, w1, 3), conv(w2, w2, 3)};
  m.lateral_convs = {conv(p, w1, 1), conv(p, w2, 1), conv(p, w2, 1)};

  for (int l = 0; l < cfg.levels; ++l) {
    if (cfg.use_rfa_multikernel())
      m.rfa.push_back(rfa_init(p, p, rng));
    else
      m.rfa_plain.push_back(conv(p, p, 3));
  }
  if (cfg.use_bifpn()) m.bifpn = bifpn_init(cfg.levels, p, rng);
  if (cfg.use_gan()) m.disc = discriminator_init(p, rng);
  if (cfg.use_caa()) m.caa = caa_init(CaaConfig(p), rng);

  m.head_conv = conv(cfg.head_channels(), p, 1);
  m.head_bias = Tensor::zeros({cfg.head_channels(), 1, 1}).set_requires_grad();
  m.head_norm_gain = Tensor::full({p, 1, 1}, 1.0).set_requires_grad();
  return m;
}

namespace {

void collect(std::vector<std::pair<std::string, Tensor>>& out, const std::string& name,
             const Tensor& t) {
  if (t.defined()) out.emplace_back(name, t);
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> Model::generator_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (size_t i = 0; i < backbone_convs.size(); ++i)
    collect(out, "backbone.conv" + std::to_string(i), backbone_convs[i]);
  for (size_t i = 0; i < lateral_convs.size(); ++i)
    collect(out, "lateral.conv" + std::to_string(i), lateral_convs[i]);
  for (size_t l = 0; l < rfa.size(); ++l)
    for (size_t b = 0; b < rfa[l].kernels.size(); ++b) {
      collect(out, "rfa.l" + std::to_string(l) + ".k" + std::to_string(rfa[l].kernel_sizes[b]),
              rfa[l].kernels[b]);
      collect(out, "rfa.l" + std::to_string(l) + ".gain" + std::to_string(b), rfa[l].gains[b]);
    }
  for (size_t l = 0; l < rfa_plain.size(); ++l)
    collect(out, "rfa.l" + std::to_string(l) + ".plain", rfa_plain[l]);
  for (size_t n = 0; n < bifpn.node_convs.size(); ++n) {
    collect(out, "bifpn.node" + std::to_string(n) + ".conv", bifpn.node_convs[n]);
    collect(out, "bifpn.node" + std::to_string(n) + ".w", bifpn.fusion.node_weights[n]);
  }
  collect(out, "caa.w_q", caa.w_q);
  collect(out, "caa.w_k", caa.w_k);
  collect(out, "caa.w_v", caa.w_v);
  collect(out, "caa.gate", caa.context_gate);
  collect(out, "head.conv", head_conv);
  collect(out, "head.bias", head_bias);
  collect(out, "head.norm_gain", head_norm_gain);
  return out;
}

std::vector<std::pair<std::string, Tensor>> Model::discriminator_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  collect(out, "disc.conv1", disc.conv1);
  collect(out, "disc.conv2", disc.conv2);
  collect(out, "disc.affine_w", disc.affine_w);
  collect(out, "disc.affine_b", disc.affine_b);
  return out;
}

std::vector<std::pair<std::string, Tensor>> Model::parameters() const {
  auto out = generator_parameters();
  auto d = discriminator_parameters();
  out.insert(out.end(), d.begin(), d.end());
  return out;
}

FeaturePyramid backbone_forward(const Model& m, const Tensor& img) {
  const ModelConfig& cfg = m.cfg;
  if (img.ndim() != 3 || img.dim(0) != 3 || img.dim(1) != cfg.input_size ||
      img.dim(2) != cfg.input_size)
    throw std::invalid_argument("backbone_forward: expected [3," + std::to_string(cfg.input_size) +
                                "," + std::to_string(cfg.input_size) + "], got " +
                                shape_str(img.shape()));
  // each stage: 2x pool then a shape-preserving 3x3; taps at strides 4/8/16
  Tensor s0 = leaky_relu(conv2d(max_pool2x2(img), m.backbone_convs[0], 1, 1));  // S/2
  Tensor s1 = leaky_relu(conv2d(max_pool2x2(s0), m.backbone_convs[1], 1, 1));   // S/4
  Tensor s2 = leaky_relu(conv2d(max_pool2x2(s1), m.backbone_convs[2], 1, 1));   // S/8
  Tensor s3 = leaky_relu(conv2d(max_pool2x2(s2), m.backbone_convs[3], 1, 1));   // S/16

  FeaturePyramid p;
  p.levels.emplace_back(conv2d(s1, m.lateral_convs[0], 1, 0), FeatureRole::raw);
  p.levels.emplace_back(conv2d(s2, m.lateral_convs[1], 1, 0), FeatureRole::raw);
  p.levels.emplace_back(conv2d(s3, m.lateral_convs[2], 1, 0), FeatureRole::raw);
  p.validate();
  return p;
}

ForwardState model_forward(const Model& m, const Tensor& img) {
  const ModelConfig& cfg = m.cfg;
  ForwardState st;
  st.laterals = backbone_forward(m, img);

  // receptive-field stage per level
  for (int l = 0; l < cfg.levels; ++l) {
    const FeatureMap& in = st.laterals.levels[static_cast<size_t>(l)];
    if (cfg.use_rfa_multikernel()) {
      st.encoded.levels.push_back(rfaconv_forward(in, m.rfa[static_cast<size_t>(l)]));
    } else if (cfg.toggles.rfaconv || !cfg.toggles.self_attention) {
      st.encoded.levels.emplace_back(
          leaky_relu(conv2d(in.data, m.rfa_plain[static_cast<size_t>(l)], 1, 1)), FeatureRole::rfa);
    } else {  // rfaconv disabled outright: pass the laterals through
      st.encoded.levels.emplace_back(in.data, FeatureRole::rfa);
    }
  }

  if (cfg.use_gan()) {
    GanStep gan = adversarial_step(st.encoded, st.laterals, m.bifpn, m.disc, cfg.use_bifpn());
    st.f1_gan = std::move(gan.f1_gan);
    st.g_loss = gan.g_loss;
    st.d_loss = gan.d_loss;
  } else {
    st.f1_gan = st.encoded;
    for (auto& lvl : st.f1_gan.levels) lvl.role = FeatureRole::f1_gan;
    st.g_loss = Tensor::scalar(0.0);
    st.d_loss = Tensor::scalar(0.0);
  }

  const FeatureMap& f1_fine = st.f1_gan.levels[0];
  if (cfg.use_caa()) {
    FeatureMap f2(caa_forward(f1_fine.data, m.caa), FeatureRole::f2_caa);
    st.f3 = fuse_f3(f1_fine, f2);
  } else {
    st.f3 = FeatureMap(f1_fine.data, FeatureRole::f3);
  }
  st.head_raw = head_forward(m, st.f3);
  return st;
}

Tensor head_forward(const Model& m, const FeatureMap& f3) {
  if (f3.channels() != m.cfg.pyramid_channels)
    throw std::invalid_argument("head_forward: channel mismatch, got " +
                                shape_str(f3.data.shape()));
  // per-position RMS normalization over channels pins the logit scale no
  // matter how the fused features drift during training
  const int c = f3.channels(), h = f3.height(), w = f3.width();
  const int n = h * w;
  Tensor flat = reshape(f3.data, {c, n});
  Tensor ms = scale(matmul(Tensor::full({1, c}, 1.0), mul(flat, flat)), 1.0 / c);  // [1,n]
  Tensor inv = divide(Tensor::full({1, n}, 1.0), sqrt_safe(add_scalar(ms, 1e-6)));
  Tensor normed = reshape(mul(flat, inv), {c, h, w});
  Tensor gained = mul(normed, m.head_norm_gain);
  return add(conv2d(gained, m.head_conv, 1, 0), m.head_bias);
}

HeadTargets assign_targets(const std::vector<LabelRecord>& labels, const ModelConfig& cfg) {
  HeadTargets t;
  const int g = cfg.grid();
  std::vector<char> taken(static_cast<size_t>(g) * g, 0);
  auto claim = [&](const LabelRecord& l, int cx, int cy) {
    if (cx < 0 || cx >= g || cy < 0 || cy >= g) return;
    const int cell = cy * g + cx;
    if (taken[static_cast<size_t>(cell)]) return;  // one object per cell, first wins
    taken[static_cast<size_t>(cell)] = 1;
    t.cells.push_back(cell);
    t.clazz.push_back(l.class_id);
    t.cell_offset.push_back({static_cast<double>(cx), static_cast<double>(cy)});
    t.center_abs.push_back({l.cx * g, l.cy * g});
    t.log_size.push_back({std::log(l.w * g / cfg.box_size_base),
                          std::log(l.h * g / cfg.box_size_base)});
  };
  for (const auto& l : labels) {
    const double gx = l.cx * g, gy = l.cy * g;
    claim(l, std::min(g - 1, static_cast<int>(gx)), std::min(g - 1, static_cast<int>(gy)));
  }
  return t;
}

HeadLoss head_loss(const Tensor& head_raw, const HeadTargets& t, const ModelConfig& cfg) {
  const int g = cfg.grid();
  const int cells = g * g;
  const int classes = cfg.classes;
  const size_t n = t.cells.size();

  // objectness over every cell; class probabilities at the assigned cells.
  // Foreground entries are scored separately from the background ones and
  // the two means averaged, so a handful of positives is not drowned by the
  // empty cells.
  std::vector<char> is_pos(static_cast<size_t>(cells), 0);
  std::vector<char> is_ring(static_cast<size_t>(cells), 0);
  for (size_t i = 0; i < n; ++i) is_pos[static_cast<size_t>(t.cells[i])] = 1;
  // receptive fields of the 8 neighbours overlap the object; they get a
  // softly weighted background target instead of competing at full strength
  for (size_t i = 0; i < n; ++i) {
    const int cx = t.cells[i] % g, cy = t.cells[i] / g;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int nx = cx + dx, ny = cy + dy;
        if (nx < 0 || nx >= g || ny < 0 || ny >= g) continue;
        const int cell = ny * g + nx;
        if (!is_pos[static_cast<size_t>(cell)]) is_ring[static_cast<size_t>(cell)] = 1;
      }
  }

  std::vector<int> pos_idx, neg_idx, ring_idx;
  std::vector<double> pos_y, neg_y, ring_y;
  for (int i = 0; i < cells; ++i) {
    if (is_pos[static_cast<size_t>(i)]) {
      pos_idx.push_back(i);
      pos_y.push_back(1.0);
    } else if (is_ring[static_cast<size_t>(i)]) {
      ring_idx.push_back(i);
      ring_y.push_back(0.0);
    } else {
      neg_idx.push_back(i);
      neg_y.push_back(0.0);
    }
  }
  for (size_t i = 0; i < n; ++i)
    for (int c = 0; c < classes; ++c) {
      pos_idx.push_back((1 + c) * cells + t.cells[i]);
      pos_y.push_back(t.clazz[i] == c ? 1.0 : 0.0);
    }

  CellAssignment neg_assign;
  neg_assign.conf = sigmoid(gather_flat(head_raw, neg_idx));
  neg_assign.conf_target = neg_y;
  Tensor lc = scale(confidence_loss(neg_assign), 0.5);
  if (!pos_idx.empty()) {
    CellAssignment pos_assign;
    pos_assign.conf = sigmoid(gather_flat(head_raw, pos_idx));
    pos_assign.conf_target = pos_y;
    lc = add(lc, scale(confidence_loss(pos_assign), 0.5));
  }
  if (!ring_idx.empty()) {
    CellAssignment ring_assign;
    ring_assign.conf = sigmoid(gather_flat(head_raw, ring_idx));
    ring_assign.conf_target = ring_y;
    lc = add(lc, scale(confidence_loss(ring_assign), cfg.ring_weight));
  }

  Tensor lx;
  if (n == 0) {
    lx = Tensor::scalar(0.0);
  } else {
    std::vector<int> center_idx, size_idx;
    for (size_t i = 0; i < n; ++i) {
      center_idx.push_back((1 + classes) * cells + t.cells[i]);      // dx channel
      center_idx.push_back((1 + classes + 1) * cells + t.cells[i]);  // dy channel
      size_idx.push_back((1 + classes + 2) * cells + t.cells[i]);    // log w
      size_idx.push_back((1 + classes + 3) * cells + t.cells[i]);    // log h
    }
    CellAssignment centers;
    // expanded offset range 1.5*sigmoid - 0.25 keeps near-boundary centers
    // away from the saturated tails
    centers.pred_rel = add_scalar(
        scale(sigmoid(gather_flat(head_raw, center_idx, {static_cast<int>(n), 2})), 1.5), -0.25);
    centers.offsets = t.cell_offset;
    centers.targets = t.center_abs;
    centers.coord_mask.assign(n, 1.0);

    CellAssignment sizes;
    sizes.pred_rel = gather_flat(head_raw, size_idx, {static_cast<int>(n), 2});
    sizes.offsets.assign(n, {0.0, 0.0});
    sizes.targets = t.log_size;
    sizes.coord_mask.assign(n, 1.0);

    lx = add(coordinate_loss(centers), coordinate_loss(sizes));
  }
  return {lx, lc};
}

std::vector<Detection> decode_predictions(const Tensor& head_raw, const ModelConfig& cfg,
                                          double conf_threshold) {
  if (conf_threshold < 0.0 || conf_threshold > 1.0)
    throw std::invalid_argument("decode_predictions: confidence threshold must be in [0,1]");
  const int g = cfg.grid();
  const int cells = g * g;
  const int classes = cfg.classes;
  const double s = static_cast<double>(cfg.input_size);
  const double cell_px = s / g;
  const auto& v = head_raw.values();
  auto sig = [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); };

  std::vector<Detection> out;
  for (int cell = 0; cell < cells; ++cell) {
    const double obj = sig(v[static_cast<size_t>(cell)]);
    int best_c = 0;
    double best_p = -1.0;
    for (int c = 0; c < classes; ++c) {
      const double p = sig(v[static_cast<size_t>((1 + c) * cells + cell)]);
      if (p > best_p) {
        best_p = p;
        best_c = c;
      }
    }
    const double score = obj * best_p;
    if (score < conf_threshold) continue;
    const int gx = cell % g, gy = cell / g;
    const double dx = 1.5 * sig(v[static_cast<size_t>((1 + classes) * cells + cell)]) - 0.25;
    const double dy = 1.5 * sig(v[static_cast<size_t>((1 + classes + 1) * cells + cell)]) - 0.25;
    const double bw = std::exp(v[static_cast<size_t>((1 + classes + 2) * cells + cell)]) *
                      cfg.box_size_base * cell_px;
    const double bh = std::exp(v[static_cast<size_t>((1 + classes + 3) * cells + cell)]) *
                      cfg.box_size_base * cell_px;
    const double cx = (gx + dx) * cell_px;
    const double cy = (gy + dy) * cell_px;
    Detection d;
    d.class_id = best_c;
    d.score = score;
    d.box.x1 = std::clamp(cx - bw / 2, 0.0, s - 1e-3);
    d.box.y1 = std::clamp(cy - bh / 2, 0.0, s - 1e-3);
    d.box.x2 = std::clamp(cx + bw / 2, d.box.x1 + 1e-3, s);
    d.box.y2 = std::clamp(cy + bh / 2, d.box.y1 + 1e-3, s);
    out.push_back(d);
  }
  return out;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold) {
  if (iou_threshold <= 0.0 || iou_threshold >= 1.0)
    throw std::invalid_argument("nms: iou threshold must lie in (0,1)");
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return dets[static_cast<size_t>(a)].score > dets[static_cast<size_t>(b)].score; });
  std::vector<char> dead(dets.size(), 0);
  std::vector<int> kept_idx;
  for (int i : order) {
    if (dead[static_cast<size_t>(i)]) continue;
    kept_idx.push_back(i);
    for (int j : order) {
      if (dead[static_cast<size_t>(j)] || j == i) continue;
      const auto& a = dets[static_cast<size_t>(i)];
      const auto& b = dets[static_cast<size_t>(j)];
      if (a.class_id != b.class_id || a.image_id != b.image_id) continue;
      if (b.score > a.score || (b.score == a.score && j < i)) continue;  // only suppress later ranks
      if (iou(a.box, b.box) > iou_threshold) dead[static_cast<size_t>(j)] = 1;
    }
  }
  std::sort(kept_idx.begin(), kept_idx.end());
  std::vector<Detection> out;
  for (int i : kept_idx) out.push_back(dets[static_cast<size_t>(i)]);
  return out;
}

Tensor image_to_tensor(const Image8& img) {
  std::vector<double> v(static_cast<size_t>(3) * img.h * img.w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x)
        v[(static_cast<size_t>(c) * img.h + y) * img.w + x] = img.at(y, x, c) / 255.0;
  return Tensor::from({3, img.h, img.w}, std::move(v));
}

GroundTruth label_to_truth(const LabelRecord& l, int image_size, int image_id) {
  GroundTruth g;
  g.class_id = l.class_id;
  g.image_id = image_id;
  g.box.x1 = (l.cx - l.w / 2) * image_size;
  g.box.y1 = (l.cy - l.h / 2) * image_size;
  g.box.x2 = (l.cx + l.w / 2) * image_size;
  g.box.y2 = (l.cy + l.h / 2) * image_size;
  return g;
}

std::vector<Detection> predict(const Model& m, const Image8& img) {
  ForwardState st = model_forward(m, image_to_tensor(img));
  std::vector<Detection> dets = decode_predictions(st.head_raw, m.cfg, m.cfg.conf_threshold);
  return nms(dets, m.cfg.nms_iou);
}

// --- training --------------------------------------------------------------------

namespace {

struct SgdState {
  std::map<std::string, std::vector<double>> velocity;

  void step(std::vector<std::pair<std::string, Tensor>>& params, double lr, double momentum,
            double grad_clip) {
    double norm_sq = 0.0;
    for (auto& [name, t] : params)
      for (double g : t.grad()) norm_sq += g * g;
    const double norm = std::sqrt(norm_sq);
    const double clip = grad_clip > 0.0 && norm > grad_clip ? grad_clip / norm : 1.0;
    for (auto& [name, t] : params) {
      auto& vel = velocity[name];
      if (vel.size() != t.values().size()) vel.assign(t.values().size(), 0.0);
      const auto& g = t.grad();
      auto& v = t.values();
      for (size_t i = 0; i < v.size(); ++i) {
        vel[i] = momentum * vel[i] + clip * g[i];
        v[i] -= lr * vel[i];
      }
    }
  }
};

void zero_all(std::vector<std::pair<std::string, Tensor>>& params) {
  for (auto& [name, t] : params) t.zero_grad();
}

double cosine_lr(const ModelConfig& cfg, int epoch) {
  const int warm = std::min(cfg.warmup_epochs, cfg.epochs / 2);
  if (epoch < warm) return cfg.lr * static_cast<double>(epoch + 1) / static_cast<double>(warm);
  if (cfg.epochs - warm <= 1) return cfg.lr;
  const double f = static_cast<double>(epoch - warm) / static_cast<double>(cfg.epochs - warm - 1);
  return cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1.0 + std::cos(3.14159265358979323846 * f));
}

}  // namespace

TrainResult train(Model& m, const std::vector<AnnotatedImage>& train_set, int epoch_limit) {
  const ModelConfig& cfg = m.cfg;
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");

  // acmix runs ahead of the loop as a deterministic dataset expansion
  std::vector<AnnotatedImage> data = train_set;
  if (cfg.toggles.acmix && cfg.augment_multiplier > 1) {
    ClassFrequencyTable table = compute_class_frequencies(train_set);
    AugmentConfig acfg;
    acfg.multiplier = cfg.augment_multiplier;
    acfg.strength = cfg.augment_strength;
    acfg.beta_param = cfg.augment_beta;
    acfg.seed = cfg.seed ^ 0xACF000;
    RandomSource arng(acfg.seed);
    data = build_augmented_set(train_set, table, acfg, arng).images;
  }

  auto gen_params = m.generator_parameters();
  auto disc_params = m.discriminator_parameters();
  SgdState gen_state, disc_state;

  TrainResult result;
  const int epochs = epoch_limit < 0 ? cfg.epochs : std::min(epoch_limit, cfg.epochs);
  const int n = static_cast<int>(data.size());

  for (int epoch = 0; epoch < epochs; ++epoch) {
    const double lr = cosine_lr(cfg, epoch);
    RandomSource order_rng(cfg.seed ^ (0x5eed0000ULL + static_cast<uint64_t>(epoch)));
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (int i = n - 1; i > 0; --i) std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(order_rng.uniform_int(0, i))]);

    TrainLogEntry entry;
    entry.epoch = epoch;
    entry.lr = lr;
    int batches = 0;

    for (int start = 0; start < n; start += cfg.batch_size, ++batches) {
      const int bsz = std::min(cfg.batch_size, n - start);
      const double inv_b = 1.0 / static_cast<double>(bsz);

      std::vector<ForwardState> states;
      states.reserve(static_cast<size_t>(bsz));
      for (int b = 0; b < bsz; ++b) {
        const auto& sample = data[static_cast<size_t>(order[static_cast<size_t>(start + b)])];
        states.push_back(model_forward(m, image_to_tensor(sample.image)));
      }

      // discriminator step on detached features
      double d_val = 0.0;
      if (cfg.use_gan()) {
        Tensor d_total;
        for (int b = 0; b < bsz; ++b) {
          d_total = b == 0 ? states[static_cast<size_t>(b)].d_loss
                           : add(d_total, states[static_cast<size_t>(b)].d_loss);
        }
        d_total = scale(d_total, inv_b);
        d_val = d_total.value();
        backward(d_total);
        disc_state.step(disc_params, lr, cfg.momentum, cfg.grad_clip);
        zero_all(disc_params);
        zero_all(gen_params);
      }

      // generator + detector step; the discriminator scores the fixed fakes
      // with its freshly updated weights
      Tensor lx_total, lc_total, g_total;
      for (int b = 0; b < bsz; ++b) {
        ForwardState& st = states[static_cast<size_t>(b)];
        const auto& sample = data[static_cast<size_t>(order[static_cast<size_t>(start + b)])];
        HeadTargets targets = assign_targets(sample.labels, cfg);
        HeadLoss hl = head_loss(st.head_raw, targets, cfg);
        Tensor g = cfg.use_gan()
                       ? scale(log(discriminator_forward(m.disc, st.f1_gan.levels[0])), -1.0)
                       : Tensor::scalar(0.0);
        lx_total = b == 0 ? hl.lx : add(lx_total, hl.lx);
        lc_total = b == 0 ? hl.lc : add(lc_total, hl.lc);
        g_total = b == 0 ? g : add(g_total, g);
      }
      Tensor lx = scale(lx_total, inv_b);
      Tensor lc = scale(lc_total, inv_b);
      Tensor g_loss = scale(g_total, inv_b);

      std::vector<Tensor> basis = m.bifpn.fusion.node_weights;  // empty when bifpn is off
      Tensor ll1 = sparsity_loss(basis);
      LossWeights lw{cfg.lambda_x, cfg.lambda_c, cfg.lambda_l1};
      Tensor total = add(composite_loss(lx, lc, ll1, lw), scale(g_loss, cfg.lambda_gan));

      if (!std::isfinite(total.value()))
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(batches));

      backward(total);
      gen_state.step(gen_params, lr, cfg.momentum, cfg.grad_clip);
      zero_all(gen_params);
      zero_all(disc_params);  // g_loss grads flow through the discriminator; discard them

      entry.total += total.value();
      entry.lx += lx.value();
      entry.lc += lc.value();
      entry.ll1 += ll1.value();
      entry.g_loss += g_loss.value();
      entry.d_loss += d_val;
    }

    const double inv = 1.0 / std::max(1, batches);
    entry.total *= inv;
    entry.lx *= inv;
    entry.lc *= inv;
    entry.ll1 *= inv;
    entry.g_loss *= inv;
    entry.d_loss *= inv;
    result.log.push_back(entry);
  }
  return result;
}

EvalReport evaluate_model(const Model& m, const std::vector<AnnotatedImage>& val_set) {
  // decode low for a full ranking (AP uses every detection); the reported
  // precision/recall/F1 still apply the configured confidence threshold
  const double decode_thr = std::min(0.05, m.cfg.conf_threshold);
  std::vector<Detection> dets;
  std::vector<GroundTruth> truths;
  for (size_t i = 0; i < val_set.size(); ++i) {
    const int image_id = static_cast<int>(i);
    for (const auto& l : val_set[i].labels)
      truths.push_back(label_to_truth(l, m.cfg.input_size, image_id));
    ForwardState st = model_forward(m, image_to_tensor(val_set[i].image));
    auto pred = nms(decode_predictions(st.head_raw, m.cfg, decode_thr), m.cfg.nms_iou);
    for (auto& d : pred) d.image_id = image_id;
    dets.insert(dets.end(), pred.begin(), pred.end());
  }
  return evaluate(dets, truths, m.cfg.classes, 0.5, m.cfg.conf_threshold);
}

// --- FLOPs -------------------------------------------------------------------------

long long conv_macs(long long cout, long long cin, long long k, long long oh, long long ow) {
  return cout * cin * k * k * oh * ow;
}

long long affine_macs(long long in, long long out) { return in * out; }

namespace {

std::vector<std::pair<std::string, long long>> module_macs_for(const ModelConfig& cfg) {
  std::vector<std::pair<std::string, long long>> rows;
  const long long s = cfg.input_size;
  const long long w0 = cfg.backbone_widths[0], w1 = cfg.backbone_widths[1],
                  w2 = cfg.backbone_widths[2];
  const long long p = cfg.pyramid_channels;
  const long long g = cfg.grid();

  long long backbone = conv_macs(w0, 3, 3, s / 2, s / 2) + conv_macs(w1, w0, 3, s / 4, s / 4) +
                       conv_macs(w2, w1, 3, s / 8, s / 8) + conv_macs(w2, w2, 3, s / 16, s / 16);
  backbone += conv_macs(p, w1, 1, s / 4, s / 4) + conv_macs(p, w2, 1, s / 8, s / 8) +
              conv_macs(p, w2, 1, s / 16, s / 16);
  rows.emplace_back("backbone", backbone);

  long long rfa = 0;
  for (int l = 0; l < cfg.levels; ++l) {
    const long long side = s >> (2 + l);
    if (cfg.use_rfa_multikernel()) {
      for (int k : {3, 5, 7}) rfa += conv_macs(p, p, k, side, side);
      rfa += 3 * p * side * side;  // branch weighting multiplies
    } else if (cfg.toggles.rfaconv || !cfg.toggles.self_attention) {
      rfa += conv_macs(p, p, 3, side, side);
    }
  }
  rows.emplace_back("rfaconv", rfa);

  long long bifpn = 0;
  if (cfg.use_bifpn()) {
    // td nodes at levels 1 and 0, bottom-up nodes at levels 1 and 2
    for (int l : {1, 0, 1, 2}) {
      const long long side = s >> (2 + l);
      bifpn += conv_macs(p, p, 3, side, side);
      bifpn += 3 * p * side * side;  // edge weighting
    }
  }
  rows.emplace_back("bifpn", bifpn);

  long long disc = 0;
  if (cfg.use_gan()) disc = conv_macs(8, p, 3, g, g) + conv_macs(8, 8, 3, g / 2, g / 2) + affine_macs(8, 1);
  rows.emplace_back("discriminator", disc);

  long long caa = 0;
  if (cfg.use_caa()) {
    const long long n = g * g;
    const long long d = p, da = (p + 1) / 2;
    caa = 2 * n * d * da + n * n * da + n * n * d;  // Q/K projections, scores, attend
    caa += n * d * d;                               // V projection
    caa += n * d + d;                               // context gating
  }
  rows.emplace_back("caa", caa);

  rows.emplace_back("head", conv_macs(cfg.head_channels(), p, 1, g, g));

  long long acmix = 0;
  if (cfg.toggles.acmix && cfg.augment_multiplier > 1) {
    // per generated image: contrast map + blend over the raster, 3 channels
    acmix = static_cast<long long>(cfg.augment_multiplier - 1) * 2 * 3 * s * s;
  }
  rows.emplace_back("acmix_augment", acmix);
  return rows;
}

}  // namespace

long long FlopReport::total_macs() const {
  long long t = 0;
  for (const auto& [name, macs] : module_macs) t += macs;
  return t;
}

FlopReport count_flops(const ModelConfig& cfg) {
  cfg.validate();
  FlopReport r;
  r.module_macs = module_macs_for(cfg);
  for (const auto& name : standard_variants()) {
    ModelConfig variant = cfg;
    variant.toggles = toggles_for_variant(name);
    long long macs = 0;
    for (const auto& [mod, m] : module_macs_for(variant)) macs += m;
    r.variant_flops[name] = 2 * macs;
  }
  return r;
}

}  // namespace yolors
