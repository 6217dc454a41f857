#include "yolors/rfafpn.hpp"

#include <cmath>

namespace yolors {

void FeaturePyramid::validate() const {
  if (levels.empty()) throw std::invalid_argument("FeaturePyramid: no levels");
  for (size_t i = 1; i < levels.size(); ++i) {
    const auto& prev = levels[i - 1];
    const auto& cur = levels[i];
    if (cur.channels() != prev.channels())
      throw std::invalid_argument("FeaturePyramid: channel counts differ between levels");
    if (cur.height() != (prev.height() + 1) / 2 || cur.width() != (prev.width() + 1) / 2)
      throw std::invalid_argument("FeaturePyramid: level " + std::to_string(i) +
                                  " is not ceil(previous/2) in space");
  }
}

// --- RFAconv ------------------------------------------------------------------

RfaParams rfa_init(int c_in, int c_out, RandomSource& rng) {
  RfaParams p;
  for (int k : p.kernel_sizes) {
    p.kernels.push_back(
        Tensor::he_normal({c_out, c_in, k, k}, c_in * k * k, rng).set_requires_grad());
    p.gains.push_back(Tensor::full({1}, 1.0).set_requires_grad());
  }
  return p;
}

FeatureMap rfaconv_forward(const FeatureMap& x, const RfaParams& p) {
  if (p.kernels.size() != p.kernel_sizes.size() || p.gains.size() != p.kernel_sizes.size())
    throw std::invalid_argument("rfaconv_forward: branch parameter count mismatch");
  std::vector<Tensor> branches;
  std::vector<Tensor> scores;
  for (size_t b = 0; b < p.kernels.size(); ++b) {
    const int k = p.kernel_sizes[b];
    Tensor out = conv2d(x.data, p.kernels[b], 1, (k - 1) / 2);
    if (!branches.empty() && out.shape() != branches.front().shape())
      throw std::invalid_argument("rfaconv_forward: inconsistent branch output shapes");
    scores.push_back(mul(mean(global_avg_pool(out)), p.gains[b]));
    branches.push_back(std::move(out));
  }
  Tensor alpha = softmax(concat1d(scores), 0);  // [B], sums to 1
  Tensor acc;
  for (size_t b = 0; b < branches.size(); ++b) {
    Tensor term = mul(branches[b], gather_flat(alpha, {static_cast<int>(b)}, {1}));
    acc = b == 0 ? term : add(acc, term);
  }
  return FeatureMap(acc, FeatureRole::rfa);
}

// --- BiFPN --------------------------------------------------------------------

BifpnParams bifpn_init(int levels, int channels, RandomSource& rng) {
  if (levels < 2) throw std::invalid_argument("bifpn_init: need at least 2 levels");
  BifpnParams p;
  auto add_node = [&](int fan) {
    p.node_convs.push_back(
        Tensor::he_normal({channels, channels, 3, 3}, channels * 9, rng).set_requires_grad());
    p.fusion.node_weights.push_back(Tensor::full({fan}, 1.0).set_requires_grad());
  };
  for (int l = levels - 2; l >= 0; --l) add_node(2);                       // top-down nodes
  for (int l = 1; l <= levels - 1; ++l) add_node(l < levels - 1 ? 3 : 2);  // bottom-up nodes
  return p;
}

Tensor normalize_fusion(const Tensor& raw, double eps) {
  const int n = raw.size();
  Tensor r = relu(raw);
  Tensor denom = add_scalar(sum(r), eps);
  Tensor w = divide(add_scalar(r, eps / n), denom);
  if (InvariantMonitor::enabled) {
    double s = 0.0;
    for (double v : w.values()) s += v;
    InvariantMonitor::record_fusion(std::fabs(s - 1.0));
  }
  return w;
}

namespace {

Tensor fuse_node(const std::vector<Tensor>& inputs, const Tensor& raw_w, double eps,
                 const Tensor& conv_kern) {
  if (static_cast<int>(inputs.size()) != raw_w.size())
    throw std::invalid_argument("bifpn_fuse: node expects " + std::to_string(raw_w.size()) +
                                " incoming edges, got " + std::to_string(inputs.size()));
  for (size_t i = 1; i < inputs.size(); ++i)
    if (inputs[i].shape() != inputs[0].shape())
      throw std::invalid_argument("bifpn_fuse: mismatched level shapes after resampling");
  Tensor w = normalize_fusion(raw_w, eps);
  Tensor acc;
  for (size_t i = 0; i < inputs.size(); ++i) {
    Tensor term = mul(inputs[i], gather_flat(w, {static_cast<int>(i)}, {1}));
    acc = i == 0 ? term : add(acc, term);
  }
  return conv2d(acc, conv_kern, 1, 1);
}

}  // namespace

FeaturePyramid bifpn_fuse(const FeaturePyramid& p, const BifpnParams& params) {
  p.validate();
  const int levels = static_cast<int>(p.levels.size());
  if (levels < 2) throw std::invalid_argument("bifpn_fuse: need at least 2 levels");
  const size_t expected_nodes = 2 * static_cast<size_t>(levels - 1);
  if (params.node_convs.size() != expected_nodes ||
      params.fusion.node_weights.size() != expected_nodes)
    throw std::invalid_argument("bifpn_fuse: parameter count does not match pyramid depth");

  const double eps = params.fusion.epsilon;
  size_t node = 0;

  std::vector<Tensor> td(static_cast<size_t>(levels));
  td[levels - 1] = p.levels[levels - 1].data;
  for (int l = levels - 2; l >= 0; --l, ++node) {
    Tensor up = upsample_nearest(td[l + 1], p.levels[l].height(), p.levels[l].width());
    td[l] = fuse_node({p.levels[l].data, up}, params.fusion.node_weights[node], eps,
                      params.node_convs[node]);
  }

  std::vector<Tensor> out(static_cast<size_t>(levels));
  out[0] = td[0];
  for (int l = 1; l <= levels - 1; ++l, ++node) {
    std::vector<Tensor> inputs{p.levels[l].data};
    if (l < levels - 1) inputs.push_back(td[l]);
    inputs.push_back(max_pool2x2(out[l - 1]));
    out[l] = fuse_node(inputs, params.fusion.node_weights[node], eps, params.node_convs[node]);
  }

  FeaturePyramid result;
  for (int l = 0; l < levels; ++l) result.levels.emplace_back(out[l], p.levels[l].role);
  return result;
}

// --- adversarial coupling -------------------------------------------------------

Discriminator discriminator_init(int channels, RandomSource& rng) {
  Discriminator d;
  d.conv1 = Tensor::he_normal({8, channels, 3, 3}, channels * 9, rng).set_requires_grad();
  d.conv2 = Tensor::he_normal({8, 8, 3, 3}, 72, rng).set_requires_grad();
  d.affine_w = Tensor::he_normal({8}, 8, rng).set_requires_grad();
  d.affine_b = Tensor::zeros({1}).set_requires_grad();
  return d;
}

Tensor discriminator_forward(const Discriminator& d, const FeatureMap& x) {
  Tensor h = max_pool2x2(leaky_relu(conv2d(x.data, d.conv1, 1, 1)));
  h = max_pool2x2(leaky_relu(conv2d(h, d.conv2, 1, 1)));
  Tensor logit = add(sum(mul(global_avg_pool(h), d.affine_w)), d.affine_b);
  return sigmoid(clamp(logit, -30.0, 30.0));
}

GanStep adversarial_step(const FeaturePyramid& encoder_out, const FeaturePyramid& reference,
                         const BifpnParams& decoder, const Discriminator& disc,
                         bool bifpn_enabled) {
  if (encoder_out.levels.size() != reference.levels.size())
    throw std::invalid_argument("adversarial_step: encoder and reference level counts differ");
  for (size_t l = 0; l < encoder_out.levels.size(); ++l)
    if (encoder_out.levels[l].data.shape() != reference.levels[l].data.shape())
      throw std::invalid_argument("adversarial_step: encoder and reference shapes differ");

  GanStep step;
  if (bifpn_enabled) {
    step.f1_gan = bifpn_fuse(encoder_out, decoder);
  } else {
    step.f1_gan = encoder_out;
  }
  for (auto& level : step.f1_gan.levels) level.role = FeatureRole::f1_gan;

  // Discriminator loss on detached features: no gradient into the generator.
  FeatureMap fake_detached(step.f1_gan.levels[0].data.detach(), FeatureRole::f1_gan);
  FeatureMap real_detached(reference.levels[0].data.detach(), FeatureRole::raw);
  Tensor p_real = discriminator_forward(disc, real_detached);
  Tensor p_fake = discriminator_forward(disc, fake_detached);
  step.d_loss = scale(add(log(p_real), log(add_scalar(scale(p_fake, -1.0), 1.0))), -1.0);

  // Non-saturating generator loss through the live graph.
  Tensor p_fake_live = discriminator_forward(disc, step.f1_gan.levels[0]);
  step.g_loss = scale(log(p_fake_live), -1.0);
  return step;
}

// --- losses ---------------------------------------------------------------------

Tensor coordinate_loss(const CellAssignment& a) {
  const size_t n = a.offsets.size();
  if (a.targets.size() != n || a.coord_mask.size() != n)
    throw std::invalid_argument("coordinate_loss: entry counts disagree");
  if (n == 0) return Tensor::scalar(0.0);
  if (a.pred_rel.ndim() != 2 || a.pred_rel.dim(0) != static_cast<int>(n) || a.pred_rel.dim(1) != 2)
    throw std::invalid_argument("coordinate_loss: pred_rel must be [n,2]");
  std::vector<double> shift(2 * n);
  for (size_t i = 0; i < n; ++i) {
    shift[2 * i] = a.offsets[i][0] - a.targets[i][0];
    shift[2 * i + 1] = a.offsets[i][1] - a.targets[i][1];
  }
  Tensor d = add(a.pred_rel, Tensor::from({static_cast<int>(n), 2}, std::move(shift)));
  Tensor sq = mul(d, d);
  std::vector<int> xi(n), yi(n);
  for (size_t i = 0; i < n; ++i) {
    xi[i] = static_cast<int>(2 * i);
    yi[i] = static_cast<int>(2 * i + 1);
  }
  Tensor dist = sqrt_safe(add(gather_flat(sq, xi), gather_flat(sq, yi)));
  return sum(mul(dist, Tensor::from({static_cast<int>(n)}, a.coord_mask)));
}

Tensor confidence_loss(const CellAssignment& a) {
  const int m = a.conf.defined() ? a.conf.size() : 0;
  if (m == 0) return Tensor::scalar(0.0);
  if (static_cast<int>(a.conf_target.size()) != m)
    throw std::invalid_argument("confidence_loss: target count disagrees with conf");
  Tensor c = clamp(a.conf, 1e-7, 1.0 - 1e-7);
  Tensor y = Tensor::from({m}, a.conf_target);
  Tensor one_minus_y = add_scalar(scale(y, -1.0), 1.0);
  Tensor term = add(mul(y, log(c)), mul(one_minus_y, log(add_scalar(scale(c, -1.0), 1.0))));
  return scale(mean(term), -1.0);
}

Tensor sparsity_loss(const std::vector<Tensor>& basis_weights) {
  Tensor acc = Tensor::scalar(0.0);
  for (const auto& w : basis_weights) acc = add(acc, sum(abs(w)));
  return acc;
}

Tensor composite_loss(const Tensor& lx, const Tensor& lc, const Tensor& ll1,
                      const LossWeights& lw) {
  if (lw.lambda_x < 0.0 || lw.lambda_c < 0.0 || lw.lambda_l1 < 0.0)
    throw std::invalid_argument("composite_loss: negative loss weight");
  return add(add(scale(lx, lw.lambda_x), scale(lc, lw.lambda_c)), scale(ll1, lw.lambda_l1));
}

// --- F3 --------------------------------------------------------------------------

FeatureMap fuse_f3(const FeatureMap& f1, const FeatureMap& f2, const Tensor* align_1x1) {
  if (f1.height() != f2.height() || f1.width() != f2.width())
    throw std::invalid_argument("fuse_f3: irreconcilable spatial shapes " +
                                shape_str(f1.data.shape()) + " vs " + shape_str(f2.data.shape()));
  Tensor rhs = f2.data;
  if (f1.channels() != f2.channels()) {
    if (!align_1x1)
      throw std::invalid_argument("fuse_f3: channel counts differ and no 1x1 aligner given");
    if (align_1x1->dim(0) != f1.channels() || align_1x1->dim(1) != f2.channels() ||
        align_1x1->dim(2) != 1 || align_1x1->dim(3) != 1)
      throw std::invalid_argument("fuse_f3: aligner must be [C1,C2,1,1]");
    rhs = conv2d(rhs, *align_1x1, 1, 0);
  }
  return FeatureMap(add(f1.data, rhs), FeatureRole::f3);
}

}  // namespace yolors
