#pragma once

#include <array>
#include <string>
#include <vector>

#include "yolors/random.hpp"
#include "yolors/tensor.hpp"

namespace yolors {

enum class FeatureRole { raw, rfa, f1_gan, f2_caa, f3 };

struct FeatureMap {
  Tensor data;  // [C, H, W]
  FeatureRole role = FeatureRole::raw;

  FeatureMap() = default;
  FeatureMap(Tensor t, FeatureRole r) : data(std::move(t)), role(r) {
    if (data.ndim() != 3)
      throw std::invalid_argument("FeatureMap: data must be [C,H,W], got " + shape_str(data.shape()));
  }
  int channels() const { return data.dim(0); }
  int height() const { return data.dim(1); }
  int width() const { return data.dim(2); }
};

// Ordered finest-first; each coarser level has ceil(previous / 2) spatial dims
// and the same channel count.
struct FeaturePyramid {
  std::vector<FeatureMap> levels;

  void validate() const;
};

// --- RFAconv ----------------------------------------------------------------

// Parallel convolutions with kernel sizes {3,5,7}; a scalar softmax attention
// weight per branch is derived from each branch's pooled response.
struct RfaParams {
  std::vector<int> kernel_sizes{3, 5, 7};
  std::vector<Tensor> kernels;  // per branch: [C_out, C_in, k, k]
  std::vector<Tensor> gains;    // per branch: learnable scalar on the pooled score
};

RfaParams rfa_init(int c_in, int c_out, RandomSource& rng);

FeatureMap rfaconv_forward(const FeatureMap& x, const RfaParams& p);

// --- BiFPN ------------------------------------------------------------------

struct FusionWeights {
  // Raw (pre-normalization) per-edge weights: td nodes finest..coarsest-1,
  // then bottom-up out nodes 1..L-1. Every tensor is 1-D, one entry per edge.
  std::vector<Tensor> node_weights;
  double epsilon = 1e-4;
};

struct BifpnParams {
  std::vector<Tensor> node_convs;  // 3x3, [C,C,3,3], one per fusion node
  FusionWeights fusion;
};

// Node count for an L-level pyramid: (L-1) top-down + (L-1) bottom-up.
BifpnParams bifpn_init(int levels, int channels, RandomSource& rng);

// Normalized fusion: w_hat_i = (relu(w_i) + eps/n) / (sum_j relu(w_j) + eps).
// Sums to exactly 1; a zero raw weight contributes at most eps.
Tensor normalize_fusion(const Tensor& raw, double eps);

FeaturePyramid bifpn_fuse(const FeaturePyramid& p, const BifpnParams& params);

// --- adversarial coupling ----------------------------------------------------

// Two strided conv layers -> GAP -> affine -> sigmoid probability in (0,1);
// pre-sigmoid logit magnitude clamped at 30.
struct Discriminator {
  Tensor conv1;  // [8, C, 3, 3], stride 2
  Tensor conv2;  // [8, 8, 3, 3], stride 2
  Tensor affine_w;  // [8]
  Tensor affine_b;  // [1]
};

Discriminator discriminator_init(int channels, RandomSource& rng);

Tensor discriminator_forward(const Discriminator& d, const FeatureMap& x);

struct GanStep {
  FeaturePyramid f1_gan;
  Tensor g_loss;  // -ln p(fake), non-saturating; flows into the generator
  Tensor d_loss;  // -[ln p(real) + ln(1 - p(fake))] on detached features
};

// F1_GAN = decoder(encoder_out) with the BiFPN as decoder; when
// bifpn_enabled is false the decoder is the identity. reference holds the
// "real" features the discriminator contrasts against.
GanStep adversarial_step(const FeaturePyramid& encoder_out, const FeaturePyramid& reference,
                         const BifpnParams& decoder, const Discriminator& disc,
                         bool bifpn_enabled = true);

// --- losses -------------------------------------------------------------------

struct LossWeights {
  double lambda_x = 1.0;
  double lambda_c = 1.0;
  double lambda_l1 = 1.0;
};

// One detector-grid realization of the masked coordinate / confidence terms.
// Coordinate entries pair a predicted cell-relative 2-vector with a cell
// offset and an absolute target; confidence entries pair a probability with
// a binary mask value.
struct CellAssignment {
  Tensor pred_rel;                               // [n, 2], requires grad in training
  std::vector<std::array<double, 2>> offsets;    // O_v per entry
  std::vector<std::array<double, 2>> targets;    // K* per entry
  std::vector<double> coord_mask;                // y per coordinate entry

  Tensor conf;                                   // [m] probabilities in (0,1)
  std::vector<double> conf_target;               // y per confidence entry
};

// L_x = sum_v sum_i y * ||K + O - K*||_2
Tensor coordinate_loss(const CellAssignment& a);

// Mean binary cross entropy between conf (clamped to [1e-7, 1-1e-7]) and the
// binary targets.
Tensor confidence_loss(const CellAssignment& a);

// L_L1 = sum of |w| over all basis coefficient tensors.
Tensor sparsity_loss(const std::vector<Tensor>& basis_weights);

// L = lambda_x L_x + lambda_c L_c + lambda_l1 L_L1; negative weights rejected.
Tensor composite_loss(const Tensor& lx, const Tensor& lc, const Tensor& ll1, const LossWeights& lw);

// --- F3 -----------------------------------------------------------------------

// F3 = F1 + F2 elementwise; when channel counts differ the optional 1x1
// aligner maps f2's channels onto f1's.
FeatureMap fuse_f3(const FeatureMap& f1, const FeatureMap& f2, const Tensor* align_1x1 = nullptr);

}  // namespace yolors
