#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "yolors/caa.hpp"
#include "yolors/dataset.hpp"
#include "yolors/metrics.hpp"
#include "yolors/rfafpn.hpp"
#include "yolors/tensor.hpp"

namespace yolors {

struct Toggles {
  bool caa = true;
  bool rfaconv = true;
  bool bifpn = true;
  bool acmix = true;
  bool self_attention = true;
};

struct ModelConfig {
  int input_size = 64;
  std::vector<int> backbone_widths = {16, 24, 32};  // stage widths; last stage reused twice
  int pyramid_channels = 16;
  int levels = 3;
  int classes = 2;

  double lr = 0.001;
  double lr_final = 0.00001;
  int warmup_epochs = 2;   // linear ramp before the cosine decay
  double grad_clip = 5.0;  // global gradient-norm ceiling, 0 disables
  double ring_weight = 0.1;  // background weight for the 8-neighbourhood of positives
  double momentum = 0.9;
  int batch_size = 8;
  int epochs = 30;
  uint64_t seed = 1;

  Toggles toggles;

  // Training loss weights. Eq-style composite defaults are (1,1,1); the
  // desk-scale training default shrinks the L1 term so the fusion weights
  // are regularized rather than killed (see the sparsity term's gradient
  // scale relative to a handful of fusion weights).
  double lambda_x = 1.0;
  double lambda_c = 1.0;
  double lambda_l1 = 0.01;
  double lambda_gan = 0.1;

  double conf_threshold = 0.25;
  double nms_iou = 0.5;
  double box_size_base = 2.0;  // grid cells represented by a raw size of 0

  // acmix augmentation knobs (used when toggles.acmix)
  int augment_multiplier = 2;
  double augment_strength = 0.5;
  double augment_beta = 1.0;

  int grid() const { return input_size / 4; }
  int head_channels() const { return 1 + classes + 4; }

  // The self-attention toggle gates every attention mechanism: the CAA
  // dot-product attention and the multi-kernel attention convolution.
  bool use_caa() const { return toggles.caa && toggles.self_attention; }
  bool use_rfa_multikernel() const { return toggles.rfaconv && toggles.self_attention; }
  bool use_bifpn() const { return toggles.bifpn; }
  bool use_gan() const { return toggles.rfaconv || toggles.bifpn; }

  void validate() const;
};

Toggles toggles_for_variant(const std::string& name);
std::vector<std::string> standard_variants();  // full + the single-module ablations

struct Model {
  ModelConfig cfg;
  std::vector<Tensor> backbone_convs;  // one 3x3 per stage, applied after 2x pooling
  std::vector<Tensor> lateral_convs;   // 1x1 projections to the pyramid width
  std::vector<RfaParams> rfa;          // per level, multi-kernel path
  std::vector<Tensor> rfa_plain;       // per level, plain 3x3 path
  BifpnParams bifpn;
  Discriminator disc;
  CaaWeights caa;
  Tensor head_conv;  // [1+classes+4, C, 1, 1]
  Tensor head_bias;  // [1+classes+4, 1, 1]
  Tensor head_norm_gain;  // [C, 1, 1], scales the RMS-normalized head input

  std::vector<std::pair<std::string, Tensor>> parameters() const;
  std::vector<std::pair<std::string, Tensor>> generator_parameters() const;
  std::vector<std::pair<std::string, Tensor>> discriminator_parameters() const;
};

Model build_model(const ModelConfig& cfg);

// Backbone stub: alternating 2x max-pool and 3x3 convolution, tapping three
// levels at strides 4/8/16, each lateral-projected to the pyramid width.
FeaturePyramid backbone_forward(const Model& m, const Tensor& img);

struct ForwardState {
  FeaturePyramid laterals;  // reference ("real") features for the discriminator
  FeaturePyramid encoded;   // after the receptive-field stage
  FeaturePyramid f1_gan;
  Tensor g_loss, d_loss;
  FeatureMap f3;
  Tensor head_raw;  // [1+classes+4, G, G]
};

ForwardState model_forward(const Model& m, const Tensor& img);

Tensor head_forward(const Model& m, const FeatureMap& f3);

// Ground truth mapped onto grid cells; one object per cell, first wins.
struct HeadTargets {
  std::vector<int> cells;                        // gy * G + gx
  std::vector<int> clazz;
  std::vector<std::array<double, 2>> cell_offset;  // O_v, grid units
  std::vector<std::array<double, 2>> center_abs;   // K*, grid units
  std::vector<std::array<double, 2>> log_size;     // ln(size * G / base)
};

HeadTargets assign_targets(const std::vector<LabelRecord>& labels, const ModelConfig& cfg);

struct HeadLoss {
  Tensor lx;  // masked coordinate terms: grid centers plus log-size pairs
  Tensor lc;  // confidence + classification binary cross entropy
};

HeadLoss head_loss(const Tensor& head_raw, const HeadTargets& t, const ModelConfig& cfg);

std::vector<Detection> decode_predictions(const Tensor& head_raw, const ModelConfig& cfg,
                                          double conf_threshold);

// Greedy per-class suppression; keeps the higher score, ties resolved by the
// lower original index; drops boxes with IoU strictly above the threshold.
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold);

std::vector<Detection> predict(const Model& m, const Image8& img);

Tensor image_to_tensor(const Image8& img);
GroundTruth label_to_truth(const LabelRecord& l, int image_size, int image_id);

// --- training -----------------------------------------------------------------

struct TrainLogEntry {
  int epoch = 0;
  double total = 0, lx = 0, lc = 0, ll1 = 0, g_loss = 0, d_loss = 0, lr = 0;
};

struct TrainResult {
  std::vector<TrainLogEntry> log;
};

// Mini-batch SGD with momentum and cosine learning-rate decay, alternating
// one discriminator and one generator step per batch. Deterministic under
// cfg.seed. epoch_limit < 0 runs all cfg.epochs; otherwise the identical
// schedule stops early (reproducibility probes).
TrainResult train(Model& m, const std::vector<AnnotatedImage>& train_set, int epoch_limit = -1);

EvalReport evaluate_model(const Model& m, const std::vector<AnnotatedImage>& val_set);

// --- FLOPs ----------------------------------------------------------------------

struct FlopReport {
  std::vector<std::pair<std::string, long long>> module_macs;
  std::map<std::string, long long> variant_flops;  // per ablation variant

  long long total_macs() const;
  long long total_flops() const { return 2 * total_macs(); }
};

// Counting rules: a convolution costs Cout*Cin*k^2*OH*OW multiply-
// accumulates, an affine in*out.
long long conv_macs(long long cout, long long cin, long long k, long long oh, long long ow);
long long affine_macs(long long in, long long out);

// Analytic multiply-accumulate counts per module for one forward pass;
// FLOPs = 2 * MACs. The acmix row charges the per-image augmentation
// arithmetic so every toggle moves the total.
FlopReport count_flops(const ModelConfig& cfg);

}  // namespace yolors
