#pragma once

#include <tuple>

#include "yolors/random.hpp"
#include "yolors/tensor.hpp"

namespace yolors {

// Contextual anchor attention: global-average-pooled context gates the
// spatial tokens, which then go through single-head scaled dot-product
// attention. Output shape equals input shape.
struct CaaConfig {
  int d;    // channel dimension of the input feature map
  int d_a;  // query/key projection dimension; default ceil(d / 2)

  explicit CaaConfig(int channels, int proj = 0)
      : d(channels), d_a(proj > 0 ? proj : (channels + 1) / 2) {
    if (d < 1 || d_a < 1) throw std::invalid_argument("CaaConfig: d and d_a must be >= 1");
  }
};

struct CaaWeights {
  Tensor w_q;           // [d, d_a]
  Tensor w_k;           // [d, d_a]
  Tensor w_v;           // [d, d]
  Tensor context_gate;  // [d], per-channel gain on the pooled context
};

CaaWeights caa_init(const CaaConfig& cfg, RandomSource& rng);

// Tokens gated by pooled context: A_v[i,c] = x[c,i] * sigmoid(gate[c] * g[c])
// with g = global_avg_pool(x). Returns the N x d token matrix, N = H*W.
Tensor extract_context(const Tensor& x, const Tensor& gate);

// (Q, K, V) = A_v * (W_q, W_k, W_v)
std::tuple<Tensor, Tensor, Tensor> project_qkv(const Tensor& a_v, const CaaWeights& w);

// F = row-softmax(Q K^T / sqrt(d_a)), an N x N row-stochastic matrix.
Tensor attention_weights(const Tensor& q, const Tensor& k);

// B_sa = F V; rows are convex combinations of rows of V.
Tensor attend(const Tensor& f, const Tensor& v);

// Full pipeline, reshaped back to [d, H, W].
Tensor caa_forward(const Tensor& x, const CaaWeights& w);

}  // namespace yolors
