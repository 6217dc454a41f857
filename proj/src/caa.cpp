#include "yolors/caa.hpp"

#include <cmath>

namespace yolors {

CaaWeights caa_init(const CaaConfig& cfg, RandomSource& rng) {
  CaaWeights w;
  w.w_q = Tensor::he_normal({cfg.d, cfg.d_a}, cfg.d, rng).set_requires_grad();
  w.w_k = Tensor::he_normal({cfg.d, cfg.d_a}, cfg.d, rng).set_requires_grad();
  w.w_v = Tensor::he_normal({cfg.d, cfg.d}, cfg.d, rng).set_requires_grad();
  w.context_gate = Tensor::full({cfg.d}, 1.0).set_requires_grad();
  return w;
}

Tensor extract_context(const Tensor& x, const Tensor& gate) {
  if (x.ndim() != 3)
    throw std::invalid_argument("extract_context: input must be [d,H,W], got " + shape_str(x.shape()));
  const int d = x.dim(0);
  const int n = x.dim(1) * x.dim(2);
  if (n == 0) throw std::invalid_argument("extract_context: empty spatial extent");
  if (gate.size() != d)
    throw std::invalid_argument("extract_context: gate length " + std::to_string(gate.size()) +
                                " does not match channels " + std::to_string(d));
  Tensor g = global_avg_pool(x);                    // [d]
  Tensor gain = sigmoid(mul(gate, g));              // [d]
  Tensor tokens = transpose2d(reshape(x, {d, n}));  // [N, d], row-major spatial order
  return mul(tokens, gain);                         // broadcast over rows
}

std::tuple<Tensor, Tensor, Tensor> project_qkv(const Tensor& a_v, const CaaWeights& w) {
  if (a_v.ndim() != 2 || a_v.dim(1) != w.w_q.dim(0))
    throw std::invalid_argument("project_qkv: token matrix " + shape_str(a_v.shape()) +
                                " does not match W_q " + shape_str(w.w_q.shape()));
  return {matmul(a_v, w.w_q), matmul(a_v, w.w_k), matmul(a_v, w.w_v)};
}

Tensor attention_weights(const Tensor& q, const Tensor& k) {
  if (q.ndim() != 2 || k.ndim() != 2 || q.dim(1) != k.dim(1))
    throw std::invalid_argument("attention_weights: Q " + shape_str(q.shape()) + " and K " +
                                shape_str(k.shape()) + " must share d_a");
  const int d_a = q.dim(1);
  Tensor scores = scale(matmul(q, transpose2d(k)), 1.0 / std::sqrt(static_cast<double>(d_a)));
  return softmax(scores, 1);
}

Tensor attend(const Tensor& f, const Tensor& v) {
  if (f.ndim() != 2 || f.dim(0) != f.dim(1))
    throw std::invalid_argument("attend: F must be square, got " + shape_str(f.shape()));
  if (v.ndim() != 2 || v.dim(0) != f.dim(1))
    throw std::invalid_argument("attend: F " + shape_str(f.shape()) + " does not match V " +
                                shape_str(v.shape()));
  for (int i = 0; i < f.dim(0); ++i) {
    double s = 0.0;
    for (int j = 0; j < f.dim(1); ++j) s += f.at({i, j});
    if (std::fabs(s - 1.0) > 1e-6)
      throw std::invalid_argument("attend: row " + std::to_string(i) + " of F sums to " +
                                  std::to_string(s) + ", expected 1");
  }
  return matmul(f, v);
}

Tensor caa_forward(const Tensor& x, const CaaWeights& w) {
  const int d = x.dim(0), h = x.dim(1), wd = x.dim(2);
  Tensor a_v = extract_context(x, w.context_gate);
  auto [q, k, v] = project_qkv(a_v, w);
  Tensor f = attention_weights(q, k);
  Tensor b_sa = attend(f, v);  // [N, d]
  return reshape(transpose2d(b_sa), {d, h, wd});
}

}  // namespace yolors
