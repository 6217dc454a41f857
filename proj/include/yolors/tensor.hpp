#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "yolors/random.hpp"

namespace yolors {

using Shape = std::vector<int>;

int shape_size(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // sized lazily, same length as values
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // reads this->grad, accumulates into parents

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

}  // namespace detail

// Dense double tensor with an optional dynamic tape for reverse-mode
// autodiff. Handles share the underlying node; ops record parents and a
// backward closure only when some input requires gradients.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

  static Tensor zeros(const Shape& s);
  static Tensor full(const Shape& s, double v);
  static Tensor from(const Shape& s, std::vector<double> v);
  static Tensor scalar(double v);
  static Tensor randn(const Shape& s, RandomSource& rng, double stddev = 1.0);
  // Fan-in scaled init: std = sqrt(2 / fan_in).
  static Tensor he_normal(const Shape& s, int fan_in, RandomSource& rng);
  static Tensor uniform(const Shape& s, RandomSource& rng, double lo, double hi);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int size() const { return static_cast<int>(node_->values.size()); }
  int dim(int i) const { return node_->shape.at(static_cast<size_t>(i)); }
  int ndim() const { return static_cast<int>(node_->shape.size()); }

  std::vector<double>& values() { return node_->values; }
  const std::vector<double>& values() const { return node_->values; }
  double value() const;  // scalar tensors only
  double at(std::initializer_list<int> idx) const;
  void set(std::initializer_list<int> idx, double v);

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool b = true);
  const std::vector<double>& grad() const;
  std::vector<double>& grad_mutable();
  void zero_grad();

  Tensor detach() const;  // value copy, no graph, no grad requirement

  std::shared_ptr<detail::Node> node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// --- core operations -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride = 1, int padding = 0);
Tensor softmax(const Tensor& x, int axis);
Tensor global_avg_pool(const Tensor& x);  // [C,H,W] -> [C]

enum class EwKind { add, mul, relu, sigmoid, abs, scale };
// Binary kinds (add, mul) take b; scale takes the scalar factor.
Tensor elementwise(EwKind kind, const Tensor& a, const Tensor* b = nullptr, double factor = 0.0);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope = 0.1);
Tensor sigmoid(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
// sqrt with subgradient 0 at x == 0, so exact-zero losses stay exact.
Tensor sqrt_safe(const Tensor& a);
// Hard clamp; gradient passes through strictly inside the interval.
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor sum(const Tensor& a);   // -> scalar
Tensor mean(const Tensor& a);  // -> scalar
Tensor reshape(const Tensor& a, const Shape& s);
Tensor transpose2d(const Tensor& a);
Tensor gather_flat(const Tensor& a, std::vector<int> idx, Shape out_shape = {});
Tensor concat1d(const std::vector<Tensor>& parts);
Tensor max_pool2x2(const Tensor& a);  // [C,H,W] -> [C,ceil(H/2),ceil(W/2)]
Tensor upsample_nearest(const Tensor& a, int out_h, int out_w);

// Reverse-mode sweep from a scalar loss. Repeated calls accumulate.
void backward(const Tensor& loss);

// Max over coordinates of |analytic - central difference| /
// max(|analytic|, |numeric|, 1e-8) for a scalar-valued f.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double eps = 1e-5);

// --- invariant instrumentation ---------------------------------------------

// When enabled, softmax verifies slice sums on every forward pass and the
// fusion code reports normalized-weight sums here.
struct InvariantMonitor {
  static bool enabled;
  static long softmax_checks;
  static long fusion_checks;
  static long violations;
  static double softmax_worst;  // worst |sum - 1|
  static double fusion_worst;
  static void reset();
  static void record_softmax(double dev);
  static void record_fusion(double dev);
};

}  // namespace yolors
