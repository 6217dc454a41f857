#include "yolors/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "yolors/kernels.hpp"

namespace yolors {

int shape_size(const Shape& s) {
  int n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

namespace {

using detail::Node;

void check_shape(const Shape& s, const char* who) {
  if (s.empty()) throw std::invalid_argument(std::string(who) + ": empty shape");
  for (int d : s)
    if (d <= 0) throw std::invalid_argument(std::string(who) + ": non-positive dim in " + shape_str(s));
}

Tensor make_tensor(Shape s, std::vector<double> v) {
  check_shape(s, "tensor");
  if (static_cast<size_t>(shape_size(s)) != v.size())
    throw std::invalid_argument("tensor: shape " + shape_str(s) + " does not match value count " +
                                std::to_string(v.size()));
  auto n = std::make_shared<Node>();
  n->shape = std::move(s);
  n->values = std::move(v);
  return Tensor(n);
}

Tensor make_op(Shape shape, std::vector<double> values, const std::vector<Tensor>& parents,
               std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  if (static_cast<size_t>(shape_size(n->shape)) != n->values.size())
    throw std::logic_error("make_op: shape " + shape_str(n->shape) + " does not match " +
                           std::to_string(n->values.size()) + " values");
  bool rg = false;
  for (const auto& p : parents) rg = rg || p.requires_grad();
  if (rg) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (const auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(bw);
  }
  return Tensor(n);
}

// Trailing-dimension broadcasting plan: dims compared from the right, each
// pair equal or 1.
struct BcPlan {
  Shape out;
  size_t total = 0;
  bool same = false;
  std::vector<int> dims;
  std::vector<size_t> astr, bstr;  // per out dim; 0 where broadcast
};

BcPlan make_plan(const Shape& a, const Shape& b, const char* who) {
  BcPlan p;
  p.same = (a == b);
  const int nd = static_cast<int>(std::max(a.size(), b.size()));
  p.dims.resize(nd);
  p.astr.assign(nd, 0);
  p.bstr.assign(nd, 0);
  std::vector<size_t> anat(a.size()), bnat(b.size());
  size_t acc = 1;
  for (int i = static_cast<int>(a.size()) - 1; i >= 0; --i) {
    anat[i] = acc;
    acc *= static_cast<size_t>(a[i]);
  }
  acc = 1;
  for (int i = static_cast<int>(b.size()) - 1; i >= 0; --i) {
    bnat[i] = acc;
    acc *= static_cast<size_t>(b[i]);
  }
  for (int d = 0; d < nd; ++d) {
    const int ia = d - (nd - static_cast<int>(a.size()));
    const int ib = d - (nd - static_cast<int>(b.size()));
    const int ad = ia >= 0 ? a[ia] : 1;
    const int bd = ib >= 0 ? b[ib] : 1;
    if (ad != bd && ad != 1 && bd != 1)
      throw std::invalid_argument(std::string(who) + ": shapes " + shape_str(a) + " and " +
                                  shape_str(b) + " are not broadcast-compatible");
    p.dims[d] = std::max(ad, bd);
    if (ia >= 0 && ad != 1) p.astr[d] = anat[ia];
    if (ib >= 0 && bd != 1) p.bstr[d] = bnat[ib];
  }
  p.out.assign(p.dims.begin(), p.dims.end());
  p.total = 1;
  for (int d : p.dims) p.total *= static_cast<size_t>(d);
  return p;
}

template <class F>
void bc_for_each(const BcPlan& p, F&& f) {
  const int nd = static_cast<int>(p.dims.size());
  std::vector<int> idx(nd, 0);
  size_t ai = 0, bi = 0;
  for (size_t oi = 0; oi < p.total; ++oi) {
    f(oi, ai, bi);
    for (int d = nd - 1; d >= 0; --d) {
      ++idx[d];
      ai += p.astr[d];
      bi += p.bstr[d];
      if (idx[d] < p.dims[d]) break;
      idx[d] = 0;
      ai -= p.astr[d] * static_cast<size_t>(p.dims[d]);
      bi -= p.bstr[d] * static_cast<size_t>(p.dims[d]);
    }
  }
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// --- Tensor basics ----------------------------------------------------------

Tensor Tensor::zeros(const Shape& s) { return make_tensor(s, std::vector<double>(shape_size(s), 0.0)); }

Tensor Tensor::full(const Shape& s, double v) {
  return make_tensor(s, std::vector<double>(shape_size(s), v));
}

Tensor Tensor::from(const Shape& s, std::vector<double> v) { return make_tensor(s, std::move(v)); }

Tensor Tensor::scalar(double v) { return make_tensor({1}, {v}); }

Tensor Tensor::randn(const Shape& s, RandomSource& rng, double stddev) {
  std::vector<double> v(static_cast<size_t>(shape_size(s)));
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return make_tensor(s, std::move(v));
}

Tensor Tensor::he_normal(const Shape& s, int fan_in, RandomSource& rng) {
  if (fan_in <= 0) throw std::invalid_argument("he_normal: fan_in must be positive");
  return randn(s, rng, std::sqrt(2.0 / static_cast<double>(fan_in)));
}

Tensor Tensor::uniform(const Shape& s, RandomSource& rng, double lo, double hi) {
  std::vector<double> v(static_cast<size_t>(shape_size(s)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return make_tensor(s, std::move(v));
}

double Tensor::value() const {
  if (size() != 1) throw std::invalid_argument("value(): tensor is not scalar, shape " + shape_str(shape()));
  return node_->values[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
  const Shape& s = shape();
  if (idx.size() != s.size()) throw std::invalid_argument("at(): rank mismatch");
  size_t off = 0;
  size_t d = 0;
  for (int i : idx) {
    if (i < 0 || i >= s[d]) throw std::out_of_range("at(): index out of range");
    off = off * static_cast<size_t>(s[d]) + static_cast<size_t>(i);
    ++d;
  }
  return node_->values[off];
}

void Tensor::set(std::initializer_list<int> idx, double v) {
  const Shape& s = shape();
  if (idx.size() != s.size()) throw std::invalid_argument("set(): rank mismatch");
  size_t off = 0;
  size_t d = 0;
  for (int i : idx) {
    off = off * static_cast<size_t>(s[d]) + static_cast<size_t>(i);
    ++d;
  }
  node_->values[off] = v;
}

Tensor& Tensor::set_requires_grad(bool b) {
  node_->requires_grad = b;
  return *this;
}

const std::vector<double>& Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

std::vector<double>& Tensor::grad_mutable() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.assign(node_->values.size(), 0.0); }

Tensor Tensor::detach() const { return make_tensor(node_->shape, node_->values); }

// --- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  auto plan = std::make_shared<BcPlan>(make_plan(a.shape(), b.shape(), "add"));
  std::vector<double> out(plan->total);
  const auto& av = a.values();
  const auto& bv = b.values();
  if (plan->same)
    kern::ops().add(av.data(), bv.data(), out.data(), plan->total);
  else
    bc_for_each(*plan, [&](size_t oi, size_t ai, size_t bi) { out[oi] = av[ai] + bv[bi]; });
  return make_op(plan->out, std::move(out), {a, b}, [plan](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      if (plan->same)
        kern::ops().axpy(1.0, self.grad.data(), pa.grad.data(), self.grad.size());
      else
        bc_for_each(*plan, [&](size_t oi, size_t ai, size_t) { pa.grad[ai] += self.grad[oi]; });
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      if (plan->same)
        kern::ops().axpy(1.0, self.grad.data(), pb.grad.data(), self.grad.size());
      else
        bc_for_each(*plan, [&](size_t oi, size_t, size_t bi) { pb.grad[bi] += self.grad[oi]; });
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  auto plan = std::make_shared<BcPlan>(make_plan(a.shape(), b.shape(), "sub"));
  std::vector<double> out(plan->total);
  const auto& av = a.values();
  const auto& bv = b.values();
  if (plan->same)
    kern::ops().sub(av.data(), bv.data(), out.data(), plan->total);
  else
    bc_for_each(*plan, [&](size_t oi, size_t ai, size_t bi) { out[oi] = av[ai] - bv[bi]; });
  return make_op(plan->out, std::move(out), {a, b}, [plan](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      if (plan->same)
        kern::ops().axpy(1.0, self.grad.data(), pa.grad.data(), self.grad.size());
      else
        bc_for_each(*plan, [&](size_t oi, size_t ai, size_t) { pa.grad[ai] += self.grad[oi]; });
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      if (plan->same)
        kern::ops().axpy(-1.0, self.grad.data(), pb.grad.data(), self.grad.size());
      else
        bc_for_each(*plan, [&](size_t oi, size_t, size_t bi) { pb.grad[bi] -= self.grad[oi]; });
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  auto plan = std::make_shared<BcPlan>(make_plan(a.shape(), b.shape(), "mul"));
  std::vector<double> out(plan->total);
  const auto& av = a.values();
  const auto& bv = b.values();
  if (plan->same)
    kern::ops().mul(av.data(), bv.data(), out.data(), plan->total);
  else
    bc_for_each(*plan, [&](size_t oi, size_t ai, size_t bi) { out[oi] = av[ai] * bv[bi]; });
  return make_op(plan->out, std::move(out), {a, b}, [plan](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      if (plan->same)
        kern::ops().mul_acc(self.grad.data(), pb.values.data(), pa.grad.data(), self.grad.size());
      else
        bc_for_each(*plan,
                    [&](size_t oi, size_t ai, size_t bi) { pa.grad[ai] += self.grad[oi] * pb.values[bi]; });
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      if (plan->same)
        kern::ops().mul_acc(self.grad.data(), pa.values.data(), pb.grad.data(), self.grad.size());
      else
        bc_for_each(*plan,
                    [&](size_t oi, size_t ai, size_t bi) { pb.grad[bi] += self.grad[oi] * pa.values[ai]; });
    }
  });
}

Tensor divide(const Tensor& a, const Tensor& b) {
  auto plan = std::make_shared<BcPlan>(make_plan(a.shape(), b.shape(), "divide"));
  std::vector<double> out(plan->total);
  const auto& av = a.values();
  const auto& bv = b.values();
  bc_for_each(*plan, [&](size_t oi, size_t ai, size_t bi) { out[oi] = av[ai] / bv[bi]; });
  return make_op(plan->out, std::move(out), {a, b}, [plan](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      bc_for_each(*plan,
                  [&](size_t oi, size_t ai, size_t bi) { pa.grad[ai] += self.grad[oi] / pb.values[bi]; });
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      bc_for_each(*plan, [&](size_t oi, size_t, size_t bi) {
        pb.grad[bi] -= self.grad[oi] * self.values[oi] / pb.values[bi];
      });
    }
  });
}

namespace {

template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& a, Fwd&& fwd, Bwd&& bwd) {
  std::vector<double> out(static_cast<size_t>(a.size()));
  fwd(a.values(), out);
  return make_op(a.shape(), std::move(out), {a}, [bwd](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    bwd(self, p);
  });
}

}  // namespace

Tensor relu(const Tensor& a) {
  return unary_op(
      a, [](const std::vector<double>& v, std::vector<double>& out) {
        kern::ops().relu(v.data(), out.data(), v.size());
      },
      [](Node& self, Node& p) {
        kern::ops().relu_bwd(p.values.data(), self.grad.data(), p.grad.data(), self.grad.size());
      });
}

Tensor abs(const Tensor& a) {
  return unary_op(
      a, [](const std::vector<double>& v, std::vector<double>& out) {
        kern::ops().abs(v.data(), out.data(), v.size());
      },
      [](Node& self, Node& p) {
        kern::ops().sign_mul_acc(p.values.data(), self.grad.data(), p.grad.data(), self.grad.size());
      });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  return unary_op(
      a, [slope](const std::vector<double>& v, std::vector<double>& out) {
        for (size_t i = 0; i < v.size(); ++i) out[i] = v[i] > 0.0 ? v[i] : slope * v[i];
      },
      [slope](Node& self, Node& p) {
        for (size_t i = 0; i < self.grad.size(); ++i)
          p.grad[i] += self.grad[i] * (p.values[i] > 0.0 ? 1.0 : slope);
      });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a, [](const std::vector<double>& v, std::vector<double>& out) {
        for (size_t i = 0; i < v.size(); ++i) out[i] = stable_sigmoid(v[i]);
      },
      [](Node& self, Node& p) {
        for (size_t i = 0; i < self.grad.size(); ++i) {
          const double s = self.values[i];
          p.grad[i] += self.grad[i] * s * (1.0 - s);
        }
      });
}

Tensor scale(const Tensor& a, double s) {
  return unary_op(
      a, [s](const std::vector<double>& v, std::vector<double>& out) {
        kern::ops().scale(v.data(), s, out.data(), v.size());
      },
      [s](Node& self, Node& p) {
        kern::ops().axpy(s, self.grad.data(), p.grad.data(), self.grad.size());
      });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary_op(
      a, [s](const std::vector<double>& v, std::vector<double>& out) {
        for (size_t i = 0; i < v.size(); ++i) out[i] = v[i] + s;
      },
      [](Node& self, Node& p) {
        kern::ops().axpy(1.0, self.grad.data(), p.grad.data(), self.grad.size());
      });
}

Tensor exp(const Tensor& a) {
  return unary_op(
      a, [](const std::vector<double>& v, std::vector<double>& out) {
        for (size_t i = 0; i < v.size(); ++i) out[i] = std::exp(v[i]);
      },
      [](Node& self, Node& p) {
        kern::ops().mul_acc(self.grad.data(), self.values.data(), p.grad.data(), self.grad.size());
      });
}

Tensor log(const Tensor& a) {
  return unary_op(
      a, [](const std::vector<double>& v, std::vector<double>& out) {
        for (size_t i = 0; i < v.size(); ++i) out[i] = std::log(v[i]);
      },
      [](Node& self, Node& p) {
        for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] / p.values[i];
      });
}

Tensor sqrt_safe(const Tensor& a) {
  return unary_op(
      a, [](const std::vector<double>& v, std::vector<double>& out) {
        for (size_t i = 0; i < v.size(); ++i) out[i] = std::sqrt(v[i]);
      },
      [](Node& self, Node& p) {
        for (size_t i = 0; i < self.grad.size(); ++i)
          if (p.values[i] > 0.0) p.grad[i] += self.grad[i] * 0.5 / self.values[i];
      });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
  return unary_op(
      a, [lo, hi](const std::vector<double>& v, std::vector<double>& out) {
        for (size_t i = 0; i < v.size(); ++i) out[i] = std::min(hi, std::max(lo, v[i]));
      },
      [lo, hi](Node& self, Node& p) {
        for (size_t i = 0; i < self.grad.size(); ++i)
          if (p.values[i] > lo && p.values[i] < hi) p.grad[i] += self.grad[i];
      });
}

Tensor elementwise(EwKind kind, const Tensor& a, const Tensor* b, double factor) {
  switch (kind) {
    case EwKind::add:
      if (!b) throw std::invalid_argument("elementwise add: second operand required");
      return add(a, *b);
    case EwKind::mul:
      if (!b) throw std::invalid_argument("elementwise mul: second operand required");
      return mul(a, *b);
    case EwKind::relu:
      return relu(a);
    case EwKind::sigmoid:
      return sigmoid(a);
    case EwKind::abs:
      return abs(a);
    case EwKind::scale:
      return scale(a, factor);
  }
  throw std::invalid_argument("elementwise: unknown kind");
}

// --- linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2)
    throw std::invalid_argument("matmul: expects 2-D operands, got " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw std::invalid_argument("matmul: inner dimensions differ, " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  kern::ops().mm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
  return make_op({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      kern::ops().mm_nt(self.grad.data(), pb.values.data(), pa.grad.data(), m, n, k);
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      kern::ops().mm_tn(pa.values.data(), self.grad.data(), pb.grad.data(), k, m, n);
    }
  });
}

Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride, int padding) {
  if (input.ndim() != 3)
    throw std::invalid_argument("conv2d: input must be [C,H,W], got " + shape_str(input.shape()));
  if (kernels.ndim() != 4)
    throw std::invalid_argument("conv2d: kernels must be [Cout,Cin,k,k], got " +
                                shape_str(kernels.shape()));
  kern::Conv2dDims d;
  d.cin = input.dim(0);
  d.h = input.dim(1);
  d.w = input.dim(2);
  d.cout = kernels.dim(0);
  d.k = kernels.dim(2);
  d.stride = stride;
  d.pad = padding;
  if (kernels.dim(1) != d.cin)
    throw std::invalid_argument("conv2d: channel mismatch, input " + shape_str(input.shape()) +
                                " vs kernels " + shape_str(kernels.shape()));
  if (kernels.dim(3) != d.k) throw std::invalid_argument("conv2d: kernels must be square");
  if (d.k % 2 == 0) throw std::invalid_argument("conv2d: kernel size must be odd");
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (padding < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
  const int num_h = d.h + 2 * padding - d.k;
  const int num_w = d.w + 2 * padding - d.k;
  if (num_h < 0 || num_w < 0 || num_h % stride != 0 || num_w % stride != 0)
    throw std::invalid_argument("conv2d: non-integral output size for input " +
                                shape_str(input.shape()) + ", k=" + std::to_string(d.k) +
                                ", stride=" + std::to_string(stride) + ", pad=" + std::to_string(padding));
  d.oh = num_h / stride + 1;
  d.ow = num_w / stride + 1;

  std::vector<double> out(static_cast<size_t>(d.cout) * d.oh * d.ow, 0.0);
  kern::ops().conv2d_fwd(input.values().data(), kernels.values().data(), out.data(), d);
  return make_op({d.cout, d.oh, d.ow}, std::move(out), {input, kernels}, [d](Node& self) {
    Node& pin = *self.parents[0];
    Node& pk = *self.parents[1];
    if (pin.requires_grad) {
      pin.ensure_grad();
      kern::ops().conv2d_bwd_input(self.grad.data(), pk.values.data(), pin.grad.data(), d);
    }
    if (pk.requires_grad) {
      pk.ensure_grad();
      kern::ops().conv2d_bwd_kern(self.grad.data(), pin.values.data(), pk.grad.data(), d);
    }
  });
}

Tensor softmax(const Tensor& x, int axis) {
  const Shape& s = x.shape();
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw std::invalid_argument("softmax: invalid axis " + std::to_string(axis) + " for shape " +
                                shape_str(s));
  const size_t len = static_cast<size_t>(s[axis]);
  size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<size_t>(s[i]);
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= static_cast<size_t>(s[i]);

  const auto& v = x.values();
  std::vector<double> out(v.size());
  for (size_t o = 0; o < outer; ++o)
    for (size_t in = 0; in < inner; ++in) {
      const size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (size_t j = 0; j < len; ++j) mx = std::max(mx, v[base + j * inner]);
      double total = 0.0;
      for (size_t j = 0; j < len; ++j) {
        const double e = std::exp(v[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      const double inv = 1.0 / total;
      for (size_t j = 0; j < len; ++j) out[base + j * inner] *= inv;
      if (InvariantMonitor::enabled) {
        double ss = 0.0;
        for (size_t j = 0; j < len; ++j) ss += out[base + j * inner];
        InvariantMonitor::record_softmax(std::fabs(ss - 1.0));
      }
    }

  return make_op(s, std::move(out), {x}, [len, outer, inner](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t o = 0; o < outer; ++o)
      for (size_t in = 0; in < inner; ++in) {
        const size_t base = o * len * inner + in;
        double dot = 0.0;
        for (size_t j = 0; j < len; ++j) dot += self.grad[base + j * inner] * self.values[base + j * inner];
        for (size_t j = 0; j < len; ++j) {
          const size_t q = base + j * inner;
          p.grad[q] += self.values[q] * (self.grad[q] - dot);
        }
      }
  });
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.ndim() != 3)
    throw std::invalid_argument("global_avg_pool: input must be [C,H,W], got " + shape_str(x.shape()));
  const int c = x.dim(0);
  const size_t hw = static_cast<size_t>(x.dim(1)) * static_cast<size_t>(x.dim(2));
  if (hw == 0) throw std::invalid_argument("global_avg_pool: empty spatial extent");
  std::vector<double> out(static_cast<size_t>(c));
  const double inv = 1.0 / static_cast<double>(hw);
  for (int ch = 0; ch < c; ++ch)
    out[static_cast<size_t>(ch)] = kern::ops().sum(x.values().data() + static_cast<size_t>(ch) * hw, hw) * inv;
  return make_op({c}, std::move(out), {x}, [c, hw, inv](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (int ch = 0; ch < c; ++ch) {
      const double g = self.grad[static_cast<size_t>(ch)] * inv;
      double* dst = p.grad.data() + static_cast<size_t>(ch) * hw;
      for (size_t i = 0; i < hw; ++i) dst[i] += g;
    }
  });
}

// --- reductions & shape ops -------------------------------------------------

Tensor sum(const Tensor& a) {
  const double s = kern::ops().sum(a.values().data(), a.values().size());
  return make_op({1}, {s}, {a}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const double g = self.grad[0];
    for (auto& d : p.grad) d += g;
  });
}

Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.size());
  const double s = kern::ops().sum(a.values().data(), a.values().size()) * inv;
  return make_op({1}, {s}, {a}, [inv](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const double g = self.grad[0] * inv;
    for (auto& d : p.grad) d += g;
  });
}

Tensor reshape(const Tensor& a, const Shape& s) {
  check_shape(s, "reshape");
  if (shape_size(s) != a.size())
    throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(s));
  return make_op(s, a.values(), {a}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    kern::ops().axpy(1.0, self.grad.data(), p.grad.data(), self.grad.size());
  });
}

Tensor transpose2d(const Tensor& a) {
  if (a.ndim() != 2) throw std::invalid_argument("transpose2d: expects 2-D, got " + shape_str(a.shape()));
  const int m = a.dim(0), n = a.dim(1);
  std::vector<double> out(static_cast<size_t>(m) * n);
  const auto& v = a.values();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(j) * m + i] = v[static_cast<size_t>(i) * n + j];
  return make_op({n, m}, std::move(out), {a}, [m, n](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        p.grad[static_cast<size_t>(i) * n + j] += self.grad[static_cast<size_t>(j) * m + i];
  });
}

Tensor gather_flat(const Tensor& a, std::vector<int> idx, Shape out_shape) {
  if (out_shape.empty()) out_shape = {static_cast<int>(idx.size())};
  if (shape_size(out_shape) != static_cast<int>(idx.size()))
    throw std::invalid_argument("gather_flat: out shape does not match index count");
  std::vector<double> out(idx.size());
  const auto& v = a.values();
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.size()) throw std::out_of_range("gather_flat: index out of range");
    out[i] = v[static_cast<size_t>(idx[i])];
  }
  auto indices = std::make_shared<std::vector<int>>(std::move(idx));
  return make_op(out_shape, std::move(out), {a}, [indices](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t i = 0; i < indices->size(); ++i)
      p.grad[static_cast<size_t>((*indices)[i])] += self.grad[i];
  });
}

Tensor concat1d(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat1d: no parts");
  std::vector<double> out;
  std::vector<int> sizes;
  for (const auto& p : parts) {
    out.insert(out.end(), p.values().begin(), p.values().end());
    sizes.push_back(p.size());
  }
  auto sz = std::make_shared<std::vector<int>>(std::move(sizes));
  const int total = static_cast<int>(out.size());
  return make_op({total}, std::move(out), parts, [sz](Node& self) {
    size_t off = 0;
    for (size_t k = 0; k < self.parents.size(); ++k) {
      Node& p = *self.parents[k];
      const size_t n = static_cast<size_t>((*sz)[k]);
      if (p.requires_grad) {
        p.ensure_grad();
        for (size_t i = 0; i < n; ++i) p.grad[i] += self.grad[off + i];
      }
      off += n;
    }
  });
}

Tensor max_pool2x2(const Tensor& a) {
  if (a.ndim() != 3) throw std::invalid_argument("max_pool2x2: input must be [C,H,W]");
  const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
  const int oh = (h + 1) / 2, ow = (w + 1) / 2;
  std::vector<double> out(static_cast<size_t>(c) * oh * ow);
  auto arg = std::make_shared<std::vector<int>>(out.size());
  const auto& v = a.values();
  size_t o = 0;
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x, ++o) {
        double best = -std::numeric_limits<double>::infinity();
        int bi = -1;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int iy = 2 * y + dy, ix = 2 * x + dx;
            if (iy >= h || ix >= w) continue;
            const int q = (ch * h + iy) * w + ix;
            if (v[static_cast<size_t>(q)] > best) {
              best = v[static_cast<size_t>(q)];
              bi = q;
            }
          }
        out[o] = best;
        (*arg)[o] = bi;
      }
  return make_op({c, oh, ow}, std::move(out), {a}, [arg](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t i = 0; i < arg->size(); ++i) p.grad[static_cast<size_t>((*arg)[i])] += self.grad[i];
  });
}

Tensor upsample_nearest(const Tensor& a, int out_h, int out_w) {
  if (a.ndim() != 3) throw std::invalid_argument("upsample_nearest: input must be [C,H,W]");
  if (out_h < a.dim(1) || out_w < a.dim(2))
    throw std::invalid_argument("upsample_nearest: target smaller than input");
  const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
  std::vector<double> out(static_cast<size_t>(c) * out_h * out_w);
  auto src = std::make_shared<std::vector<int>>(out.size());
  const auto& v = a.values();
  size_t o = 0;
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < out_h; ++y) {
      const int iy = std::min(h - 1, y * h / out_h);
      for (int x = 0; x < out_w; ++x, ++o) {
        const int ix = std::min(w - 1, x * w / out_w);
        const int q = (ch * h + iy) * w + ix;
        out[o] = v[static_cast<size_t>(q)];
        (*src)[o] = q;
      }
    }
  return make_op({c, out_h, out_w}, std::move(out), {a}, [src](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t i = 0; i < src->size(); ++i) p.grad[static_cast<size_t>((*src)[i])] += self.grad[i];
  });
}

// --- backward sweep ---------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw std::invalid_argument("backward: loss must be a connected scalar");
  auto root = loss.node();
  if (!root->requires_grad) {
    root->ensure_grad();
    root->grad[0] += 1.0;
    return;
  }

  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->parents.size()) {
      Node* p = top.first->parents[top.second].get();
      ++top.second;
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(top.first);
      stack.pop_back();
    }
  }
  // Interior grads are per-sweep scratch; leaf grads accumulate across calls.
  for (Node* n : order)
    if (n->backward_fn) n->grad.assign(n->values.size(), 0.0);
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) {
      n->ensure_grad();
      n->backward_fn(*n);
    }
  }
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("grad_check: epsilon must be positive");
  Tensor xg = x.detach();
  xg.set_requires_grad(true);
  Tensor y = f(xg);
  if (y.size() != 1) throw std::invalid_argument("grad_check: f must be scalar-valued");
  if (!std::isfinite(y.value())) throw std::runtime_error("grad_check: non-finite f(x)");
  backward(y);
  const std::vector<double> analytic = xg.grad();

  double worst = 0.0;
  for (int i = 0; i < x.size(); ++i) {
    Tensor xp = x.detach();
    xp.values()[static_cast<size_t>(i)] += eps;
    Tensor xm = x.detach();
    xm.values()[static_cast<size_t>(i)] -= eps;
    const double fp = f(xp).value();
    const double fm = f(xm).value();
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("grad_check: non-finite f near x");
    const double numeric = (fp - fm) / (2.0 * eps);
    const double a = analytic[static_cast<size_t>(i)];
    const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
    worst = std::max(worst, std::fabs(a - numeric) / denom);
  }
  return worst;
}

// --- invariant monitor ------------------------------------------------------

bool InvariantMonitor::enabled = false;
long InvariantMonitor::softmax_checks = 0;
long InvariantMonitor::fusion_checks = 0;
long InvariantMonitor::violations = 0;
double InvariantMonitor::softmax_worst = 0.0;
double InvariantMonitor::fusion_worst = 0.0;

void InvariantMonitor::reset() {
  softmax_checks = fusion_checks = violations = 0;
  softmax_worst = fusion_worst = 0.0;
}

void InvariantMonitor::record_softmax(double dev) {
  ++softmax_checks;
  softmax_worst = std::max(softmax_worst, dev);
  if (dev > 1e-6) ++violations;
}

void InvariantMonitor::record_fusion(double dev) {
  ++fusion_checks;
  fusion_worst = std::max(fusion_worst, dev);
  if (dev > 1e-6) ++violations;
}

}  // namespace yolors
