#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "yolors/caa.hpp"
#include "yolors/random.hpp"
#include "yolors/tensor.hpp"

using namespace yolors;

namespace {

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, int m,
                                 int k, int n) {
  std::vector<double> c(static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

// Brute-force row softmax of Q K^T / sqrt(d_a), no max subtraction tricks.
std::vector<double> naive_attention(const std::vector<double>& q, const std::vector<double>& k,
                                    int n, int d_a) {
  std::vector<double> f(static_cast<size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    double denom = 0.0;
    std::vector<double> e(n);
    for (int j = 0; j < n; ++j) {
      double dot = 0.0;
      for (int p = 0; p < d_a; ++p) dot += q[i * d_a + p] * k[j * d_a + p];
      e[j] = std::exp(dot / std::sqrt(static_cast<double>(d_a)));
      denom += e[j];
    }
    for (int j = 0; j < n; ++j) f[i * n + j] = e[j] / denom;
  }
  return f;
}

// Direct per-element recomputation of the context gating.
std::vector<double> naive_extract(const std::vector<double>& x, const std::vector<double>& gate,
                                  int d, int n) {
  std::vector<double> g(d, 0.0);
  for (int c = 0; c < d; ++c) {
    for (int i = 0; i < n; ++i) g[c] += x[c * n + i];
    g[c] /= n;
  }
  std::vector<double> av(static_cast<size_t>(n) * d);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c) av[i * d + c] = x[c * n + i] * sigm(gate[c] * g[c]);
  return av;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::fabs(a[i] - b[i]));
  return worst;
}

CaaWeights identity_weights(int d) {
  CaaWeights w;
  std::vector<double> eye(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) eye[i * d + i] = 1.0;
  w.w_q = Tensor::from({d, d}, eye);
  w.w_k = Tensor::from({d, d}, eye);
  w.w_v = Tensor::from({d, d}, eye);
  w.context_gate = Tensor::zeros({d});
  return w;
}

}  // namespace

TEST_CASE("extract_context") {
  SUBCASE("neutral gate halves the tokens") {
    RandomSource rng(1);
    Tensor x = Tensor::uniform({3, 2, 2}, rng, -1, 1);
    Tensor a_v = extract_context(x, Tensor::zeros({3}));
    CHECK(a_v.shape() == Shape{4, 3});
    for (int i = 0; i < 4; ++i)
      for (int c = 0; c < 3; ++c)
        CHECK(a_v.at({i, c}) == doctest::Approx(0.5 * x.at({c, i / 2, i % 2})).epsilon(1e-15));
  }
  SUBCASE("zero input gives zero tokens") {
    Tensor a_v = extract_context(Tensor::zeros({2, 3, 3}), Tensor::full({2}, 1.7));
    for (double v : a_v.values()) CHECK(v == 0.0);
  }
  SUBCASE("random input matches the direct formula oracle within 1e-12") {
    RandomSource rng(2);
    for (int iter = 0; iter < 20; ++iter) {
      Tensor x = Tensor::uniform({2, 2, 2}, rng, -1, 1);
      Tensor gate = Tensor::uniform({2}, rng, -2, 2);
      CHECK(max_abs_diff(extract_context(x, gate).values(),
                         naive_extract(x.values(), gate.values(), 2, 4)) < 1e-12);
    }
  }
  SUBCASE("gate length mismatch rejected") {
    CHECK_THROWS_AS(extract_context(Tensor::zeros({2, 2, 2}), Tensor::zeros({3})),
                    std::invalid_argument);
  }
}

TEST_CASE("project_qkv") {
  SUBCASE("identity weights reproduce the tokens") {
    RandomSource rng(3);
    Tensor a_v = Tensor::uniform({5, 4}, rng, -1, 1);
    auto [q, k, v] = project_qkv(a_v, identity_weights(4));
    CHECK(q.values() == a_v.values());
    CHECK(k.values() == a_v.values());
    CHECK(v.values() == a_v.values());
  }
  SUBCASE("zero tokens give zero projections") {
    RandomSource rng(4);
    CaaConfig cfg(4, 2);
    CaaWeights w = caa_init(cfg, rng);
    auto [q, k, v] = project_qkv(Tensor::zeros({6, 4}), w);
    for (double x : q.values()) CHECK(x == 0.0);
    for (double x : k.values()) CHECK(x == 0.0);
    for (double x : v.values()) CHECK(x == 0.0);
  }
  SUBCASE("random instance matches the triple-loop oracle") {
    RandomSource rng(5);
    CaaConfig cfg(4, 2);
    CaaWeights w = caa_init(cfg, rng);
    Tensor a_v = Tensor::uniform({5, 4}, rng, -1, 1);
    auto [q, k, v] = project_qkv(a_v, w);
    CHECK(max_abs_diff(q.values(), naive_matmul(a_v.values(), w.w_q.values(), 5, 4, 2)) < 1e-12);
    CHECK(max_abs_diff(k.values(), naive_matmul(a_v.values(), w.w_k.values(), 5, 4, 2)) < 1e-12);
    CHECK(max_abs_diff(v.values(), naive_matmul(a_v.values(), w.w_v.values(), 5, 4, 4)) < 1e-12);
  }
  SUBCASE("dimension mismatch rejected") {
    RandomSource rng(6);
    CaaWeights w = caa_init(CaaConfig(4), rng);
    CHECK_THROWS_AS(project_qkv(Tensor::zeros({5, 3}), w), std::invalid_argument);
  }
}

TEST_CASE("attention_weights") {
  SUBCASE("single token") {
    Tensor q = Tensor::from({1, 2}, {0.3, -0.7});
    Tensor k = Tensor::from({1, 2}, {1.1, 0.2});
    Tensor f = attention_weights(q, k);
    CHECK(f.shape() == Shape{1, 1});
    CHECK(f.value() == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("identical keys give uniform rows") {
    RandomSource rng(7);
    Tensor q = Tensor::uniform({4, 3}, rng, -1, 1);
    std::vector<double> krow = {0.4, -0.2, 0.9};
    std::vector<double> kv;
    for (int i = 0; i < 4; ++i) kv.insert(kv.end(), krow.begin(), krow.end());
    Tensor f = attention_weights(q, Tensor::from({4, 3}, kv));
    for (double v : f.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
  }
  SUBCASE("random 3x2 matches the brute-force oracle within 1e-10") {
    RandomSource rng(8);
    for (int iter = 0; iter < 100; ++iter) {
      Tensor q = Tensor::uniform({3, 2}, rng, -2, 2);
      Tensor k = Tensor::uniform({3, 2}, rng, -2, 2);
      CHECK(max_abs_diff(attention_weights(q, k).values(),
                         naive_attention(q.values(), k.values(), 3, 2)) < 1e-10);
    }
  }
  SUBCASE("rows sum to 1 within 1e-9") {
    RandomSource rng(9);
    Tensor f = attention_weights(Tensor::uniform({6, 4}, rng, -3, 3), Tensor::uniform({6, 4}, rng, -3, 3));
    for (int i = 0; i < 6; ++i) {
      double s = 0.0;
      for (int j = 0; j < 6; ++j) s += f.at({i, j});
      CHECK(std::fabs(s - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("attend") {
  SUBCASE("identity attention returns V") {
    RandomSource rng(10);
    Tensor v = Tensor::uniform({3, 4}, rng, -1, 1);
    std::vector<double> eye(9, 0.0);
    eye[0] = eye[4] = eye[8] = 1.0;
    CHECK(attend(Tensor::from({3, 3}, eye), v).values() == v.values());
  }
  SUBCASE("uniform attention returns column means") {
    RandomSource rng(11);
    Tensor v = Tensor::uniform({4, 3}, rng, -1, 1);
    Tensor f = Tensor::full({4, 4}, 0.25);
    Tensor b = attend(f, v);
    for (int c = 0; c < 3; ++c) {
      double m = 0.0;
      for (int i = 0; i < 4; ++i) m += v.at({i, c});
      m /= 4.0;
      for (int i = 0; i < 4; ++i) CHECK(b.at({i, c}) == doctest::Approx(m).epsilon(1e-12));
    }
  }
  SUBCASE("random instance matches the matmul oracle") {
    RandomSource rng(12);
    Tensor q = Tensor::uniform({5, 3}, rng, -1, 1);
    Tensor k = Tensor::uniform({5, 3}, rng, -1, 1);
    Tensor f = attention_weights(q, k);
    Tensor v = Tensor::uniform({5, 4}, rng, -1, 1);
    CHECK(max_abs_diff(attend(f, v).values(), naive_matmul(f.values(), v.values(), 5, 5, 4)) <
          1e-12);
  }
  SUBCASE("non-stochastic rows rejected") {
    Tensor f = Tensor::full({2, 2}, 0.7);
    CHECK_THROWS_AS(attend(f, Tensor::zeros({2, 3})), std::invalid_argument);
  }
  SUBCASE("convexity: outputs lie inside the per-column range of V") {
    RandomSource rng(13);
    for (int iter = 0; iter < 25; ++iter) {
      Tensor q = Tensor::uniform({6, 3}, rng, -2, 2);
      Tensor k = Tensor::uniform({6, 3}, rng, -2, 2);
      Tensor v = Tensor::uniform({6, 4}, rng, -1, 1);
      Tensor b = attend(attention_weights(q, k), v);
      for (int c = 0; c < 4; ++c) {
        double lo = 1e30, hi = -1e30;
        for (int i = 0; i < 6; ++i) {
          lo = std::min(lo, v.at({i, c}));
          hi = std::max(hi, v.at({i, c}));
        }
        for (int i = 0; i < 6; ++i) {
          CHECK(b.at({i, c}) >= lo - 1e-12);
          CHECK(b.at({i, c}) <= hi + 1e-12);
        }
      }
    }
  }
}

TEST_CASE("caa_forward") {
  SUBCASE("N=1 collapse: output is the W_v projection of the gated token") {
    RandomSource rng(14);
    CaaWeights w = caa_init(CaaConfig(3), rng);
    Tensor x = Tensor::uniform({3, 1, 1}, rng, -1, 1);
    Tensor y = caa_forward(x, w);
    CHECK(y.shape() == Shape{3, 1, 1});
    Tensor a_v = extract_context(x, w.context_gate);
    auto expect = naive_matmul(a_v.values(), w.w_v.values(), 1, 3, 3);
    for (int c = 0; c < 3; ++c) CHECK(y.at({c, 0, 0}) == doctest::Approx(expect[c]).epsilon(1e-12));
  }
  SUBCASE("zero input gives zero output") {
    RandomSource rng(15);
    CaaWeights w = caa_init(CaaConfig(4), rng);
    Tensor y = caa_forward(Tensor::zeros({4, 3, 2}), w);
    for (double v : y.values()) CHECK(v == 0.0);
  }
  SUBCASE("random 4x3x3 matches the composed four-step oracle within 1e-10") {
    RandomSource rng(16);
    CaaConfig cfg(4);  // d_a = 2
    CaaWeights w = caa_init(cfg, rng);
    Tensor x = Tensor::uniform({4, 3, 3}, rng, -1, 1);
    const int d = 4, n = 9;
    auto av = naive_extract(x.values(), w.context_gate.values(), d, n);
    auto q = naive_matmul(av, w.w_q.values(), n, d, cfg.d_a);
    auto k = naive_matmul(av, w.w_k.values(), n, d, cfg.d_a);
    auto v = naive_matmul(av, w.w_v.values(), n, d, d);
    auto f = naive_attention(q, k, n, cfg.d_a);
    auto b = naive_matmul(f, v, n, n, d);
    std::vector<double> expect(static_cast<size_t>(d) * n);
    for (int c = 0; c < d; ++c)
      for (int i = 0; i < n; ++i) expect[c * n + i] = b[i * d + c];
    CHECK(max_abs_diff(caa_forward(x, w).values(), expect) < 1e-10);
  }
  SUBCASE("shape preservation across the tested grid") {
    RandomSource rng(17);
    for (int d : {1, 2, 4, 8}) {
      CaaWeights w = caa_init(CaaConfig(d), rng);
      for (int h : {1, 2, 3, 5})
        for (int wd : {1, 2, 3, 5}) {
          Tensor x = Tensor::uniform({d, h, wd}, rng, -1, 1);
          CHECK(caa_forward(x, w).shape() == Shape{d, h, wd});
        }
    }
  }
  SUBCASE("permutation equivariance of the token pipeline") {
    RandomSource rng(18);
    CaaConfig cfg(3);
    CaaWeights w = caa_init(cfg, rng);
    Tensor a_v = Tensor::uniform({5, 3}, rng, -1, 1);
    const std::vector<int> perm = {3, 0, 4, 1, 2};
    std::vector<double> pv(15);
    for (int i = 0; i < 5; ++i)
      for (int c = 0; c < 3; ++c) pv[i * 3 + c] = a_v.at({perm[i], c});
    Tensor a_vp = Tensor::from({5, 3}, pv);

    auto out_of = [&](const Tensor& tokens) {
      auto [q, k, v] = project_qkv(tokens, w);
      return attend(attention_weights(q, k), v);
    };
    Tensor b = out_of(a_v);
    Tensor bp = out_of(a_vp);
    for (int i = 0; i < 5; ++i)
      for (int c = 0; c < 3; ++c)
        CHECK(bp.at({i, c}) == doctest::Approx(b.at({perm[i], c})).epsilon(1e-12));
  }
  SUBCASE("differentiable end to end") {
    RandomSource rng(19);
    CaaWeights w = caa_init(CaaConfig(3), rng);
    Tensor x = Tensor::uniform({3, 2, 2}, rng, -1, 1);
    RandomSource pr(20);
    Tensor c = Tensor::uniform({3, 2, 2}, pr, 0.1, 1.0);
    const double err =
        grad_check([&](const Tensor& t) { return sum(mul(caa_forward(t, w), c)); }, x, 1e-5);
    CHECK(err < 1e-4);
  }
}
