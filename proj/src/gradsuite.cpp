#include "yolors/gradsuite.hpp"

#include "yolors/caa.hpp"
#include "yolors/rfafpn.hpp"
#include "yolors/tensor.hpp"

namespace yolors {

namespace {

Tensor projection(const Shape& s, uint64_t seed) {
  RandomSource r(seed);
  return Tensor::uniform(s, r, 0.1, 1.0);
}

}  // namespace

std::vector<GradCheckEntry> gradient_suite() {
  std::vector<GradCheckEntry> out;
  RandomSource rng(0xC0FFEE);
  auto run = [&out](const std::string& name, const std::function<Tensor(const Tensor&)>& f,
                    const Tensor& x) {
    out.push_back({name, grad_check(f, x, 1e-5)});
  };

  // --- primitive operations -------------------------------------------------
  {
    Tensor x = Tensor::uniform({4, 5}, rng, -1, 1);
    Tensor b = Tensor::uniform({5, 3}, rng, -1, 1);
    Tensor c = projection({4, 3}, 1);
    run("matmul/lhs", [&](const Tensor& t) { return sum(mul(matmul(t, b), c)); }, x);
    Tensor a2 = Tensor::uniform({4, 5}, rng, -1, 1);
    run("matmul/rhs", [&](const Tensor& t) { return sum(mul(matmul(a2, t), c)); },
        Tensor::uniform({5, 3}, rng, -1, 1));
  }
  {
    Tensor x = Tensor::uniform({2, 6, 6}, rng, -1, 1);
    Tensor k = Tensor::uniform({3, 2, 3, 3}, rng, -1, 1);
    Tensor c = projection({3, 6, 6}, 2);
    run("conv2d/input", [&](const Tensor& t) { return sum(mul(conv2d(t, k, 1, 1), c)); }, x);
    Tensor x5 = Tensor::uniform({2, 5, 5}, rng, -1, 1);
    Tensor c2 = projection({3, 3, 3}, 3);
    run("conv2d/kernels", [&](const Tensor& t) { return sum(mul(conv2d(x5, t, 2, 1), c2)); },
        Tensor::uniform({3, 2, 3, 3}, rng, -1, 1));
  }
  {
    Tensor x = Tensor::uniform({4, 6}, rng, -1, 1);
    Tensor c = projection({4, 6}, 4);
    run("softmax", [&](const Tensor& t) { return sum(mul(softmax(t, 1), c)); }, x);
  }
  {
    Tensor x = Tensor::uniform({3, 5, 5}, rng, -1, 1);
    Tensor c = projection({3}, 5);
    run("global_avg_pool", [&](const Tensor& t) { return sum(mul(global_avg_pool(t), c)); }, x);
  }
  {
    Tensor x = Tensor::uniform({10}, rng, 0.2, 1.0);  // clear of the relu/abs kinks
    Tensor b = Tensor::uniform({10}, rng, 0.2, 1.0);
    Tensor c = projection({10}, 6);
    auto sc = [&c](const Tensor& y) { return sum(mul(y, c)); };
    run("elementwise/add", [&](const Tensor& t) { return sc(add(t, b)); }, x);
    run("elementwise/mul", [&](const Tensor& t) { return sc(mul(t, b)); }, x);
    run("elementwise/relu", [&](const Tensor& t) { return sc(relu(t)); }, x);
    run("leaky_relu", [&](const Tensor& t) { return sc(leaky_relu(t)); }, x);
    run("elementwise/sigmoid", [&](const Tensor& t) { return sc(sigmoid(t)); }, x);
    run("elementwise/abs", [&](const Tensor& t) { return sc(abs(t)); }, x);
    run("elementwise/scale", [&](const Tensor& t) { return sc(scale(t, -0.7)); }, x);
    run("divide", [&](const Tensor& t) { return sc(divide(t, b)); }, x);
    run("exp", [&](const Tensor& t) { return sc(exp(t)); }, x);
    run("log", [&](const Tensor& t) { return sc(log(t)); }, x);
    run("sqrt", [&](const Tensor& t) { return sc(sqrt_safe(t)); }, x);
  }
  {
    Tensor x = Tensor::uniform({2, 6, 6}, rng, -1, 1);
    Tensor c = projection({2, 3, 3}, 7);
    run("max_pool2x2", [&](const Tensor& t) { return sum(mul(max_pool2x2(t), c)); }, x);
    Tensor x2 = Tensor::uniform({2, 3, 3}, rng, -1, 1);
    Tensor c2 = projection({2, 6, 6}, 8);
    run("upsample_nearest", [&](const Tensor& t) { return sum(mul(upsample_nearest(t, 6, 6), c2)); },
        x2);
  }

  // --- composed module paths -------------------------------------------------
  {
    RandomSource wrng(11);
    CaaWeights w = caa_init(CaaConfig(4), wrng);
    Tensor x = Tensor::uniform({4, 3, 3}, rng, -1, 1);
    Tensor c = projection({4, 3, 3}, 9);
    run("caa_forward/input", [&](const Tensor& t) { return sum(mul(caa_forward(t, w), c)); }, x);
    run("caa_forward/w_q",
        [&](const Tensor& t) {
          CaaWeights ww = w;
          ww.w_q = t;
          return sum(mul(caa_forward(x, ww), c));
        },
        w.w_q.detach());
    run("caa_forward/gate",
        [&](const Tensor& t) {
          CaaWeights ww = w;
          ww.context_gate = t;
          return sum(mul(caa_forward(x, ww), c));
        },
        w.context_gate.detach());
  }
  {
    RandomSource wrng(12);
    RfaParams p = rfa_init(2, 2, wrng);
    Tensor x = Tensor::uniform({2, 5, 5}, rng, -1, 1);
    Tensor c = projection({2, 5, 5}, 10);
    run("rfaconv_forward/input",
        [&](const Tensor& t) {
          return sum(mul(rfaconv_forward(FeatureMap(t, FeatureRole::raw), p).data, c));
        },
        x);
    run("rfaconv_forward/kernel",
        [&](const Tensor& t) {
          RfaParams q = p;
          q.kernels[2] = t;
          return sum(mul(rfaconv_forward(FeatureMap(x, FeatureRole::raw), q).data, c));
        },
        p.kernels[2].detach());
  }
  {
    RandomSource wrng(13);
    BifpnParams params = bifpn_init(3, 2, wrng);
    FeaturePyramid pyr;
    pyr.levels.emplace_back(Tensor::uniform({2, 4, 4}, rng, -1, 1), FeatureRole::raw);
    pyr.levels.emplace_back(Tensor::uniform({2, 2, 2}, rng, -1, 1), FeatureRole::raw);
    pyr.levels.emplace_back(Tensor::uniform({2, 1, 1}, rng, -1, 1), FeatureRole::raw);
    Tensor c = projection({2, 4, 4}, 11);
    run("bifpn_fuse/level0",
        [&](const Tensor& t) {
          FeaturePyramid q = pyr;
          q.levels[0] = FeatureMap(t, FeatureRole::raw);
          return sum(mul(bifpn_fuse(q, params).levels[0].data, c));
        },
        pyr.levels[0].data.detach());
    run("bifpn_fuse/fusion_weights",
        [&](const Tensor& t) {
          BifpnParams q = params;
          q.fusion.node_weights[0] = t;
          return sum(mul(bifpn_fuse(pyr, q).levels[0].data, c));
        },
        Tensor::from({2}, {1.0, 0.8}));
  }
  {
    CellAssignment a;
    a.offsets = {{1, 2}, {0, 3}, {2, 2}};
    a.targets = {{1.6, 2.3}, {0.4, 3.5}, {2.2, 2.8}};
    a.coord_mask = {1, 1, 1};
    Tensor x = Tensor::uniform({3, 2}, rng, 0, 1);
    run("coordinate_loss",
        [&](const Tensor& t) {
          CellAssignment b = a;
          b.pred_rel = t;
          return coordinate_loss(b);
        },
        x);
  }
  {
    Tensor c = Tensor::uniform({6}, rng, 0.15, 0.85);
    std::vector<double> y = {1, 0, 0, 1, 1, 0};
    run("confidence_loss",
        [&](const Tensor& t) {
          CellAssignment b;
          b.conf = t;
          b.conf_target = y;
          return confidence_loss(b);
        },
        c);
  }
  {
    Tensor w = Tensor::uniform({6}, rng, 0.2, 1.2);
    run("sparsity_loss", [](const Tensor& t) { return sparsity_loss({t}); }, w);
  }
  {
    Tensor parts = Tensor::uniform({3}, rng, 0.1, 2.0);
    run("composite_loss",
        [](const Tensor& t) {
          Tensor lx = gather_flat(t, {0}, {1});
          Tensor lc = gather_flat(t, {1}, {1});
          Tensor ll1 = gather_flat(t, {2}, {1});
          return composite_loss(lx, lc, ll1, LossWeights{});
        },
        parts);
  }
  {
    RandomSource wrng(14);
    Discriminator d = discriminator_init(2, wrng);
    Tensor x = Tensor::uniform({2, 6, 6}, rng, -1, 1);
    run("discriminator_forward",
        [&](const Tensor& t) {
          return discriminator_forward(d, FeatureMap(t, FeatureRole::raw));
        },
        x);
  }
  return out;
}

}  // namespace yolors
