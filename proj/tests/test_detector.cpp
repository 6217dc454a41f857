#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "yolors/ablation.hpp"
#include "yolors/checkpoint.hpp"
#include "yolors/dataset.hpp"
#include "yolors/detector.hpp"

using namespace yolors;

namespace {

ModelConfig small_cfg() {
  ModelConfig cfg;
  cfg.input_size = 32;
  cfg.backbone_widths = {8, 12, 16};
  cfg.pyramid_channels = 8;
  cfg.classes = 2;
  cfg.batch_size = 2;
  cfg.epochs = 2;
  cfg.toggles.acmix = false;
  cfg.seed = 5;
  return cfg;
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double logit(double p) { return std::log(p / (1.0 - p)); }

// Raw head map encoding the given truths with saturated logits.
Tensor encode_raw(const std::vector<LabelRecord>& labels, const ModelConfig& cfg) {
  const int g = cfg.grid(), cells = g * g, k = cfg.head_channels();
  std::vector<double> v(static_cast<size_t>(k) * cells, -10.0);
  for (int c = 0; c < cells; ++c)
    for (int ch = 1 + cfg.classes; ch < k; ++ch) v[static_cast<size_t>(ch) * cells + c] = 0.0;
  HeadTargets t = assign_targets(labels, cfg);
  for (size_t i = 0; i < t.cells.size(); ++i) {
    const int cell = t.cells[i];
    v[static_cast<size_t>(cell)] = 10.0;  // objectness
    v[static_cast<size_t>((1 + t.clazz[i]) * cells + cell)] = 10.0;
    const double fx = (t.center_abs[i][0] - t.cell_offset[i][0] + 0.25) / 1.5;
    const double fy = (t.center_abs[i][1] - t.cell_offset[i][1] + 0.25) / 1.5;
    v[static_cast<size_t>((1 + cfg.classes) * cells + cell)] = logit(fx);
    v[static_cast<size_t>((1 + cfg.classes + 1) * cells + cell)] = logit(fy);
    v[static_cast<size_t>((1 + cfg.classes + 2) * cells + cell)] = t.log_size[i][0];
    v[static_cast<size_t>((1 + cfg.classes + 3) * cells + cell)] = t.log_size[i][1];
  }
  return Tensor::from({k, g, g}, std::move(v));
}

double iou_box(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  return inter / ((a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter);
}

// O(n^2) suppression oracle, rank order with stable ties.
std::vector<Detection> nms_oracle(const std::vector<Detection>& dets, double thr) {
  std::vector<int> order(dets.size());
  for (size_t i = 0; i < dets.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return dets[size_t(a)].score > dets[size_t(b)].score; });
  std::vector<char> dead(dets.size(), 0);
  std::vector<int> kept;
  for (size_t r = 0; r < order.size(); ++r) {
    const int i = order[r];
    if (dead[size_t(i)]) continue;
    kept.push_back(i);
    for (size_t q = r + 1; q < order.size(); ++q) {
      const int j = order[q];
      if (dead[size_t(j)]) continue;
      if (dets[size_t(i)].class_id != dets[size_t(j)].class_id ||
          dets[size_t(i)].image_id != dets[size_t(j)].image_id)
        continue;
      if (iou_box(dets[size_t(i)].box, dets[size_t(j)].box) > thr) dead[size_t(j)] = 1;
    }
  }
  std::sort(kept.begin(), kept.end());
  std::vector<Detection> out;
  for (int i : kept) out.push_back(dets[size_t(i)]);
  return out;
}

}  // namespace

TEST_CASE("backbone_forward") {
  SUBCASE("64x64 input gives pyramid sides 16, 8, 4") {
    ModelConfig cfg;
    cfg.seed = 1;
    Model m = build_model(cfg);
    RandomSource rng(2);
    FeaturePyramid p = backbone_forward(m, Tensor::uniform({3, 64, 64}, rng, 0, 1));
    REQUIRE(p.levels.size() == 3);
    CHECK(p.levels[0].data.shape() == Shape{16, 16, 16});
    CHECK(p.levels[1].data.shape() == Shape{16, 8, 8});
    CHECK(p.levels[2].data.shape() == Shape{16, 4, 4});
  }
  SUBCASE("zero image through the bias-free stack stays zero") {
    Model m = build_model(small_cfg());
    FeaturePyramid p = backbone_forward(m, Tensor::zeros({3, 32, 32}));
    for (const auto& lvl : p.levels)
      for (double v : lvl.data.values()) CHECK(v == 0.0);
  }
  SUBCASE("fixed seed gives a bit-identical pyramid") {
    auto run = [] {
      Model m = build_model(small_cfg());
      RandomSource rng(3);
      return backbone_forward(m, Tensor::uniform({3, 32, 32}, rng, 0, 1)).levels[0].data.values();
    };
    CHECK(run() == run());
  }
  SUBCASE("wrong input size rejected") {
    Model m = build_model(small_cfg());
    CHECK_THROWS_AS(backbone_forward(m, Tensor::zeros({3, 64, 64})), std::invalid_argument);
  }
}

TEST_CASE("head_forward") {
  SUBCASE("grid 8, 2 classes: 64 cells of 7 channels") {
    Model m = build_model(small_cfg());
    RandomSource rng(4);
    FeatureMap f3(Tensor::uniform({8, 8, 8}, rng, -1, 1), FeatureRole::f3);
    Tensor raw = head_forward(m, f3);
    CHECK(raw.shape() == Shape{7, 8, 8});
  }
  SUBCASE("zero features and zero head give objectness 0.5 everywhere") {
    Model m = build_model(small_cfg());
    for (auto& v : m.head_conv.values()) v = 0.0;
    FeatureMap f3(Tensor::zeros({8, 8, 8}), FeatureRole::f3);
    Tensor raw = head_forward(m, f3);
    for (int cell = 0; cell < 64; ++cell)
      CHECK(sig(raw.values()[static_cast<size_t>(cell)]) == 0.5);
  }
  SUBCASE("gradients reach every head parameter channel") {
    ModelConfig cfg = small_cfg();
    Model m = build_model(cfg);
    RandomSource rng(6);
    FeatureMap f3(Tensor::uniform({8, 8, 8}, rng, -1, 1), FeatureRole::f3);
    Tensor raw = head_forward(m, f3);
    std::vector<LabelRecord> labels = {{0, 0.42, 0.37, 0.2, 0.25}, {1, 0.7, 0.72, 0.15, 0.2}};
    HeadLoss hl = head_loss(raw, assign_targets(labels, cfg), cfg);
    backward(add(hl.lx, hl.lc));
    const int cells = 64;
    const auto& g = m.head_conv.grad();
    for (int ch = 0; ch < cfg.head_channels(); ++ch) {
      double acc = 0.0;
      for (int i = 0; i < 8; ++i)
        acc += std::fabs(g[static_cast<size_t>(ch) * 8 + i]);  // [K,C,1,1] slice
      INFO("channel ", ch);
      CHECK(acc > 0.0);
    }
    double bias_acc = 0.0;
    for (double v : m.head_bias.grad()) bias_acc += std::fabs(v);
    CHECK(bias_acc > 0.0);
    (void)cells;
  }
}

TEST_CASE("decode_predictions") {
  ModelConfig cfg = small_cfg();
  const int g = cfg.grid(), cells = g * g;
  SUBCASE("saturated-low objectness decodes to nothing") {
    Tensor raw = Tensor::full({cfg.head_channels(), g, g}, -100.0);
    CHECK(decode_predictions(raw, cfg, 0.25).empty());
  }
  SUBCASE("single hot cell with zero offsets sits at the cell center") {
    Tensor raw = Tensor::full({cfg.head_channels(), g, g}, -10.0);
    const int cell = 3 * g + 2;  // grid (x=2, y=3)
    raw.values()[static_cast<size_t>(cell)] = 10.0;
    raw.values()[static_cast<size_t>(cells + cell)] = 10.0;  // class 0
    for (int ch = 1 + cfg.classes; ch < cfg.head_channels(); ++ch)
      raw.values()[static_cast<size_t>(ch) * cells + cell] = 0.0;
    auto dets = decode_predictions(raw, cfg, 0.25);
    REQUIRE(dets.size() == 1);
    const double cell_px = static_cast<double>(cfg.input_size) / g;
    CHECK((dets[0].box.x1 + dets[0].box.x2) / 2 == doctest::Approx((2 + 0.5) * cell_px));
    CHECK((dets[0].box.y1 + dets[0].box.y2) / 2 == doctest::Approx((3 + 0.5) * cell_px));
    // zero offset raw maps to the exact cell center under the expanded range
    CHECK(dets[0].class_id == 0);
  }
  SUBCASE("threshold zero emits one detection per cell") {
    RandomSource rng(7);
    Tensor raw = Tensor::uniform({cfg.head_channels(), g, g}, rng, -2, 2);
    CHECK(decode_predictions(raw, cfg, 0.0).size() == static_cast<size_t>(cells));
  }
  SUBCASE("decode/encode round trip recovers centers and sizes") {
    RandomSource rng(8);
    for (int iter = 0; iter < 50; ++iter) {
      LabelRecord l;
      l.class_id = rng.uniform_int(0, 1);
      l.w = rng.uniform(0.1, 0.4);
      l.h = rng.uniform(0.1, 0.4);
      l.cx = rng.uniform(l.w / 2, 1 - l.w / 2);
      l.cy = rng.uniform(l.h / 2, 1 - l.h / 2);
      Tensor raw = encode_raw({l}, cfg);
      auto dets = decode_predictions(raw, cfg, 0.25);
      REQUIRE(dets.size() == 1);
      const double s = cfg.input_size;
      const double cell_px = s / g;
      const double cx = (dets[0].box.x1 + dets[0].box.x2) / 2;
      const double cy = (dets[0].box.y1 + dets[0].box.y2) / 2;
      CHECK(std::fabs(cx - l.cx * s) <= cell_px / 2 + 1e-9);
      CHECK(std::fabs(cy - l.cy * s) <= cell_px / 2 + 1e-9);
      const double w = dets[0].box.x2 - dets[0].box.x1;
      const double h = dets[0].box.y2 - dets[0].box.y1;
      CHECK(w == doctest::Approx(l.w * s).epsilon(1e-6));
      CHECK(h == doctest::Approx(l.h * s).epsilon(1e-6));
      CHECK(dets[0].class_id == l.class_id);
    }
  }
}

TEST_CASE("nms") {
  SUBCASE("a single detection survives") {
    std::vector<Detection> dets = {{0, 0.8, {0, 0, 2, 2}, 0}};
    CHECK(nms(dets, 0.5).size() == 1);
  }
  SUBCASE("the higher of two identical boxes survives") {
    std::vector<Detection> dets = {{0, 0.9, {0, 0, 2, 2}, 0}, {0, 0.8, {0, 0, 2, 2}, 0}};
    auto kept = nms(dets, 0.5);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].score == 0.9);
  }
  SUBCASE("different classes never suppress each other") {
    std::vector<Detection> dets = {{0, 0.9, {0, 0, 2, 2}, 0}, {1, 0.8, {0, 0, 2, 2}, 0}};
    CHECK(nms(dets, 0.5).size() == 2);
  }
  SUBCASE("random instances match the brute-force oracle exactly") {
    RandomSource rng(9);
    for (int iter = 0; iter < 120; ++iter) {
      std::vector<Detection> dets;
      const int n = rng.uniform_int(0, iter % 3 == 0 ? 100 : 30);
      for (int i = 0; i < n; ++i) {
        Detection d;
        d.class_id = rng.uniform_int(0, 3);
        d.score = rng.uniform(0.05, 1.0);
        const double x1 = rng.uniform(0, 20), y1 = rng.uniform(0, 20);
        d.box = {x1, y1, x1 + rng.uniform(1, 8), y1 + rng.uniform(1, 8)};
        dets.push_back(d);
      }
      auto got = nms(dets, 0.5);
      auto want = nms_oracle(dets, 0.5);
      REQUIRE(got.size() == want.size());
      for (size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i].score == want[i].score);
        CHECK(got[i].box.x1 == want[i].box.x1);
      }
    }
  }
  SUBCASE("bad threshold rejected") {
    CHECK_THROWS_AS(nms({}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(nms({}, 1.0), std::invalid_argument);
  }
}

TEST_CASE("model_forward wiring") {
  ModelConfig cfg = small_cfg();
  Model m = build_model(cfg);
  RandomSource rng(10);
  ForwardState st = model_forward(m, Tensor::uniform({3, 32, 32}, rng, 0, 1));
  CHECK(st.f1_gan.levels.size() == 3);
  CHECK(st.f1_gan.levels[0].role == FeatureRole::f1_gan);
  CHECK(st.f3.role == FeatureRole::f3);
  CHECK(st.f3.data.shape() == Shape{8, 8, 8});
  CHECK(st.head_raw.shape() == Shape{7, 8, 8});
  CHECK(st.g_loss.value() > 0.0);
  CHECK(st.d_loss.value() > 0.0);

  SUBCASE("toggles change the graph, not the interfaces") {
    for (const auto& name : standard_variants()) {
      ModelConfig vcfg = cfg;
      vcfg.toggles = toggles_for_variant(name);
      Model vm = build_model(vcfg);
      RandomSource vr(11);
      ForwardState vst = model_forward(vm, Tensor::uniform({3, 32, 32}, vr, 0, 1));
      INFO(name);
      CHECK(vst.head_raw.shape() == Shape{7, 8, 8});
    }
  }
}

TEST_CASE("training") {
  SyntheticSpec spec;
  spec.image_size = 32;
  spec.train_count = 4;
  spec.val_count = 2;
  spec.objects_min = 1;
  spec.objects_max = 2;
  spec.object_min_px = 6;
  spec.object_max_px = 12;
  spec.seed = 21;
  InMemoryDataset data = generate_synthetic_memory(spec);

  SUBCASE("zero learning rate leaves every parameter bit-identical") {
    ModelConfig cfg = small_cfg();
    cfg.lr = 0.0;
    cfg.lr_final = 0.0;
    cfg.epochs = 1;
    Model m = build_model(cfg);
    std::map<std::string, std::vector<double>> before;
    for (const auto& [name, t] : m.parameters()) before[name] = t.values();
    train(m, data.train);
    for (const auto& [name, t] : m.parameters()) CHECK(t.values() == before[name]);
  }
  SUBCASE("one synthetic sample is overfit within 200 steps") {
    ModelConfig cfg = small_cfg();
    cfg.epochs = 200;
    cfg.batch_size = 1;
    cfg.lr = 0.03;
    cfg.lr_final = 0.0001;
    Model m = build_model(cfg);
    std::vector<AnnotatedImage> one = {data.train[0]};
    TrainResult r = train(m, one);
    REQUIRE(r.log.size() == 200);
    auto composite = [&](const TrainLogEntry& e) {
      return cfg.lambda_x * e.lx + cfg.lambda_c * e.lc + cfg.lambda_l1 * e.ll1;
    };
    const double first = composite(r.log.front());
    const double last = composite(r.log.back());
    CHECK(last < 0.10 * first);
    for (const auto& e : r.log) CHECK(std::isfinite(e.total));
  }
  SUBCASE("identical seeds give identical loss curves") {
    auto run = [&] {
      ModelConfig cfg = small_cfg();
      cfg.epochs = 2;
      Model m = build_model(cfg);
      return train(m, data.train).log;
    };
    auto a = run(), b = run();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].total == b[i].total);  // to all bits, hence 12 decimal places
      CHECK(a[i].lx == b[i].lx);
      CHECK(a[i].d_loss == b[i].d_loss);
    }
  }
  SUBCASE("generator step leaves the discriminator bit-unchanged and vice versa") {
    ModelConfig cfg = small_cfg();
    Model m = build_model(cfg);
    ForwardState st = model_forward(m, image_to_tensor(data.train[0].image));

    auto disc_before = m.disc.conv1.values();
    auto gen_before = m.backbone_convs[0].values();

    // discriminator update from d_loss
    backward(st.d_loss);
    auto dparams = m.discriminator_parameters();
    for (auto& [name, t] : dparams) {
      auto& v = t.values();
      const auto& g = t.grad();
      for (size_t i = 0; i < v.size(); ++i) v[i] -= 0.01 * g[i];
      t.zero_grad();
    }
    CHECK(m.backbone_convs[0].values() == gen_before);  // untouched by the d step
    CHECK(m.disc.conv1.values() != disc_before);

    // generator update from g_loss: gradients reach the discriminator tensors
    // but only generator values move
    auto disc_after_dstep = m.disc.conv1.values();
    ForwardState st2 = model_forward(m, image_to_tensor(data.train[0].image));
    backward(st2.g_loss);
    auto gparams = m.generator_parameters();
    for (auto& [name, t] : gparams) {
      auto& v = t.values();
      const auto& g = t.grad();
      for (size_t i = 0; i < v.size(); ++i) v[i] -= 0.01 * g[i];
      t.zero_grad();
    }
    CHECK(m.disc.conv1.values() == disc_after_dstep);
    CHECK(m.backbone_convs[0].values() != gen_before);
  }
  SUBCASE("checkpoint round trip preserves predictions exactly") {
    ModelConfig cfg = small_cfg();
    cfg.epochs = 1;
    Model m = build_model(cfg);
    train(m, data.train);
    auto params = m.parameters();
    save_checkpoint("/tmp/yolors_test_ckpt.bin", params);

    Model m2 = build_model(cfg);
    auto params2 = m2.parameters();
    load_checkpoint("/tmp/yolors_test_ckpt.bin", params2);
    EvalReport a = evaluate_model(m, data.val);
    EvalReport b = evaluate_model(m2, data.val);
    CHECK(a.maps.map50 == b.maps.map50);
    CHECK(a.precision == b.precision);
  }
}

TEST_CASE("ablation harness determinism") {
  SyntheticSpec spec;
  spec.image_size = 32;
  spec.train_count = 3;
  spec.val_count = 2;
  spec.object_min_px = 8;
  spec.object_max_px = 12;
  spec.seed = 4;
  InMemoryDataset data = generate_synthetic_memory(spec);
  ModelConfig base = small_cfg();
  base.epochs = 1;
  // a duplicated variant must produce identical rows
  AblationTable t = run_ablation_on(base, data, {"no-caa", "no-caa", "full"}, {5});
  REQUIRE(t.rows.size() == 3);
  CHECK_FALSE(t.rows[0].diverged);
  CHECK(t.rows[0].map50 == t.rows[1].map50);
  CHECK(t.rows[0].precision == t.rows[1].precision);
  CHECK(t.rows[0].f1 == t.rows[1].f1);
  CHECK(t.rows[0].flops == t.rows[1].flops);
  // the report carries all required columns
  const std::string md = t.to_markdown();
  for (const char* col : {"P", "R", "mAP@.5", "F1", "GFLOPs"}) CHECK(md.find(col) != std::string::npos);
  auto j = t.to_json();
  CHECK(j["rows"].size() == 3);
}

TEST_CASE("flop accounting") {
  ModelConfig cfg;  // default 64x64
  SUBCASE("counting rules") {
    // affine 2->3: 6 MACs = 12 FLOPs; 1x1 conv over a 4x4 map: 16 MACs
    CHECK(affine_macs(2, 3) == 6);
    CHECK(conv_macs(1, 1, 1, 4, 4) == 16);
    CHECK(conv_macs(3, 2, 3, 5, 5) == 3 * 2 * 9 * 25);
  }
  SUBCASE("totals are additive over modules") {
    FlopReport r = count_flops(cfg);
    long long total = 0;
    for (const auto& [name, macs] : r.module_macs) total += macs;
    CHECK(total == r.total_macs());
    CHECK(r.total_flops() == 2 * total);
  }
  SUBCASE("disabling any module strictly lowers the total") {
    FlopReport r = count_flops(cfg);
    const long long full = r.variant_flops.at("full");
    for (const auto& name : standard_variants()) {
      if (name == "full") continue;
      INFO(name);
      CHECK(r.variant_flops.at(name) < full);
    }
  }
  SUBCASE("the ablation ordering holds") {
    FlopReport r = count_flops(cfg);
    CHECK(r.variant_flops.at("full") > r.variant_flops.at("no-bifpn"));
    CHECK(r.variant_flops.at("no-bifpn") > r.variant_flops.at("no-rfaconv"));
    CHECK(r.variant_flops.at("no-rfaconv") > r.variant_flops.at("no-self-attention"));
  }
}
