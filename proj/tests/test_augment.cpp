#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "yolors/augment.hpp"
#include "yolors/dataset.hpp"

using namespace yolors;

namespace {

AnnotatedImage flat_image(int size, uint8_t value, std::vector<LabelRecord> labels,
                          const std::string& id = "img") {
  AnnotatedImage ai;
  ai.id = id;
  ai.image.w = ai.image.h = size;
  ai.image.rgb.assign(static_cast<size_t>(size) * size * 3, value);
  ai.labels = std::move(labels);
  return ai;
}

LabelRecord box(int cls, double cx, double cy, double w, double h) {
  LabelRecord l;
  l.class_id = cls;
  l.cx = cx;
  l.cy = cy;
  l.w = w;
  l.h = h;
  return l;
}

std::map<int, long> count_classes(const std::vector<AnnotatedImage>& set) {
  std::map<int, long> c;
  for (const auto& img : set)
    for (const auto& l : img.labels) ++c[l.class_id];
  return c;
}

}  // namespace

TEST_CASE("compute_class_frequencies") {
  SUBCASE("balanced counts give unit frequencies") {
    std::vector<AnnotatedImage> set;
    for (int i = 0; i < 10; ++i)
      set.push_back(flat_image(32, 100, {box(0, 0.5, 0.5, 0.2, 0.2), box(1, 0.2, 0.2, 0.1, 0.1)}));
    auto t = compute_class_frequencies(set);
    CHECK(t.freq_of(0) == 1.0);
    CHECK(t.freq_of(1) == 1.0);
    CHECK_FALSE(t.has_minority());
  }
  SUBCASE("count ratio 100:25 gives frequency 0.25") {
    std::vector<AnnotatedImage> set;
    for (int i = 0; i < 100; ++i) {
      std::vector<LabelRecord> labels = {box(0, 0.5, 0.5, 0.2, 0.2)};
      if (i < 25) labels.push_back(box(1, 0.2, 0.2, 0.1, 0.1));
      set.push_back(flat_image(32, 100, labels));
    }
    auto t = compute_class_frequencies(set);
    CHECK(t.freq_of(0) == 1.0);
    CHECK(t.freq_of(1) == 0.25);
    CHECK(t.has_minority());
  }
  SUBCASE("single class set") {
    std::vector<AnnotatedImage> set = {flat_image(32, 100, {box(3, 0.5, 0.5, 0.2, 0.2)})};
    CHECK(compute_class_frequencies(set).freq_of(3) == 1.0);
  }
  SUBCASE("zero instances rejected") {
    std::vector<AnnotatedImage> set = {flat_image(32, 100, {})};
    CHECK_THROWS_AS(compute_class_frequencies(set), std::invalid_argument);
  }
}

TEST_CASE("contrast_adjust") {
  std::vector<AnnotatedImage> base = {
      flat_image(16, 100, {box(0, 0.5, 0.5, 0.5, 0.5)}),
      flat_image(16, 100, {box(0, 0.5, 0.5, 0.5, 0.5)}),
      flat_image(16, 100, {box(0, 0.5, 0.5, 0.5, 0.5)}),
      flat_image(16, 100, {box(1, 0.5, 0.5, 0.5, 0.5)}),
  };
  SUBCASE("balanced classes leave the image unchanged") {
    std::vector<AnnotatedImage> balanced = {
        flat_image(16, 77, {box(0, 0.5, 0.5, 0.5, 0.5), box(1, 0.2, 0.2, 0.1, 0.1)})};
    auto t = compute_class_frequencies(balanced);
    CHECK(contrast_adjust(balanced[0], t, 0.8).image.rgb == balanced[0].image.rgb);
  }
  SUBCASE("zero strength is the identity") {
    auto t = compute_class_frequencies(base);
    CHECK(contrast_adjust(base[3], t, 0.0).image.rgb == base[3].image.rgb);
  }
  SUBCASE("frequency 0.25 at strength 0.8 maps 178 to 208") {
    // build counts 100:25 so f_min = 0.25
    std::vector<AnnotatedImage> set;
    for (int i = 0; i < 100; ++i) {
      std::vector<LabelRecord> labels = {box(0, 0.5, 0.5, 0.2, 0.2)};
      if (i < 25) labels.push_back(box(1, 0.2, 0.2, 0.1, 0.1));
      set.push_back(flat_image(8, 178, labels));
    }
    auto t = compute_class_frequencies(set);
    AnnotatedImage img = flat_image(8, 178, {box(1, 0.5, 0.5, 0.2, 0.2)});
    AnnotatedImage out = contrast_adjust(img, t, 0.8);
    for (auto v : out.image.rgb) CHECK(static_cast<int>(v) == 208);  // 128 + 1.6 * 50
    CHECK(out.labels == img.labels);
  }
}

TEST_CASE("mix_samples") {
  std::vector<AnnotatedImage> world;
  for (int i = 0; i < 10; ++i) world.push_back(flat_image(32, 60, {box(0, 0.5, 0.5, 0.3, 0.3)}));
  world.push_back(flat_image(32, 200, {box(1, 0.5, 0.5, 0.25, 0.25)}, "donor"));
  auto table = compute_class_frequencies(world);

  SUBCASE("a donor without minority objects is rejected") {
    RandomSource rng(1);
    CHECK_THROWS_AS(mix_samples(world[0], world[1], table, rng, 1.0), std::invalid_argument);
  }
  SUBCASE("pasting adds exactly the minority labels to an empty recipient") {
    RandomSource rng(2);
    AnnotatedImage recipient = flat_image(32, 60, {}, "rec");
    MixRecipe recipe;
    AnnotatedImage out = mix_samples(world.back(), recipient, table, rng, 1.0, &recipe);
    REQUIRE(out.labels.size() == 1);
    CHECK(out.labels[0].class_id == 1);
    CHECK(recipe.pasted.size() == 1);
    CHECK(recipe.warnings.empty());
    CHECK(out.labels[0].w == doctest::Approx(0.25).epsilon(0.05));
  }
  SUBCASE("beta = 1 keeps recipient pixels; beta = 0 copies the donor crop") {
    AnnotatedImage recipient = flat_image(32, 60, {}, "rec");
    const double one = 1.0, zero = 0.0;
    RandomSource rng(3);
    AnnotatedImage keep = mix_samples(world.back(), recipient, table, rng, 1.0, nullptr, &one);
    CHECK(keep.image.rgb == recipient.image.rgb);  // blended with beta=1: unchanged pixels
    REQUIRE(keep.labels.size() == 1);              // but the label is still planted
    RandomSource rng2(3);
    AnnotatedImage copy = mix_samples(world.back(), recipient, table, rng2, 1.0, nullptr, &zero);
    long changed = 0;
    for (size_t i = 0; i < copy.image.rgb.size(); ++i)
      if (copy.image.rgb[i] != recipient.image.rgb[i]) {
        ++changed;
        CHECK(copy.image.rgb[i] == 200);
      }
    CHECK(changed > 0);
  }
  SUBCASE("a fully blocked recipient skips the paste with a warning") {
    AnnotatedImage recipient = flat_image(32, 60, {box(0, 0.5, 0.5, 1.0, 1.0)}, "rec");
    RandomSource rng(4);
    MixRecipe recipe;
    AnnotatedImage out = mix_samples(world.back(), recipient, table, rng, 1.0, &recipe);
    CHECK(out.labels.size() == 1);  // only the blocking box
    CHECK(recipe.pasted.empty());
    REQUIRE(recipe.warnings.size() == 1);
    CHECK(out.image.rgb == recipient.image.rgb);
  }
  SUBCASE("fixed seed gives identical output labels") {
    AnnotatedImage recipient = flat_image(32, 60, {box(0, 0.2, 0.2, 0.2, 0.2)}, "rec");
    auto run = [&](uint64_t seed) {
      RandomSource rng(seed);
      return mix_samples(world.back(), recipient, table, rng, 1.0).labels;
    };
    CHECK(run(77) == run(77));
  }
}

TEST_CASE("geometric_augment") {
  RandomSource seeded(5);
  AnnotatedImage img = flat_image(32, 0, {box(0, 0.2, 0.4, 0.1, 0.2)});
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      for (int c = 0; c < 3; ++c)
        img.image.at(y, x, c) = static_cast<uint8_t>((x * 7 + y * 13 + c * 3) % 251);

  SUBCASE("hflip is an involution on pixels and labels") {
    RandomSource rng(6);
    AnnotatedImage once = geometric_augment(img, rng, {GeomOp::hflip});
    CHECK(once.labels[0].cx == doctest::Approx(0.8).epsilon(1e-12));
    AnnotatedImage twice = geometric_augment(once, rng, {GeomOp::hflip});
    CHECK(twice.image.rgb == img.image.rgb);
    CHECK(twice.labels[0].cx == doctest::Approx(0.2).epsilon(1e-12));
  }
  SUBCASE("vflip is an involution") {
    RandomSource rng(7);
    AnnotatedImage twice =
        geometric_augment(geometric_augment(img, rng, {GeomOp::vflip}), rng, {GeomOp::vflip});
    CHECK(twice.image.rgb == img.image.rgb);
    CHECK(twice.labels == img.labels);
  }
  SUBCASE("rotate90 swaps the centered box sides and four turns restore it") {
    AnnotatedImage centered = flat_image(32, 50, {box(1, 0.5, 0.5, 0.25, 0.125)});
    RandomSource rng(8);
    AnnotatedImage once = geometric_augment(centered, rng, {GeomOp::rotate90});
    CHECK(once.labels[0].cx == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(once.labels[0].cy == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(once.labels[0].w == doctest::Approx(0.125).epsilon(1e-12));
    CHECK(once.labels[0].h == doctest::Approx(0.25).epsilon(1e-12));
    AnnotatedImage four = geometric_augment(
        centered, rng, {GeomOp::rotate90, GeomOp::rotate90, GeomOp::rotate90, GeomOp::rotate90});
    CHECK(four.image.rgb == centered.image.rgb);
  }
  SUBCASE("crop keeps every surviving box inside the unit square") {
    RandomSource rng(9);
    for (int iter = 0; iter < 30; ++iter) {
      AnnotatedImage out = geometric_augment(img, rng, {GeomOp::crop});
      for (const auto& l : out.labels) {
        CHECK(l.w > 0);
        CHECK(l.cx - l.w / 2 >= -1e-9);
        CHECK(l.cx + l.w / 2 <= 1 + 1e-9);
      }
    }
  }
  SUBCASE("scale keeps labels consistent with the mapping") {
    RandomSource rng(10);
    for (int iter = 0; iter < 30; ++iter) {
      AnnotatedImage out = geometric_augment(img, rng, {GeomOp::scale});
      for (const auto& l : out.labels) {
        CHECK(l.cy - l.h / 2 >= -1e-9);
        CHECK(l.cy + l.h / 2 <= 1 + 1e-9);
      }
    }
  }
}

TEST_CASE("build_augmented_set") {
  // counts 100:10, the spec's counting example
  std::vector<AnnotatedImage> set;
  RandomSource mk(11);
  for (int i = 0; i < 50; ++i) {
    std::vector<LabelRecord> labels = {box(0, mk.uniform(0.2, 0.8), mk.uniform(0.2, 0.8), 0.15, 0.15),
                                       box(0, mk.uniform(0.2, 0.8), mk.uniform(0.2, 0.8), 0.12, 0.12)};
    if (i < 10) labels.push_back(box(1, mk.uniform(0.2, 0.8), mk.uniform(0.2, 0.8), 0.1, 0.1));
    set.push_back(flat_image(48, 90, labels, "s" + std::to_string(i)));
  }
  auto table = compute_class_frequencies(set);
  REQUIRE(table.counts.at(0) == 100);
  REQUIRE(table.counts.at(1) == 10);

  SUBCASE("identity configuration returns the input set") {
    AugmentConfig cfg;
    cfg.multiplier = 1;
    cfg.strength = 0.0;
    RandomSource rng(12);
    AugmentResult r = build_augmented_set(set, table, cfg, rng);
    REQUIRE(r.images.size() == set.size());
    for (size_t i = 0; i < set.size(); ++i) {
      CHECK(r.images[i].image.rgb == set[i].image.rgb);
      CHECK(r.images[i].labels == set[i].labels);
    }
  }
  SUBCASE("multiplier 2 strictly raises the minority share") {
    AugmentConfig cfg;
    cfg.multiplier = 2;
    RandomSource rng(13);
    AugmentResult r = build_augmented_set(set, table, cfg, rng);
    CHECK(r.images.size() == 2 * set.size());
    auto before = count_classes(set);
    auto after = count_classes(r.images);
    const double share_before = double(before[1]) / double(before[0] + before[1]);
    const double share_after = double(after[1]) / double(after[0] + after[1]);
    CHECK(share_after > share_before);  // counting oracle over generated labels
    // absolute counts never decrease
    CHECK(after[0] >= before[0]);
    CHECK(after[1] >= before[1]);
  }
  SUBCASE("every output label is a valid box") {
    AugmentConfig cfg;
    cfg.multiplier = 3;
    cfg.geometric = {GeomOp::hflip, GeomOp::crop};
    RandomSource rng(14);
    AugmentResult r = build_augmented_set(set, table, cfg, rng);
    for (const auto& img : r.images)
      for (const auto& l : img.labels) {
        CHECK(l.w > 0);
        CHECK(l.h > 0);
        CHECK(l.cx - l.w / 2 >= -1e-9);
        CHECK(l.cx + l.w / 2 <= 1 + 1e-9);
        CHECK(l.cy - l.h / 2 >= -1e-9);
        CHECK(l.cy + l.h / 2 <= 1 + 1e-9);
      }
  }
  SUBCASE("fixed seed reproduces the manifest") {
    AugmentConfig cfg;
    cfg.multiplier = 2;
    auto run = [&] {
      RandomSource rng(15);
      return build_augmented_set(set, table, cfg, rng).manifest.dump();
    };
    CHECK(run() == run());
  }
}
