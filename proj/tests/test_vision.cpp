#include <gtest/gtest.h>

#include <random>

#include "bangacmm/vision.hpp"
#include "support.hpp"

using namespace bangacmm;

namespace {

Image random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(h, w);
  for (double& v : img.pixels) v = u(rng);
  return img;
}

Image constant_image(std::size_t h, std::size_t w, double v) {
  Image img(h, w);
  std::fill(img.pixels.begin(), img.pixels.end(), v);
  return img;
}

}  // namespace

TEST(Resize, ConstantStaysConstant) {
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{1, 1}, {7, 3}, {64, 40}}) {
    Image out = resize_bilinear(constant_image(13, 9, 0.5), h, w);
    for (double v : out.pixels) EXPECT_NEAR(v, 0.5, 1e-15);
  }
}

TEST(Resize, IdentityAtSameSize) {
  Image img = random_image(6, 5, 1);
  EXPECT_EQ(resize_bilinear(img, 6, 5).pixels, img.pixels);
}

TEST(Resize, CheckerboardCentre) {
  Image img(2, 2);
  for (std::size_t c = 0; c < 3; ++c) {
    img.at(0, 0, c) = 0;
    img.at(0, 1, c) = 1;
    img.at(1, 0, c) = 1;
    img.at(1, 1, c) = 0;
  }
  Image out = resize_bilinear(img, 1, 1);
  for (double v : out.pixels) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(Augment, DisabledIsIdentity) {
  Image img = random_image(8, 8, 2);
  std::mt19937_64 rng(1);
  EXPECT_EQ(augment(img, rng, AugmentPolicy::none()).pixels, img.pixels);
}

TEST(Augment, DoubleFlipIsOriginal) {
  Image img = random_image(5, 7, 3);
  EXPECT_EQ(hflip(hflip(img)).pixels, img.pixels);
  EXPECT_EQ(hflip(img).at(2, 0, 1), img.at(2, 6, 1));
}

TEST(Augment, BrightnessClamps) {
  Image img = constant_image(1, 1, 0.9);
  EXPECT_EQ(scale_brightness(img, 1.2).pixels[0], 1.0);
}

TEST(Augment, OutputStaysInRangeAndIsSeeded) {
  Image img = random_image(16, 16, 4);
  AugmentPolicy all;
  std::mt19937_64 a(9), b(9);
  Image x = augment(img, a, all), y = augment(img, b, all);
  EXPECT_EQ(x.pixels, y.pixels);
  for (double v : x.pixels) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Augment, ZeroRotationIsIdentity) {
  Image img = random_image(9, 9, 5);
  Image r = rotate(img, 0.0);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(r.pixels[i], img.pixels[i], 1e-12);
}

TEST(Filters, ConstantImageUnchanged) {
  Image img = constant_image(6, 6, 0.3);
  for (double v : gaussian_blur3(img).pixels) EXPECT_NEAR(v, 0.3, 1e-15);
  for (double v : filter_chain(img).pixels) EXPECT_NEAR(v, 0.3, 1e-15);
}

TEST(Filters, HotPixelBlurCentre) {
  Image img(5, 5);
  img.at(2, 2, 0) = 1.0;
  Image b = gaussian_blur3(img);
  EXPECT_DOUBLE_EQ(b.at(2, 2, 0), 4.0 / 16.0);
  EXPECT_DOUBLE_EQ(b.at(2, 1, 0), 2.0 / 16.0);
  EXPECT_DOUBLE_EQ(b.at(1, 1, 0), 1.0 / 16.0);
  EXPECT_EQ(b.at(2, 2, 1), 0.0);
}

TEST(Filters, RepeatedChainStaysInUnitRange) {
  Image img = random_image(12, 12, 6);
  Image out = filter_chain(filter_chain(img));
  for (double v : out.pixels) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Normalize, MeanMapsToZeroAndRoundTrips) {
  const ChannelStats mean = {0.2, 0.4, 0.6}, sd = {0.5, 0.25, 2.0};
  Image img(1, 1);
  for (std::size_t c = 0; c < 3; ++c) img.at(0, 0, c) = mean[c];
  const Tensor z = normalize_stats(img, mean, sd);
  for (double v : z.data()) EXPECT_EQ(v, 0.0);

  Image r = random_image(4, 3, 7);
  Image back = denormalize(normalize_stats(r, mean, sd), mean, sd);
  for (std::size_t i = 0; i < r.pixels.size(); ++i) EXPECT_NEAR(back.pixels[i], r.pixels[i], 1e-12);
}

TEST(Normalize, UnitStatsIsLayoutConversion) {
  Image r = random_image(2, 3, 8);
  Tensor t = normalize_stats(r, {0, 0, 0}, {1, 1, 1});
  EXPECT_EQ(t.shape(), (Shape{3, 2, 3}));
  EXPECT_EQ(t[1 * 6 + 1 * 3 + 2], r.at(1, 2, 1));
  EXPECT_THROW(normalize_stats(r, {0, 0, 0}, {1, 0, 1}), ParameterError);
}

TEST(Pipeline, TraceOrderTrainAndEval) {
  Image img = random_image(20, 20, 9);
  PreprocessConfig cfg;
  cfg.image_size = 16;
  std::mt19937_64 rng(1);
  PipelineTrace train, eval;
  Tensor t = preprocess(img, cfg, true, rng, "x", &train);
  preprocess(img, cfg, false, rng, "x", &eval);
  EXPECT_EQ(train.lines, (std::vector<std::string>{"STAGE resize x", "STAGE augment x", "STAGE filter_chain x",
                                                   "STAGE normalize_stats x"}));
  EXPECT_EQ(eval.lines,
            (std::vector<std::string>{"STAGE resize x", "STAGE filter_chain x", "STAGE normalize_stats x"}));
  EXPECT_EQ(t.shape(), (Shape{3, 16, 16}));
}

TEST(Patchify, GridOrderAndLayout) {
  Tensor chw({3, 4, 4});
  for (std::size_t i = 0; i < chw.numel(); ++i) chw[i] = static_cast<double>(i);
  Tensor p = patchify(chw, 2);
  EXPECT_EQ(p.shape(), (Shape{4, 12}));
  // patch 1 = rows 0-1, cols 2-3; element (dy=1, dx=0, c=2)
  EXPECT_EQ(p.at(1, (1 * 2 + 0) * 3 + 2), chw[2 * 16 + 1 * 4 + 2]);
  EXPECT_THROW(patchify(chw, 3), DimensionError);
}

namespace {

VisionEncoderConfig small_vision(std::size_t layers, Pooling pooling, bool positions = true) {
  VisionEncoderConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.d_model = 8;
  c.n_layers = layers;
  c.n_heads = 2;
  c.d_ff = 16;
  c.pooling = pooling;
  c.use_positions = positions;
  return c;
}

}  // namespace

TEST(VisionEncoder, ZeroLayersPooledIsMeanOfEmbeddedPatches) {
  ParamStore store(1);
  VisionEncoder enc(store, small_vision(0, Pooling::global_average, false));
  Tensor img = testsupport::random_tensor({3, 8, 8}, 10, false);
  Tape tape(false);
  auto f = enc.encode(tape, img, false);
  Tensor w = store.get("vision.patch_proj.weight"), b = store.get("vision.patch_proj.bias");
  // mean of (W p + b) = W mean(p) + b
  Tensor patches = patchify(img, 4);
  for (std::size_t o = 0; o < 8; ++o) {
    double s = b[o];
    for (std::size_t k = 0; k < 48; ++k) {
      double m = 0;
      for (std::size_t r = 0; r < 4; ++r) m += patches.at(r, k);
      s += w.at(o, k) * m / 4.0;
    }
    EXPECT_NEAR(f.pooled[o], s, 1e-14);
  }
}

TEST(VisionEncoder, PatchPermutationInvariantWithoutPositions) {
  ParamStore store(2);
  VisionEncoder enc(store, small_vision(2, Pooling::global_average, false));
  Tensor p = testsupport::random_tensor({4, 48}, 11, false);
  Tensor q({4, 48});
  const std::size_t order[4] = {2, 0, 3, 1};
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t k = 0; k < 48; ++k) q.at(r, k) = p.at(order[r], k);
  Tape tape(false);
  auto fa = enc.encode_patches(tape, p, false), fb = enc.encode_patches(tape, q, false);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(fa.pooled[i], fb.pooled[i], 1e-12);
}

TEST(VisionEncoder, OnePixelChangesShallowFeatures) {
  ParamStore store(3);
  VisionEncoder enc(store, small_vision(1, Pooling::cls_token));
  Tensor a = testsupport::random_tensor({3, 8, 8}, 12, false);
  Tensor b = a.clone();
  b[17] += 0.5;
  Tape tape(false);
  auto fa = enc.encode(tape, a, false), fb = enc.encode(tape, b, false);
  bool differs = false;
  for (std::size_t i = 0; i < 8; ++i) differs |= fa.shallow[i] != fb.shallow[i];
  EXPECT_TRUE(differs);
}

TEST(VisionEncoder, ParamCountAndShapeCheck) {
  for (auto pooling : {Pooling::cls_token, Pooling::global_average}) {
    ParamStore store(4);
    VisionEncoder enc(store, small_vision(2, pooling));
    EXPECT_EQ(store.count(), VisionEncoder::param_count(small_vision(2, pooling)));
    Tape tape(false);
    EXPECT_THROW(enc.encode(tape, Tensor({3, 4, 4}), false), DimensionError);
  }
  EXPECT_THROW(parse_pooling("max"), ConfigError);
}

TEST(Ppm, RoundTripQuantized) {
  Image img = random_image(3, 4, 13);
  for (double& v : img.pixels) v = std::round(v * 255.0) / 255.0;
  std::stringstream ss;
  write_ppm(ss, img);
  Image back = read_ppm(ss);
  EXPECT_EQ(back.pixels, img.pixels);
}

TEST(Ppm, RejectsGarbage) {
  std::stringstream ss("P3\n1 1\n255\n0 0 0\n");
  EXPECT_ANY_THROW(read_ppm(ss));
}
