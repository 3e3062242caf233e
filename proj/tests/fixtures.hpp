#pragma once

// In-memory synthetic datasets and a small model config shared by the
// training and acceptance tests.

#include "bangacmm/commands.hpp"

namespace testsupport {

inline bangacmm::ModelConfig desk_model(bangacmm::Strategy s, std::size_t width = 16) {
  using namespace bangacmm;
  ModelConfig c;
  c.modality = Modality::both;
  c.text.d_model = width;
  c.text.n_layers = 1;
  c.text.n_heads = 2;
  c.text.d_ff = 2 * width;
  c.text.max_len = 16;
  c.vision.image_size = 16;
  c.vision.patch_size = 4;
  c.vision.d_model = width;
  c.vision.n_layers = 1;
  c.vision.n_heads = 2;
  c.vision.d_ff = 2 * width;
  c.fusion.strategy = s;
  c.fusion.d_fuse = width;
  c.preprocess.augment = AugmentPolicy::none();
  c.preprocess.mean = {0.5, 0.5, 0.5};
  c.preprocess.stdev = {0.5, 0.5, 0.5};
  return c;
}

inline bangacmm::Dataset to_dataset(const std::vector<bangacmm::SynthSample>& data, const bangacmm::ModelConfig& cfg,
                                    const bangacmm::Vocabulary& vocab) {
  using namespace bangacmm;
  Dataset d;
  std::mt19937_64 unused(0);
  for (const auto& s : data) {
    Example e;
    e.id = s.sample.id;
    e.label = static_cast<int>(s.sample.label);
    e.ids = tokenize(normalize_text(s.sample.text), vocab, cfg.text.max_len).ids;
    e.raw = s.image;
    e.patches = prepare_patches(s.image, cfg, false, unused, e.id, nullptr);
    d.examples.push_back(std::move(e));
  }
  return d;
}

struct SmallSet {
  bangacmm::Vocabulary vocab;
  bangacmm::ModelConfig model;
  bangacmm::Dataset data;
};

// n_per_class samples per class from a 16x16 planted-signal spec.
inline SmallSet small_set(std::size_t n_per_class, bangacmm::Strategy s, std::uint64_t seed = 5) {
  using namespace bangacmm;
  SynthSpec spec;
  spec.n_per_class = n_per_class;
  spec.image_size = 16;
  spec.seed = seed;
  const auto data = gen_synthetic(spec);
  std::vector<Sample> samples;
  for (const auto& d : data) samples.push_back(d.sample);
  SmallSet out;
  out.vocab = vocab_from(samples, 1000);
  out.model = desk_model(s);
  out.model.text.vocab_size = out.vocab.size();
  out.model.finalize();
  out.data = to_dataset(data, out.model, out.vocab);
  return out;
}

}  // namespace testsupport
